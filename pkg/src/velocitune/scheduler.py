"""Domain-weight update policies driven by periodic evaluation losses.

Every ``m`` training steps the scheduler receives fresh per-domain evaluation
losses and produces new sampling weights. Four policies are supported:

* ``velocitune`` -- multiplicative update by exp of the clamped learning
  velocity V = clamp((current - target) / (init - target), 0, 1), so slower
  domains (high V) gain relative mass and per-update ratios stay in [1, e].
* ``dbl`` -- multiplicative update by exp of the raw loss-to-target distance
  max(current - target, 0); distances are unnormalized, so domains with large
  loss gaps can dominate.
* ``no_target`` -- multiplicative update by exp(current / init); no target
  and no clamping, which lets saturated domains (ratio pinned near 1) absorb
  nearly all weight.
* ``static`` -- weights never change.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .core import LossVector, VelocityVector, WeightVector, normalize
from .errors import DegenerateDomainError, OrderingError, ProtocolError

POLICY_KINDS = ("velocitune", "dbl", "no_target", "static")

DEFAULT_UPDATE_INTERVAL = 150


@dataclass(frozen=True)
class Policy:
    """Weight-update policy selector plus its per-kind options.

    ``smoothing`` mixes the updated weights with the uniform distribution,
    w <- (1 - smoothing) * w + smoothing / k, after renormalization; the
    default of 0 is pure renormalization. ``static_weights`` optionally pins
    the static policy to an explicit mixture.
    """

    kind: str
    smoothing: float = 0.0
    static_weights: WeightVector | None = None

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"policy kind must be one of {POLICY_KINDS}, got {self.kind!r}")
        if not (0.0 <= self.smoothing < 1.0):
            raise ValueError(f"smoothing must lie in [0, 1), got {self.smoothing}")
        if self.static_weights is not None and self.kind != "static":
            raise ValueError("static_weights is only meaningful for the static policy")

    @property
    def needs_targets(self) -> bool:
        return self.kind in ("velocitune", "dbl")

    @property
    def needs_init_losses(self) -> bool:
        return self.kind in ("velocitune", "no_target")


@dataclass(frozen=True)
class SchedulerState:
    """Resumable scheduler core: current weights, loss bounds, step cursor.

    ``converged`` flags domains whose measured initial loss does not exceed
    the predicted target (the base model already meets the goal); their
    velocity is defined as 0 and they remain eligible for sampling.
    """

    policy: Policy
    weights: WeightVector
    step: int = 0
    update_interval: int = DEFAULT_UPDATE_INTERVAL
    init_losses: LossVector | None = None
    target_losses: LossVector | None = None
    converged: tuple[bool, ...] | None = None
    last_velocity: VelocityVector | None = None

    def __post_init__(self):
        if self.step < 0:
            raise ValueError(f"step must be >= 0, got {self.step}")
        if self.update_interval < 1:
            raise ValueError(f"update interval must be >= 1, got {self.update_interval}")
        k = len(self.weights)
        if self.policy.needs_init_losses and self.init_losses is None:
            raise ValueError(f"policy {self.policy.kind!r} requires init_losses")
        if self.policy.needs_targets and self.target_losses is None:
            raise ValueError(f"policy {self.policy.kind!r} requires target_losses")
        for name, vec in (("init_losses", self.init_losses), ("target_losses", self.target_losses)):
            if vec is not None and len(vec) != k:
                raise ValueError(f"{name} has {len(vec)} entries for {k} domains")
        if self.converged is None and self.init_losses is not None and self.target_losses is not None:
            flags = tuple(
                i <= t for i, t in zip(self.init_losses.values, self.target_losses.values)
            )
            object.__setattr__(self, "converged", flags)
        if self.converged is not None and len(self.converged) != k:
            raise ValueError(f"converged has {len(self.converged)} flags for {k} domains")


def compute_velocity(
    current: LossVector,
    init: LossVector,
    target: LossVector,
    converged: Sequence[bool] | None = None,
) -> VelocityVector:
    """Clamped normalized remaining progress per domain.

    V = clamp((current - target) / (init - target), 0, 1). Endpoints are
    exact: current == target gives 0 and current == init gives 1. Domains
    flagged converged (init <= target) get V = 0; an unflagged domain with
    init <= target raises DegenerateDomainError.
    """
    if not (len(current) == len(init) == len(target)):
        raise ValueError("current, init, and target must have equal length")
    if converged is not None and len(converged) != len(current):
        raise ValueError("converged flags must match the domain count")
    out = []
    for i, (cur, lo_init, lo_target) in enumerate(
        zip(current.values, init.values, target.values)
    ):
        if converged is not None and converged[i]:
            out.append(0.0)
            continue
        gap = lo_init - lo_target
        if gap <= 0.0:
            raise DegenerateDomainError(
                f"domain {i}: init loss {lo_init!r} <= target {lo_target!r} "
                "and not flagged converged"
            )
        v = (cur - lo_target) / gap
        out.append(min(1.0, max(0.0, v)))
    return VelocityVector(out)


def _exp_reweight(prev: WeightVector, exponents: np.ndarray) -> WeightVector:
    """w'_i proportional to w_i * exp(x_i), with max(x) subtracted for stability."""
    w = prev.to_numpy()
    shifted = exponents - exponents.max()
    raw = w * np.exp(shifted)
    return normalize(raw)


def _apply_smoothing(weights: WeightVector, smoothing: float) -> WeightVector:
    if smoothing == 0.0:
        return weights
    k = len(weights)
    return WeightVector((1.0 - smoothing) * v + smoothing / k for v in weights.values)


def update_weights_velocitune(prev: WeightVector, velocity: VelocityVector) -> WeightVector:
    """Multiplicative-weights step: w'_i proportional to w_i * exp(V_i).

    V in [0, 1] bounds every single-update weight ratio within [1/e, e] after
    normalization; equal velocities leave the weights unchanged and zero
    weights stay zero.
    """
    if len(prev) != len(velocity):
        raise ValueError("weights and velocity must have equal length")
    return _exp_reweight(prev, velocity.to_numpy())


def update_weights_dbl(
    prev: WeightVector, current: LossVector, target: LossVector
) -> WeightVector:
    """Distance-based step: w'_i proportional to w_i * exp(max(current-target, 0)).

    The exponent is the raw loss distance in nats, floored at zero; the
    maximum distance is subtracted before exponentiation (mathematically a
    no-op) so large gaps cannot overflow.
    """
    if not (len(prev) == len(current) == len(target)):
        raise ValueError("weights and losses must have equal length")
    dist = np.maximum(current.to_numpy() - target.to_numpy(), 0.0)
    return _exp_reweight(prev, dist)


def update_weights_no_target(
    prev: WeightVector, current: LossVector, init: LossVector
) -> WeightVector:
    """Target-free step: w'_i proportional to w_i * exp(current_i / init_i).

    No clamping is applied, so a saturated domain whose ratio stays near 1
    outgrows every domain whose ratio falls.
    """
    if not (len(prev) == len(current) == len(init)):
        raise ValueError("weights and losses must have equal length")
    init_arr = init.to_numpy()
    if np.any(init_arr <= 0.0):
        raise DegenerateDomainError("no_target update requires positive initial losses")
    ratio = current.to_numpy() / init_arr
    return _exp_reweight(prev, ratio)


def scheduler_step(
    state: SchedulerState, step: int, eval_losses: LossVector | None = None
) -> tuple[SchedulerState, WeightVector]:
    """Advance the scheduler to ``step``, updating weights when it is due.

    Steps must strictly increase across calls. ``eval_losses`` must be
    supplied exactly on update steps (step % update_interval == 0); providing
    or omitting them on the wrong step raises ProtocolError. Off-interval
    steps return the current weights unchanged.
    """
    if step <= state.step:
        raise OrderingError(f"step {step} is not greater than last seen step {state.step}")
    update_due = step % state.update_interval == 0
    if update_due and eval_losses is None:
        raise ProtocolError(f"step {step} is an update step; eval losses are required")
    if not update_due and eval_losses is not None:
        raise ProtocolError(f"step {step} is not an update step; eval losses are not accepted")
    if not update_due:
        return replace(state, step=step), state.weights

    assert eval_losses is not None
    if len(eval_losses) != len(state.weights):
        raise ProtocolError(
            f"got {len(eval_losses)} losses for {len(state.weights)} domains"
        )
    policy = state.policy
    velocity = state.last_velocity
    if policy.kind == "static":
        new_weights = state.weights
    elif policy.kind == "velocitune":
        velocity = compute_velocity(
            eval_losses, state.init_losses, state.target_losses, state.converged
        )
        new_weights = update_weights_velocitune(state.weights, velocity)
    elif policy.kind == "dbl":
        new_weights = update_weights_dbl(state.weights, eval_losses, state.target_losses)
    else:  # no_target
        new_weights = update_weights_no_target(state.weights, eval_losses, state.init_losses)
    if policy.kind != "static":
        new_weights = _apply_smoothing(new_weights, policy.smoothing)
    new_state = replace(state, step=step, weights=new_weights, last_velocity=velocity)
    return new_state, new_weights


def initial_scheduler_state(
    policy: Policy,
    weights: WeightVector,
    update_interval: int = DEFAULT_UPDATE_INTERVAL,
    init_losses: LossVector | None = None,
    target_losses: LossVector | None = None,
) -> SchedulerState:
    """Build the step-0 state, pinning static weights when the policy carries them."""
    if policy.kind == "static" and policy.static_weights is not None:
        weights = policy.static_weights
    return SchedulerState(
        policy=policy,
        weights=weights,
        step=0,
        update_interval=update_interval,
        init_losses=init_losses,
        target_losses=target_losses if policy.needs_targets else None,
    )
