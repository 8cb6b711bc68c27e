"""Parametric training-dynamics simulator and the end-to-end pipeline.

The simulator stands in for actual continual pre-training at desk scale.
Per-domain evaluation loss follows the same functional family the scaling
module fits, extended with a pretraining-equivalent token offset and a
cross-domain transfer matrix:

    loss_i = E_i + B_i * (D0_i + sum_j transfer[i][j] * consumed_j)**(-beta_i)

A nonzero offset D0 models domains the base model has already partly learned
(saturating curves), and transfer != I lets tokens from one domain improve
another. Both create the mismatch between the true dynamics and the pure
power law used for target extrapolation that the weight policies must cope
with.

The pipeline mirrors the two-phase procedure: a static proxy run over a
subsample produces checkpoint series, the scaling law is fitted per domain
and extrapolated to the full token budget to obtain target losses, then the
velocity-guided (or baseline) run trains with periodic weight updates.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import DomainSet, LossVector, VelocityVector, WeightVector, default_weights, normalize
from .sampler import SamplerState, bitgen_state_from_jsonable, bitgen_state_to_jsonable
from .scaling import CheckpointSeries, FitOptions, ScalingFit, fit_data_scaling, predict_targets
from .scheduler import (
    Policy,
    SchedulerState,
    compute_velocity,
    initial_scheduler_state,
    scheduler_step,
)

TRAJECTORY_CSV_HEADER = ("step", "domain", "weight", "eval_loss", "velocity", "alloc_tokens")

# Seed-stream tags: proxy and main runs draw from disjoint child streams of
# the config seed.
_SEED_PROXY_SAMPLER = 0
_SEED_PROXY_NOISE = 1
_SEED_TRAIN_SAMPLER = 2
_SEED_TRAIN_NOISE = 3


def _child_seed(seed: int, tag: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), int(tag)])


@dataclass(frozen=True)
class DynamicsParams:
    """Generating parameters of the simulated per-domain learning curves."""

    E: tuple[float, ...]
    B: tuple[float, ...]
    beta: tuple[float, ...]
    D0: tuple[float, ...]
    transfer: tuple[tuple[float, ...], ...]
    noise_sigma: float = 0.0

    def __init__(
        self,
        E: Sequence[float],
        B: Sequence[float],
        beta: Sequence[float],
        D0: Sequence[float],
        transfer: Sequence[Sequence[float]] | None = None,
        noise_sigma: float = 0.0,
    ):
        e = tuple(float(x) for x in E)
        b = tuple(float(x) for x in B)
        bet = tuple(float(x) for x in beta)
        d0 = tuple(float(x) for x in D0)
        k = len(e)
        if not (len(b) == len(bet) == len(d0) == k):
            raise ValueError("E, B, beta, D0 must have equal length")
        if any(x < 0 for x in e):
            raise ValueError("floor losses E must be >= 0")
        if any(x <= 0 for x in b):
            raise ValueError("scale coefficients B must be > 0")
        if any(not (0 < x <= 2) for x in bet):
            raise ValueError("exponents beta must lie in (0, 2]")
        if any(x < 0 for x in d0):
            raise ValueError("token offsets D0 must be >= 0")
        if transfer is None:
            tr = tuple(tuple(1.0 if i == j else 0.0 for j in range(k)) for i in range(k))
        else:
            tr = tuple(tuple(float(x) for x in row) for row in transfer)
            if len(tr) != k or any(len(row) != k for row in tr):
                raise ValueError(f"transfer must be a {k}x{k} matrix")
            for i, row in enumerate(tr):
                if row[i] != 1.0:
                    raise ValueError(f"transfer diagonal must be 1, got {row[i]} at {i}")
                if any(not (0.0 <= x <= 1.0) for x in row):
                    raise ValueError("transfer entries must lie in [0, 1]")
        if noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        object.__setattr__(self, "E", e)
        object.__setattr__(self, "B", b)
        object.__setattr__(self, "beta", bet)
        object.__setattr__(self, "D0", d0)
        object.__setattr__(self, "transfer", tr)
        object.__setattr__(self, "noise_sigma", float(noise_sigma))

    def __len__(self) -> int:
        return len(self.E)

    def arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        return (
            np.array(self.E),
            np.array(self.B),
            np.array(self.beta),
            np.array(self.D0),
            np.array(self.transfer),
        )


class SimState:
    """Mutable stand-in for model parameters: per-domain tokens consumed."""

    def __init__(self, n_domains: int, noise_seed: int | np.random.SeedSequence = 0):
        self.consumed = np.zeros(n_domains, dtype=np.float64)
        self.step = 0
        self.noise_rng = np.random.Generator(np.random.Philox(noise_seed))

    def state_dict(self) -> dict:
        return {
            "consumed": [float(x) for x in self.consumed],
            "step": self.step,
            "noise_rng": bitgen_state_to_jsonable(self.noise_rng.bit_generator.state),
        }

    @classmethod
    def from_state_dict(cls, data: dict) -> "SimState":
        state = cls(len(data["consumed"]))
        state.consumed = np.array(data["consumed"], dtype=np.float64)
        state.step = int(data["step"])
        state.noise_rng.bit_generator.state = bitgen_state_from_jsonable(data["noise_rng"])
        return state


def sim_eval(params: DynamicsParams, state: SimState, noisy: bool = False) -> LossVector:
    """Per-domain evaluation losses at the current consumption.

    Noiseless mode is the exact closed form; noisy mode adds Gaussian noise
    with sd ``params.noise_sigma`` (clipped at zero, which at realistic sigma
    never triggers) and advances the state's noise RNG.
    """
    e, b, beta, d0, transfer = params.arrays()
    effective = d0 + transfer @ state.consumed
    with np.errstate(divide="ignore"):
        loss = e + b * effective ** (-beta)
    if noisy and params.noise_sigma > 0:
        loss = loss + state.noise_rng.normal(0.0, params.noise_sigma, size=len(params))
        loss = np.maximum(loss, 0.0)
    return LossVector(loss)


def sim_train_step(
    params: DynamicsParams, state: SimState, allocation: Sequence[float]
) -> SimState:
    """Consume one batch: per-domain tokens are added and the step advances."""
    alloc = np.asarray(allocation, dtype=np.float64)
    if alloc.shape != state.consumed.shape:
        raise ValueError(f"allocation length {alloc.shape} != domains {state.consumed.shape}")
    if np.any(alloc < 0):
        raise ValueError("allocation must be non-negative")
    state.consumed = state.consumed + alloc
    state.step += 1
    return state


@dataclass(frozen=True)
class TrajectoryRow:
    """State recorded at one evaluation step.

    ``weights`` are the post-update weights, ``eval_losses`` the (noisy)
    losses that drove the update, ``velocity`` the clamped velocities (only
    for the velocity-guided policy), and ``alloc_tokens`` the per-domain
    tokens allocated in the interval ending at this step.
    """

    step: int
    weights: WeightVector
    eval_losses: LossVector
    velocity: VelocityVector | None
    alloc_tokens: tuple[int, ...]


@dataclass(frozen=True)
class Trajectory:
    domains: tuple[str, ...]
    rows: tuple[TrajectoryRow, ...]

    def __len__(self) -> int:
        return len(self.rows)


@dataclass
class ResumePoint:
    """Live state captured at an evaluation boundary; serialized by checkpoints."""

    scheduler: SchedulerState
    sampler: SamplerState
    sim: SimState
    step: int


@dataclass
class RunResult:
    """Everything a finished (or checkpoint-stopped) training run produced."""

    trajectory: Trajectory
    init_losses: LossVector
    target_losses: LossVector | None
    final_losses: LossVector | None
    consumed_tokens: tuple[int, ...]
    total_steps: int
    finished: bool
    resume_point: ResumePoint | None = None


def run_proxy_phase(
    params: DynamicsParams,
    domains: DomainSet,
    proxy_fraction: float,
    batch_tokens: int,
    eval_interval: int,
    *,
    seed: int = 0,
    sequence_length: int = 4096,
    weights: WeightVector | None = None,
    total_tokens: int | None = None,
    deterministic_allocation: bool = False,
    token_axis: str = "total",
) -> dict[str, CheckpointSeries]:
    """Static-weight proxy run over a subsample, recording checkpoint losses.

    Trains for ``proxy_fraction`` of the full token budget under fixed
    weights (token-ratio by default) and records (tokens, noisy loss) per
    domain every ``eval_interval`` steps plus at the final step. The token
    coordinate is cumulative total tokens by default; ``token_axis =
    "per_domain"`` records each domain's own consumption instead.
    """
    if not (0.0 < proxy_fraction <= 1.0):
        raise ValueError(f"proxy_fraction must lie in (0, 1], got {proxy_fraction}")
    if token_axis not in ("total", "per_domain"):
        raise ValueError(f"token_axis must be 'total' or 'per_domain', got {token_axis!r}")
    if eval_interval < 1:
        raise ValueError(f"eval_interval must be >= 1, got {eval_interval}")
    budget = proxy_fraction * float(total_tokens if total_tokens is not None else domains.total_tokens)
    n_slots = int(batch_tokens) // int(sequence_length)
    if n_slots < 1:
        raise ValueError("batch_tokens must cover at least one sequence")
    steps = max(1, math.ceil(budget / batch_tokens))
    w = weights if weights is not None else default_weights(domains)

    sampler = SamplerState(domains.names, _child_seed(seed, _SEED_PROXY_SAMPLER), sequence_length)
    state = SimState(len(domains), _child_seed(seed, _SEED_PROXY_NOISE))
    points: list[list[tuple[float, float]]] = [[] for _ in domains.names]
    for t in range(1, steps + 1):
        counts = sampler.allocate_batch(w, n_slots, deterministic=deterministic_allocation)
        sim_train_step(params, state, counts * sequence_length)
        if t % eval_interval == 0 or t == steps:
            losses = sim_eval(params, state, noisy=True)
            for i in range(len(domains)):
                coord = float(state.consumed.sum()) if token_axis == "total" else float(
                    state.consumed[i]
                )
                points[i].append((coord, losses.values[i]))
    return {
        name: CheckpointSeries(points[i]) for i, name in enumerate(domains.names)
    }


@dataclass(frozen=True)
class TargetEstimate:
    """Output of the target-estimation phase: per-domain fits and targets."""

    checkpoints: dict[str, CheckpointSeries]
    fits: tuple[ScalingFit, ...]
    targets: LossVector
    full_tokens: tuple[float, ...]


def estimate_targets(
    params: DynamicsParams,
    domains: DomainSet,
    *,
    batch_tokens: int,
    proxy_fraction: float,
    proxy_eval_interval: int,
    dataset_tokens: int | None = None,
    seed: int = 0,
    sequence_length: int = 4096,
    weights: WeightVector | None = None,
    fit_options: FitOptions | None = None,
    deterministic_allocation: bool = False,
    token_axis: str = "total",
) -> TargetEstimate:
    """Proxy run, per-domain scaling fit, and extrapolation to the full dataset.

    The proxy consumes ``proxy_fraction`` of ``dataset_tokens`` (the corpus
    size, defaulting to the domain token counts' sum) and targets are the
    fitted curves evaluated at the full dataset size. The training budget a
    run actually uses is a separate choice and may be smaller.
    """
    w = weights if weights is not None else default_weights(domains)
    full_data = float(dataset_tokens if dataset_tokens is not None else domains.total_tokens)
    checkpoints = run_proxy_phase(
        params,
        domains,
        proxy_fraction,
        batch_tokens,
        proxy_eval_interval,
        seed=seed,
        sequence_length=sequence_length,
        weights=w,
        total_tokens=int(full_data),
        deterministic_allocation=deterministic_allocation,
        token_axis=token_axis,
    )
    fits = tuple(fit_data_scaling(checkpoints[name], fit_options) for name in domains.names)
    if token_axis == "total":
        full = tuple(full_data for _ in domains.names)
    else:
        full = tuple(full_data * wi for wi in w.values)
    targets = predict_targets(fits, full)
    return TargetEstimate(checkpoints=checkpoints, fits=fits, targets=targets, full_tokens=full)


def initial_losses(params: DynamicsParams) -> LossVector:
    """Base-model losses: the noiseless closed form at zero consumption."""
    return sim_eval(params, SimState(len(params)), noisy=False)


def run_training(
    params: DynamicsParams,
    domains: DomainSet,
    policy: Policy,
    *,
    total_tokens: int,
    batch_tokens: int,
    update_interval: int,
    seed: int = 0,
    sequence_length: int = 4096,
    initial_weights: WeightVector | None = None,
    init_losses: LossVector | None = None,
    target_losses: LossVector | None = None,
    deterministic_allocation: bool = False,
    stop_after_step: int | None = None,
    resume: ResumePoint | None = None,
) -> RunResult:
    """Simulated training with periodic weight updates (the main loop).

    Evaluations (noisy) happen every ``update_interval`` steps, immediately
    followed by the policy's weight update and then the batch for that step.
    Rows are recorded at every evaluation step plus a tail row at the final
    step when it is not interval-aligned; the run consumes ``total_tokens``
    within one batch. Everything is deterministic given the seed.

    ``stop_after_step`` (an evaluation boundary) ends the run early with a
    ``resume_point``; passing that point back via ``resume`` continues the
    run and yields exactly the rows the unbroken run would have produced
    after the boundary.
    """
    n_slots = int(batch_tokens) // int(sequence_length)
    if n_slots < 1:
        raise ValueError("batch_tokens must cover at least one sequence")
    total_steps = max(1, math.ceil(float(total_tokens) / batch_tokens))
    if stop_after_step is not None:
        if stop_after_step % update_interval != 0:
            raise ValueError("stop_after_step must be an evaluation boundary")
        if not 0 < stop_after_step < total_steps:
            raise ValueError(
                f"stop_after_step must lie in (0, {total_steps}), got {stop_after_step}"
            )

    if resume is not None:
        sched = resume.scheduler
        sampler = resume.sampler
        sim_state = resume.sim
        start = resume.step + 1
        measured_init = sched.init_losses if sched.init_losses is not None else sim_eval(
            params, SimState(len(domains)), noisy=False
        )
        targets = sched.target_losses
        rows: list[TrajectoryRow] = []
    else:
        if policy.needs_targets and target_losses is None:
            raise ValueError(f"policy {policy.kind!r} requires target losses")
        measured_init = (
            init_losses
            if init_losses is not None
            else sim_eval(params, SimState(len(domains)), noisy=False)
        )
        targets = target_losses
        weights0 = initial_weights if initial_weights is not None else default_weights(domains)
        sched = initial_scheduler_state(
            policy,
            weights0,
            update_interval=update_interval,
            init_losses=measured_init,
            target_losses=targets,
        )
        sampler = SamplerState(
            domains.names, _child_seed(seed, _SEED_TRAIN_SAMPLER), sequence_length
        )
        sim_state = SimState(len(domains), _child_seed(seed, _SEED_TRAIN_NOISE))
        start = 1
        rows = [
            TrajectoryRow(
                step=0,
                weights=sched.weights,
                eval_losses=measured_init,
                velocity=None,
                alloc_tokens=tuple(0 for _ in domains.names),
            )
        ]

    interval_alloc = np.zeros(len(domains), dtype=np.int64)
    for t in range(start, total_steps + 1):
        losses = (
            sim_eval(params, sim_state, noisy=True) if t % update_interval == 0 else None
        )
        sched, weights = scheduler_step(sched, t, losses)
        counts = sampler.allocate_batch(
            weights, n_slots, deterministic=deterministic_allocation
        )
        alloc = counts * sequence_length
        sim_train_step(params, sim_state, alloc)
        interval_alloc += alloc
        if losses is not None:
            rows.append(
                TrajectoryRow(
                    step=t,
                    weights=weights,
                    eval_losses=losses,
                    velocity=sched.last_velocity,
                    alloc_tokens=tuple(int(x) for x in interval_alloc),
                )
            )
            interval_alloc[:] = 0
            if stop_after_step == t:
                return RunResult(
                    trajectory=Trajectory(domains.names, tuple(rows)),
                    init_losses=measured_init,
                    target_losses=targets,
                    final_losses=None,
                    consumed_tokens=tuple(int(x) for x in sampler.consumed_tokens),
                    total_steps=total_steps,
                    finished=False,
                    resume_point=ResumePoint(sched, sampler, sim_state, t),
                )

    if total_steps % update_interval != 0:
        losses = sim_eval(params, sim_state, noisy=True)
        rows.append(
            TrajectoryRow(
                step=total_steps,
                weights=sched.weights,
                eval_losses=losses,
                velocity=None,
                alloc_tokens=tuple(int(x) for x in interval_alloc),
            )
        )

    return RunResult(
        trajectory=Trajectory(domains.names, tuple(rows)),
        init_losses=measured_init,
        target_losses=targets,
        final_losses=sim_eval(params, sim_state, noisy=False),
        consumed_tokens=tuple(int(x) for x in sampler.consumed_tokens),
        total_steps=total_steps,
        finished=True,
        resume_point=None,
    )


def stabilization_step(trajectory: Trajectory, epsilon: float) -> int | None:
    """Earliest evaluation step after which weights stay within ``epsilon``.

    Returns the first recorded step t* such that the max-norm distance
    between every later row's weights and the final weights stays below
    ``epsilon``. The final row alone does not count as stabilization (its
    distance to itself is trivially zero), so a trajectory whose tail still
    oscillates beyond ``epsilon`` returns None.
    """
    if epsilon <= 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    rows = trajectory.rows
    if not rows:
        raise ValueError("trajectory is empty")
    if len(rows) == 1:
        return rows[0].step
    final = np.array(rows[-1].weights.values)
    earliest: int | None = None
    for row in reversed(rows):
        dist = float(np.max(np.abs(np.array(row.weights.values) - final)))
        if dist < epsilon:
            earliest = row.step
        else:
            break
    if earliest is None or earliest == rows[-1].step:
        return None
    return earliest


def time_averaged_weights(trajectory: Trajectory, method: str = "tokens") -> WeightVector:
    """Overall sampling ratio across a run.

    ``tokens`` (default) normalizes the total per-domain tokens allocated;
    ``rows`` is the plain mean of the recorded interval weights (all rows
    except the final one, whose weights never drove a batch). The two agree
    up to allocation granularity.
    """
    rows = trajectory.rows
    if not rows:
        raise ValueError("trajectory is empty")
    if method == "tokens":
        totals = np.sum([row.alloc_tokens for row in rows], axis=0)
        return normalize(totals)
    if method == "rows":
        active = rows[:-1] if len(rows) > 1 else rows
        mean = np.mean([row.weights.values for row in active], axis=0)
        return normalize(mean)
    raise ValueError(f"method must be 'tokens' or 'rows', got {method!r}")


@dataclass(frozen=True)
class PolicySummary:
    """Per-policy outcome metrics for a comparison run."""

    policy_kind: str
    final_losses: LossVector
    final_weights: WeightVector
    velocity_spread: float
    max_target_gap: float
    stabilization: int | None
    averaged_weights: WeightVector
    consumed_tokens: tuple[int, ...]


@dataclass(frozen=True)
class ComparisonReport:
    domains: tuple[str, ...]
    init_losses: LossVector
    targets: LossVector
    summaries: tuple[PolicySummary, ...]
    results: tuple[RunResult, ...]


def compare_policies(
    params: DynamicsParams,
    domains: DomainSet,
    policies: Sequence[Policy],
    *,
    total_tokens: int,
    batch_tokens: int,
    update_interval: int,
    seed: int = 0,
    sequence_length: int = 4096,
    proxy_fraction: float = 0.51,
    proxy_eval_interval: int | None = None,
    initial_weights: WeightVector | None = None,
    fit_options: FitOptions | None = None,
    deterministic_allocation: bool = False,
    token_axis: str = "total",
    stabilization_epsilon: float = 0.01,
) -> ComparisonReport:
    """Run several policies under one shared budget, seed, and target set.

    Target estimation runs once (one proxy run) and the same predicted
    targets feed every policy that uses them; the final-velocity spread of
    every policy, including static, is measured against that shared target
    set on the noiseless final losses.
    """
    init = initial_losses(params)
    weights0 = initial_weights if initial_weights is not None else default_weights(domains)
    estimate = estimate_targets(
        params,
        domains,
        batch_tokens=batch_tokens,
        proxy_fraction=proxy_fraction,
        proxy_eval_interval=proxy_eval_interval or update_interval,
        seed=seed,
        sequence_length=sequence_length,
        weights=weights0,
        fit_options=fit_options,
        deterministic_allocation=deterministic_allocation,
        token_axis=token_axis,
    )
    targets = estimate.targets
    converged = tuple(i <= t for i, t in zip(init.values, targets.values))

    results = []
    summaries = []
    for policy in policies:
        result = run_training(
            params,
            domains,
            policy,
            total_tokens=total_tokens,
            batch_tokens=batch_tokens,
            update_interval=update_interval,
            seed=seed,
            sequence_length=sequence_length,
            initial_weights=weights0,
            init_losses=init,
            target_losses=targets if policy.needs_targets else None,
            deterministic_allocation=deterministic_allocation,
        )
        assert result.final_losses is not None
        velocity = compute_velocity(result.final_losses, init, targets, converged)
        spread = float(max(velocity.values) - min(velocity.values))
        gaps = [
            max(f - t, 0.0) for f, t in zip(result.final_losses.values, targets.values)
        ]
        summaries.append(
            PolicySummary(
                policy_kind=policy.kind,
                final_losses=result.final_losses,
                final_weights=result.trajectory.rows[-1].weights,
                velocity_spread=spread,
                max_target_gap=float(max(gaps)),
                stabilization=stabilization_step(result.trajectory, stabilization_epsilon),
                averaged_weights=time_averaged_weights(result.trajectory),
                consumed_tokens=result.consumed_tokens,
            )
        )
        results.append(result)
    return ComparisonReport(
        domains=domains.names,
        init_losses=init,
        targets=targets,
        summaries=tuple(summaries),
        results=tuple(results),
    )


# ---------------------------------------------------------------------------
# Trajectory export.
# ---------------------------------------------------------------------------


def trajectory_to_csv(trajectory: Trajectory) -> str:
    """Long-format CSV (one line per step and domain), full float precision."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRAJECTORY_CSV_HEADER)
    for row in trajectory.rows:
        vel = row.velocity.values if row.velocity is not None else None
        for i, domain in enumerate(trajectory.domains):
            writer.writerow(
                [
                    row.step,
                    domain,
                    repr(row.weights.values[i]),
                    repr(row.eval_losses.values[i]),
                    "" if vel is None else repr(vel[i]),
                    row.alloc_tokens[i],
                ]
            )
    return buf.getvalue()


def format_comparison_report(report: ComparisonReport) -> str:
    """Human-readable policy comparison (6 significant digits)."""
    lines = ["policy comparison"]
    lines.append("domains: " + ", ".join(report.domains))
    lines.append("init_losses: " + ", ".join(f"{v:.6g}" for v in report.init_losses.values))
    lines.append("target_losses: " + ", ".join(f"{v:.6g}" for v in report.targets.values))
    for summary in report.summaries:
        lines.append(f"policy: {summary.policy_kind}")
        lines.append(
            "  final_losses: " + ", ".join(f"{v:.6g}" for v in summary.final_losses.values)
        )
        lines.append(
            "  final_weights: " + ", ".join(f"{v:.6g}" for v in summary.final_weights.values)
        )
        lines.append(f"  velocity_spread: {summary.velocity_spread:.6g}")
        lines.append(f"  max_target_gap: {summary.max_target_gap:.6g}")
        stab = summary.stabilization
        lines.append(f"  stabilization_step: {'none' if stab is None else stab}")
        lines.append(
            "  averaged_weights: "
            + ", ".join(f"{v:.6g}" for v in summary.averaged_weights.values)
        )
        lines.append(
            "  consumed_tokens: " + ", ".join(str(c) for c in summary.consumed_tokens)
        )
    return "\n".join(lines) + "\n"
