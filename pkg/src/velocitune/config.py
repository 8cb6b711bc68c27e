"""Declarative run configuration (JSON).

A config file names the domains, the policy, the token budgets, and (for
simulated runs) the generating dynamics. Missing fields fall back to
documented defaults: update interval 150 steps, smoothing 0, token-ratio
initial weights, total budget of one epoch of the mixture.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from typing import Any

from .core import DomainSet, WeightVector
from .errors import ConfigError
from .scaling import FitOptions
from .scheduler import DEFAULT_UPDATE_INTERVAL, POLICY_KINDS, Policy
from .sim import DynamicsParams

_TOP_LEVEL_KEYS = {
    "domains",
    "policy",
    "update_interval",
    "total_tokens",
    "batch_tokens",
    "sequence_length",
    "proxy_fraction",
    "proxy_eval_interval",
    "fit",
    "dynamics",
    "seed",
    "deterministic_allocation",
    "token_axis",
    "stabilization_epsilon",
}


@dataclass(frozen=True)
class RunConfig:
    """Validated, fully defaulted settings for one run."""

    domains: DomainSet
    policy: Policy
    initial_weights: WeightVector | None = None
    update_interval: int = DEFAULT_UPDATE_INTERVAL
    total_tokens: int = 0  # 0 means "one epoch": sum of domain token counts
    batch_tokens: int = 1_000_000
    sequence_length: int = 4096
    proxy_fraction: float = 0.51
    proxy_eval_interval: int | None = None
    fit_options: FitOptions = FitOptions()
    dynamics: DynamicsParams | None = None
    seed: int = 0
    deterministic_allocation: bool = False
    token_axis: str = "total"
    stabilization_epsilon: float = 0.01

    def __post_init__(self):
        if self.update_interval < 1:
            raise ConfigError("update_interval must be >= 1")
        if self.total_tokens == 0:
            object.__setattr__(self, "total_tokens", self.domains.total_tokens)
        if self.total_tokens < 1:
            raise ConfigError("total_tokens must be positive")
        if self.batch_tokens < 1:
            raise ConfigError("batch_tokens must be positive")
        if self.sequence_length < 1:
            raise ConfigError("sequence_length must be >= 1")
        if self.batch_tokens < self.sequence_length:
            raise ConfigError("batch_tokens must cover at least one sequence")
        if not (0.0 < self.proxy_fraction <= 1.0):
            raise ConfigError("proxy_fraction must lie in (0, 1]")
        if self.proxy_eval_interval is not None and self.proxy_eval_interval < 1:
            raise ConfigError("proxy_eval_interval must be >= 1")
        if self.token_axis not in ("total", "per_domain"):
            raise ConfigError("token_axis must be 'total' or 'per_domain'")
        if not (self.stabilization_epsilon > 0):
            raise ConfigError("stabilization_epsilon must be positive")
        k = len(self.domains)
        if self.initial_weights is not None and len(self.initial_weights) != k:
            raise ConfigError(
                f"initial_weights has {len(self.initial_weights)} entries for {k} domains"
            )
        if self.dynamics is not None and len(self.dynamics) != k:
            raise ConfigError(f"dynamics cover {len(self.dynamics)} of {k} domains")

    def require_dynamics(self) -> DynamicsParams:
        if self.dynamics is None:
            raise ConfigError("this command needs a 'dynamics' section in the config")
        return self.dynamics

    def with_policy_kind(self, kind: str) -> "RunConfig":
        """Copy of the config with the policy kind swapped (CLI --policy)."""
        return replace(self, policy=replace(self.policy, kind=kind, static_weights=None))


def _expect(data: dict, key: str, types: tuple[type, ...], where: str) -> Any:
    if key not in data:
        raise ConfigError(f"{where}: missing required field {key!r}")
    value = data[key]
    if not isinstance(value, types):
        raise ConfigError(f"{where}: field {key!r} has wrong type {type(value).__name__}")
    return value


def _parse_domains(data: Any) -> tuple[DomainSet, WeightVector | None]:
    if not isinstance(data, dict):
        raise ConfigError("'domains' must be an object with names and token_counts")
    names = _expect(data, "names", (list,), "domains")
    counts = _expect(data, "token_counts", (list,), "domains")
    try:
        domains = DomainSet(names, counts)
    except Exception as exc:
        raise ConfigError(f"domains: {exc}") from exc
    weights = None
    if data.get("initial_weights") is not None:
        try:
            weights = WeightVector(data["initial_weights"])
        except Exception as exc:
            raise ConfigError(f"domains.initial_weights: {exc}") from exc
        if len(weights) != len(domains):
            raise ConfigError(
                f"domains.initial_weights has {len(weights)} entries for {len(domains)} domains"
            )
    unknown = set(data) - {"names", "token_counts", "initial_weights"}
    if unknown:
        raise ConfigError(f"domains: unknown fields {sorted(unknown)}")
    return domains, weights


def _parse_policy(data: Any) -> Policy:
    if isinstance(data, str):
        data = {"kind": data}
    if not isinstance(data, dict):
        raise ConfigError("'policy' must be a kind string or an object")
    kind = _expect(data, "kind", (str,), "policy")
    if kind not in POLICY_KINDS:
        raise ConfigError(f"policy.kind must be one of {POLICY_KINDS}, got {kind!r}")
    smoothing = data.get("smoothing", 0.0)
    static_weights = None
    if data.get("static_weights") is not None:
        try:
            static_weights = WeightVector(data["static_weights"])
        except Exception as exc:
            raise ConfigError(f"policy.static_weights: {exc}") from exc
    unknown = set(data) - {"kind", "smoothing", "static_weights"}
    if unknown:
        raise ConfigError(f"policy: unknown fields {sorted(unknown)}")
    try:
        return Policy(kind=kind, smoothing=float(smoothing), static_weights=static_weights)
    except Exception as exc:
        raise ConfigError(f"policy: {exc}") from exc


def _parse_fit(data: Any) -> FitOptions:
    if not isinstance(data, dict):
        raise ConfigError("'fit' must be an object")
    known = {"huber_delta", "beta_max", "max_iterations"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"fit: unknown fields {sorted(unknown)}")
    try:
        return FitOptions(
            huber_delta=float(data.get("huber_delta", 0.01)),
            beta_max=float(data.get("beta_max", 2.0)),
            max_iterations=int(data.get("max_iterations", 500)),
        )
    except ValueError as exc:
        raise ConfigError(f"fit: {exc}") from exc


def _parse_dynamics(data: Any, k: int) -> DynamicsParams:
    if not isinstance(data, dict):
        raise ConfigError("'dynamics' must be an object")
    known = {"E", "B", "beta", "D0", "transfer", "noise_sigma"}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"dynamics: unknown fields {sorted(unknown)}")
    for key in ("E", "B", "beta", "D0"):
        arr = _expect(data, key, (list,), "dynamics")
        if len(arr) != k:
            raise ConfigError(f"dynamics.{key} has {len(arr)} entries for {k} domains")
    try:
        return DynamicsParams(
            E=data["E"],
            B=data["B"],
            beta=data["beta"],
            D0=data["D0"],
            transfer=data.get("transfer"),
            noise_sigma=float(data.get("noise_sigma", 0.005)),
        )
    except ValueError as exc:
        raise ConfigError(f"dynamics: {exc}") from exc


def config_from_dict(data: dict, source: str = "<config>") -> RunConfig:
    """Validate a parsed config mapping; errors name the offending field."""
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be an object")
    unknown = set(data) - _TOP_LEVEL_KEYS
    if unknown:
        raise ConfigError(f"{source}: unknown fields {sorted(unknown)}")
    domains, initial_weights = _parse_domains(_expect(data, "domains", (dict,), source))
    policy = _parse_policy(data.get("policy", "velocitune"))
    dynamics = None
    if data.get("dynamics") is not None:
        dynamics = _parse_dynamics(data["dynamics"], len(domains))
    fit_options = _parse_fit(data["fit"]) if data.get("fit") is not None else FitOptions()
    try:
        return RunConfig(
            domains=domains,
            policy=policy,
            initial_weights=initial_weights,
            update_interval=int(data.get("update_interval", DEFAULT_UPDATE_INTERVAL)),
            total_tokens=int(data.get("total_tokens", 0)),
            batch_tokens=int(data.get("batch_tokens", 1_000_000)),
            sequence_length=int(data.get("sequence_length", 4096)),
            proxy_fraction=float(data.get("proxy_fraction", 0.51)),
            proxy_eval_interval=(
                int(data["proxy_eval_interval"])
                if data.get("proxy_eval_interval") is not None
                else None
            ),
            fit_options=fit_options,
            dynamics=dynamics,
            seed=int(data.get("seed", 0)),
            deterministic_allocation=bool(data.get("deterministic_allocation", False)),
            token_axis=str(data.get("token_axis", "total")),
            stabilization_epsilon=float(data.get("stabilization_epsilon", 0.01)),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{source}: {exc}") from exc


def load_config(path: str) -> RunConfig:
    """Read and validate a JSON run config.

    Raises ConfigError with a line/column diagnostic on parse failure, or
    with the violated field on validation failure.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    return config_from_dict(data, source=path)


def initial_weights_for(config: RunConfig) -> WeightVector:
    """Explicit initial weights if configured, else token-ratio defaults."""
    from .core import default_weights

    if config.initial_weights is not None:
        return config.initial_weights
    return default_weights(config.domains)
