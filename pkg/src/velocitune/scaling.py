"""Data scaling-law fitting and target-loss extrapolation.

With model size fixed, per-domain evaluation loss as a function of training
tokens is modeled as

    L(D) = E + B * D**(-beta)

where E is the irreducible loss, B the scale coefficient, and beta the data
exponent. Parameters are fitted by minimizing a Huber loss on log-space
residuals from a deterministic multi-start grid, then the fitted curve is
extrapolated to the full-data token count to obtain each domain's target loss.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence, TextIO

import numpy as np
from scipy.optimize import minimize

from .core import LossVector
from .errors import FitFailureError, InsufficientDataError

MIN_FIT_POINTS = 4

CHECKPOINT_CSV_HEADER = ("domain", "tokens", "loss")


@dataclass(frozen=True)
class CheckpointSeries:
    """Evaluation-loss checkpoints for one domain, ordered by tokens consumed."""

    tokens: tuple[float, ...]
    losses: tuple[float, ...]

    def __init__(self, points: Iterable[tuple[float, float]]):
        pts = [(float(t), float(l)) for t, l in points]
        if len(pts) < MIN_FIT_POINTS:
            raise InsufficientDataError(
                f"scaling fit needs at least {MIN_FIT_POINTS} checkpoints, got {len(pts)}"
            )
        toks = tuple(t for t, _ in pts)
        losses = tuple(l for _, l in pts)
        if any(t <= 0 for t in toks):
            raise ValueError("checkpoint token counts must be positive")
        if any(b <= a for a, b in zip(toks, toks[1:])):
            raise ValueError("checkpoint token counts must be strictly increasing")
        if any(not math.isfinite(l) for l in losses):
            raise ValueError("checkpoint losses must be finite")
        object.__setattr__(self, "tokens", toks)
        object.__setattr__(self, "losses", losses)

    def __len__(self) -> int:
        return len(self.tokens)


@dataclass(frozen=True)
class FitOptions:
    """Parameter bounds and multi-start grid for the scaling-law fit.

    The objective is a Huber loss on log residuals; beta starts on a coarse
    grid in (0, 1] and irreducible-loss starts at 0 and at fractions of the
    lowest observed loss. The search is fully deterministic. The default
    ``huber_delta`` of 0.01 keeps typical checkpoint noise (sd ~0.01 nats on
    losses of order 1) in the quadratic regime while still capping the
    influence of genuine outliers; much smaller deltas turn the whole fit
    into an L1 regression and roughly double the extrapolation variance.
    """

    huber_delta: float = 0.01
    beta_grid: tuple[float, ...] = tuple(round(0.05 * i, 2) for i in range(1, 21))
    e_start_fractions: tuple[float, ...] = (0.0, 0.5, 0.9)
    beta_max: float = 2.0
    max_iterations: int = 500


@dataclass(frozen=True)
class ScalingFit:
    """Fitted data scaling-law parameters for one domain.

    Attributes:
        E: irreducible loss (nats/token), 0 <= E.
        B: scale coefficient (nats * tokens**beta), B > 0.
        beta: data exponent, 0 < beta <= 2.
        fit_rmse: residual RMSE against the fitted points, in loss units.
    """

    E: float
    B: float
    beta: float
    fit_rmse: float = 0.0

    def __post_init__(self):
        if not (self.E >= 0.0 and math.isfinite(self.E)):
            raise ValueError(f"E must be finite and >= 0, got {self.E}")
        if not (self.B > 0.0 and math.isfinite(self.B)):
            raise ValueError(f"B must be finite and > 0, got {self.B}")
        if not (0.0 < self.beta <= 2.0):
            raise ValueError(f"beta must lie in (0, 2], got {self.beta}")
        if not (self.fit_rmse >= 0.0):
            raise ValueError(f"fit_rmse must be >= 0, got {self.fit_rmse}")


def _huber(residuals: np.ndarray, delta: float) -> np.ndarray:
    abs_r = np.abs(residuals)
    return np.where(abs_r <= delta, 0.5 * residuals**2, delta * (abs_r - 0.5 * delta))


def _huber_grad(residuals: np.ndarray, delta: float) -> np.ndarray:
    return np.clip(residuals, -delta, delta)


def fit_data_scaling(series: CheckpointSeries, options: FitOptions | None = None) -> ScalingFit:
    """Fit L(D) = E + B * D**(-beta) to one domain's checkpoint series.

    Minimizes the Huber loss of log(observed) - log(predicted) with L-BFGS-B
    from every point of a fixed (beta, E) start grid; B is optimized in log
    space with its start derived from the other two. The lowest final
    objective wins, so the result is deterministic for identical inputs.

    Raises:
        InsufficientDataError: fewer than four checkpoints.
        FitFailureError: flat/degenerate series, non-positive losses, or no
            optimizer start converged to a finite objective.
    """
    opts = options or FitOptions()
    if len(series) < MIN_FIT_POINTS:
        raise InsufficientDataError(
            f"scaling fit needs at least {MIN_FIT_POINTS} checkpoints, got {len(series)}"
        )
    tokens = np.array(series.tokens, dtype=np.float64)
    losses = np.array(series.losses, dtype=np.float64)
    if np.any(losses <= 0.0):
        raise FitFailureError("log-space fit requires strictly positive losses")

    min_loss = float(losses.min())
    spread = float(losses.max() - min_loss)
    if spread <= 1e-12 * max(1.0, abs(min_loss)):
        raise FitFailureError("checkpoint losses are constant; no decay to fit")

    log_t = np.log(tokens)
    log_l = np.log(losses)
    delta = opts.huber_delta

    def objective(x: np.ndarray) -> tuple[float, np.ndarray]:
        e, log_b, beta = x
        with np.errstate(over="ignore"):
            decay = np.exp(log_b - beta * log_t)
        pred = e + decay
        if not np.all(np.isfinite(pred)):
            return float("inf"), np.zeros(3)
        pred = np.maximum(pred, 1e-300)
        r = log_l - np.log(pred)
        g = _huber_grad(r, delta)
        # dr/dtheta = -(dpred/dtheta) / pred
        scale = -g / pred
        grad = np.array(
            [np.sum(scale), np.sum(scale * decay), np.sum(scale * decay * (-log_t))]
        )
        return float(np.sum(_huber(r, delta))), grad

    bounds = [(0.0, min_loss), (None, None), (1e-6, opts.beta_max)]
    best_fun = float("inf")
    best_x: np.ndarray | None = None
    for beta0 in opts.beta_grid:
        for frac in opts.e_start_fractions:
            e0 = frac * min_loss
            # Closed-form B start given (E, beta): median of (L - E) * D**beta.
            resid = np.clip(losses - e0, 1e-12, None)
            b0 = float(np.median(resid * tokens**beta0))
            x0 = np.array([e0, math.log(max(b0, 1e-12)), beta0])
            result = minimize(
                objective,
                x0,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                options={"maxiter": opts.max_iterations, "ftol": 1e-13, "gtol": 1e-11},
            )
            if np.isfinite(result.fun) and result.fun < best_fun:
                best_fun = float(result.fun)
                best_x = result.x

    if best_x is None:
        raise FitFailureError("all optimizer starts failed", best_residual=None)

    e_fit, log_b_fit, beta_fit = (float(v) for v in best_x)
    b_fit = math.exp(log_b_fit)
    pred = e_fit + b_fit * tokens ** (-beta_fit)
    rmse = float(np.sqrt(np.mean((pred - losses) ** 2)))
    try:
        return ScalingFit(E=e_fit, B=b_fit, beta=beta_fit, fit_rmse=rmse)
    except ValueError as exc:
        raise FitFailureError(f"optimizer produced invalid parameters: {exc}", best_fun) from exc


def predict_loss(fit: ScalingFit, tokens: float) -> float:
    """Evaluate the fitted law at a token count: E + B * tokens**(-beta)."""
    if not tokens > 0:
        raise ValueError(f"token count must be positive, got {tokens}")
    return fit.E + fit.B * float(tokens) ** (-fit.beta)


def predict_targets(fits: Sequence[ScalingFit], full_tokens: Sequence[float]) -> LossVector:
    """Per-domain target losses: each fit extrapolated to its full-data tokens."""
    if len(fits) != len(full_tokens):
        raise ValueError(
            f"got {len(fits)} fits but {len(full_tokens)} full-data token counts"
        )
    return LossVector(predict_loss(f, t) for f, t in zip(fits, full_tokens))


# ---------------------------------------------------------------------------
# File formats: checkpoint CSV in, fit report out.
# ---------------------------------------------------------------------------


def read_checkpoint_csv(source: str | TextIO) -> dict[str, CheckpointSeries]:
    """Parse a `domain,tokens,loss` CSV into per-domain checkpoint series.

    Domains appear in the result in first-occurrence order. Raises ValueError
    with a line number on any malformed content.
    """
    if isinstance(source, str):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            return read_checkpoint_csv(fh)

    reader = csv.reader(source)
    try:
        header = next(reader)
    except StopIteration:
        raise ValueError("checkpoint CSV is empty") from None
    if tuple(h.strip() for h in header) != CHECKPOINT_CSV_HEADER:
        raise ValueError(
            f"line 1: expected header {','.join(CHECKPOINT_CSV_HEADER)!r}, got {','.join(header)!r}"
        )
    points: dict[str, list[tuple[float, float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 3:
            raise ValueError(f"line {lineno}: expected 3 fields, got {len(row)}")
        domain = row[0].strip()
        try:
            tokens = float(row[1])
            loss = float(row[2])
        except ValueError:
            raise ValueError(f"line {lineno}: tokens and loss must be numeric") from None
        points.setdefault(domain, []).append((tokens, loss))
    if not points:
        raise ValueError("checkpoint CSV contains no data rows")
    series: dict[str, CheckpointSeries] = {}
    for domain, pts in points.items():
        try:
            series[domain] = CheckpointSeries(pts)
        except (ValueError, InsufficientDataError) as exc:
            raise type(exc)(f"domain {domain!r}: {exc}") from None
    return series


def write_checkpoint_csv(
    dest: str | TextIO, series_by_domain: dict[str, CheckpointSeries]
) -> None:
    """Write per-domain checkpoint series as a `domain,tokens,loss` CSV."""
    if isinstance(dest, str):
        with open(dest, "w", encoding="utf-8", newline="") as fh:
            write_checkpoint_csv(fh, series_by_domain)
        return
    writer = csv.writer(dest, lineterminator="\n")
    writer.writerow(CHECKPOINT_CSV_HEADER)
    for domain, series in series_by_domain.items():
        for tokens, loss in zip(series.tokens, series.losses):
            writer.writerow([domain, repr(tokens), repr(loss)])


def format_fit_report(
    domains: Sequence[str],
    fits: Sequence[ScalingFit],
    targets: Sequence[float],
    full_tokens: Sequence[float],
) -> str:
    """Human-readable per-domain fit summary (6 significant digits)."""
    lines = ["scaling-law fit report"]
    for name, fit, target, toks in zip(domains, fits, targets, full_tokens):
        lines.append(f"domain: {name}")
        lines.append(f"  E: {fit.E:.6g}")
        lines.append(f"  B: {fit.B:.6g}")
        lines.append(f"  beta: {fit.beta:.6g}")
        lines.append(f"  fit_rmse: {fit.fit_rmse:.6g}")
        lines.append(f"  full_tokens: {toks:.6g}")
        lines.append(f"  predicted_target: {target:.6g}")
    return "\n".join(lines) + "\n"


def fits_to_csv_text(domains: Sequence[str], fits: Sequence[ScalingFit]) -> str:
    """Full-precision fit parameters as CSV (for machine consumption)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["domain", "E", "B", "beta", "fit_rmse"])
    for name, fit in zip(domains, fits):
        writer.writerow([name, repr(fit.E), repr(fit.B), repr(fit.beta), repr(fit.fit_rmse)])
    return buf.getvalue()
