"""Checkpoint files: human-diffable JSON with an integrity checksum.

A checkpoint captures the scheduler state and, for simulated runs, the
sampler and simulator states, at an evaluation boundary. Loading restores
them exactly (floats and RNG states round-trip losslessly), so a resumed run
reproduces the unbroken run's remaining output byte for byte. Files are
written atomically (temp file + rename) and verified against a SHA-256
checksum and a schema version on load.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass

from .core import LossVector, VelocityVector, WeightVector
from .errors import CheckpointError
from .sampler import SamplerState
from .scheduler import Policy, SchedulerState
from .sim import ResumePoint, SimState

CHECKPOINT_FORMAT = "velocitune-checkpoint"
CHECKPOINT_VERSION = 1


def scheduler_state_to_dict(state: SchedulerState) -> dict:
    def vec(v) -> list[float] | None:
        return None if v is None else list(v.values)

    return {
        "policy": {
            "kind": state.policy.kind,
            "smoothing": state.policy.smoothing,
            "static_weights": vec(state.policy.static_weights),
        },
        "weights": list(state.weights.values),
        "step": state.step,
        "update_interval": state.update_interval,
        "init_losses": vec(state.init_losses),
        "target_losses": vec(state.target_losses),
        "converged": None if state.converged is None else list(state.converged),
        "last_velocity": vec(state.last_velocity),
    }


def scheduler_state_from_dict(data: dict) -> SchedulerState:
    pol = data["policy"]
    policy = Policy(
        kind=pol["kind"],
        smoothing=pol["smoothing"],
        static_weights=(
            WeightVector(pol["static_weights"]) if pol["static_weights"] is not None else None
        ),
    )
    return SchedulerState(
        policy=policy,
        weights=WeightVector(data["weights"]),
        step=int(data["step"]),
        update_interval=int(data["update_interval"]),
        init_losses=LossVector(data["init_losses"]) if data["init_losses"] is not None else None,
        target_losses=(
            LossVector(data["target_losses"]) if data["target_losses"] is not None else None
        ),
        converged=(
            tuple(bool(b) for b in data["converged"]) if data["converged"] is not None else None
        ),
        last_velocity=(
            VelocityVector(data["last_velocity"])
            if data["last_velocity"] is not None
            else None
        ),
    )


@dataclass
class CheckpointBundle:
    """Deserialized checkpoint contents; sampler/sim absent for service runs."""

    scheduler: SchedulerState
    step: int
    sampler: SamplerState | None = None
    sim: SimState | None = None

    def resume_point(self) -> ResumePoint:
        if self.sampler is None or self.sim is None:
            raise CheckpointError("checkpoint lacks sampler/sim state; cannot resume a run")
        return ResumePoint(scheduler=self.scheduler, sampler=self.sampler, sim=self.sim, step=self.step)


def _canonical(body: dict) -> str:
    return json.dumps(body, sort_keys=True, separators=(",", ":"))


def _checksum(body: dict) -> str:
    return "sha256:" + hashlib.sha256(_canonical(body).encode("utf-8")).hexdigest()


def save_checkpoint(
    path: str,
    scheduler: SchedulerState,
    step: int,
    sampler: SamplerState | None = None,
    sim: SimState | None = None,
) -> None:
    """Write a checkpoint atomically (write-to-temp, then rename)."""
    body = {
        "step": int(step),
        "scheduler": scheduler_state_to_dict(scheduler),
        "sampler": sampler.state_dict() if sampler is not None else None,
        "sim": sim.state_dict() if sim is not None else None,
    }
    document = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "checksum": _checksum(body),
        "body": body,
    }
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            json.dump(document, fh, indent=1)
            fh.write("\n")
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def save_resume_point(path: str, point: ResumePoint) -> None:
    save_checkpoint(path, point.scheduler, point.step, sampler=point.sampler, sim=point.sim)


def load_checkpoint(path: str) -> CheckpointBundle:
    """Read and verify a checkpoint; never returns partial state.

    Raises CheckpointError on truncation, checksum mismatch, or an
    unsupported format/version.
    """
    try:
        with open(path, "r", encoding="utf-8") as fh:
            document = json.load(fh)
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint (parse failed: {exc.msg})") from None
    if not isinstance(document, dict) or document.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path}: not a {CHECKPOINT_FORMAT} file")
    if document.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"{path}: unsupported checkpoint version {document.get('version')!r}"
            f" (expected {CHECKPOINT_VERSION})"
        )
    body = document.get("body")
    if not isinstance(body, dict):
        raise CheckpointError(f"{path}: corrupt checkpoint (missing body)")
    if document.get("checksum") != _checksum(body):
        raise CheckpointError(f"{path}: corrupt checkpoint (checksum mismatch)")
    try:
        scheduler = scheduler_state_from_dict(body["scheduler"])
        sampler = (
            SamplerState.from_state_dict(body["sampler"]) if body.get("sampler") else None
        )
        sim = SimState.from_state_dict(body["sim"]) if body.get("sim") else None
        step = int(body["step"])
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: corrupt checkpoint ({exc})") from exc
    return CheckpointBundle(scheduler=scheduler, step=step, sampler=sampler, sim=sim)


def load_resume_point(path: str) -> ResumePoint:
    return load_checkpoint(path).resume_point()
