"""Seeded allocation of batch capacity across domains.

Each batch holds a fixed number of sequence slots; slots are assigned to
domains by a seeded multinomial draw over the current weights (the default),
or by a deterministic proportional mode that carries fractional credit across
batches so cumulative allocation tracks the weights exactly. Per-domain
sequence indices are served from reshuffled permutations that wrap on
exhaustion, which makes long runs sample with replacement at epoch
granularity.

The RNG is counter-based (Philox), so the full sampler state serializes to a
small integer token for checkpointing.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .core import WeightVector

STATE_FORMAT = 1


def _philox(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def bitgen_state_to_jsonable(state: dict) -> dict:
    inner = state["state"]
    return {
        "counter": [int(x) for x in inner["counter"]],
        "key": [int(x) for x in inner["key"]],
        "buffer": [int(x) for x in state["buffer"]],
        "buffer_pos": int(state["buffer_pos"]),
        "has_uint32": int(state["has_uint32"]),
        "uinteger": int(state["uinteger"]),
    }


def bitgen_state_from_jsonable(data: dict) -> dict:
    return {
        "bit_generator": "Philox",
        "state": {
            "counter": np.array(data["counter"], dtype=np.uint64),
            "key": np.array(data["key"], dtype=np.uint64),
        },
        "buffer": np.array(data["buffer"], dtype=np.uint64),
        "buffer_pos": int(data["buffer_pos"]),
        "has_uint32": int(data["has_uint32"]),
        "uinteger": int(data["uinteger"]),
    }


class SamplerState:
    """Sequential per-run sampler: one instance per training stream.

    Args:
        domain_names: canonical domain order.
        seed: RNG seed; identical seeds and call sequences reproduce
            identical allocations bit for bit.
        sequence_length: tokens per sequence slot (for consumed-token
            accounting).
        sequence_counts: per-domain number of sequences, required only when
            ``next_indices`` is used.
    """

    def __init__(
        self,
        domain_names: Sequence[str],
        seed: int,
        sequence_length: int = 4096,
        sequence_counts: Sequence[int] | None = None,
    ):
        if sequence_length < 1:
            raise ValueError(f"sequence_length must be >= 1, got {sequence_length}")
        self.domain_names = tuple(domain_names)
        self.sequence_length = int(sequence_length)
        self.rng = _philox(seed)
        k = len(self.domain_names)
        self.consumed_tokens = np.zeros(k, dtype=np.int64)
        self.epoch_counts = np.zeros(k, dtype=np.int64)
        self.cursors = np.zeros(k, dtype=np.int64)
        # Allocation credit for the deterministic proportional mode.
        self._credit = np.zeros(k, dtype=np.float64)
        if sequence_counts is not None:
            counts = tuple(int(c) for c in sequence_counts)
            if len(counts) != k:
                raise ValueError(f"got {len(counts)} sequence counts for {k} domains")
            if any(c < 1 for c in counts):
                raise ValueError("sequence counts must be positive")
            self.sequence_counts: tuple[int, ...] | None = counts
        else:
            self.sequence_counts = None
        self._permutations: list[np.ndarray | None] = [None] * k

    def _domain_index(self, domain: str) -> int:
        try:
            return self.domain_names.index(domain)
        except ValueError:
            raise ValueError(f"unknown domain {domain!r}") from None

    def allocate_batch(
        self, weights: WeightVector, n_slots: int, deterministic: bool = False
    ) -> np.ndarray:
        """Assign ``n_slots`` sequence slots to domains under ``weights``.

        Multinomial by default; with ``deterministic=True`` slots follow the
        weights via a fractional-credit accumulator (largest-credit rounding),
        keeping cumulative allocation within one slot per domain of exact
        proportionality. Counts always sum to ``n_slots``.
        """
        if n_slots < 1:
            raise ValueError(f"n_slots must be >= 1, got {n_slots}")
        if len(weights) != len(self.domain_names):
            raise ValueError(
                f"got {len(weights)} weights for {len(self.domain_names)} domains"
            )
        w = weights.to_numpy()
        if deterministic:
            self._credit += w * n_slots
            counts = np.floor(self._credit).astype(np.int64)
            # np.floor of a tiny negative residual could dip below zero.
            counts = np.maximum(counts, 0)
            short = n_slots - int(counts.sum())
            if short > 0:
                remainder = self._credit - counts
                for i in np.argsort(-remainder, kind="stable")[:short]:
                    counts[i] += 1
            elif short < 0:
                # Only possible through accumulated rounding; shave the
                # largest counts back.
                for i in np.argsort(-counts, kind="stable")[: -short]:
                    counts[i] -= 1
            self._credit -= counts
        else:
            # multinomial() requires sum(p) <= 1 + eps; rescale the few-ulp
            # drift away instead of failing.
            counts = self.rng.multinomial(n_slots, w / w.sum()).astype(np.int64)
        self.consumed_tokens += counts * self.sequence_length
        return counts

    def next_indices(self, domain: str, count: int) -> np.ndarray:
        """Next ``count`` sequence indices for ``domain``.

        Indices come from the domain's current permutation; on exhaustion a
        fresh permutation is drawn from the sampler RNG and ``epoch_counts``
        is incremented, so every index appears exactly once per domain-epoch.
        """
        if count < 0:
            raise ValueError(f"count must be >= 0, got {count}")
        idx = self._domain_index(domain)
        if self.sequence_counts is None:
            raise ValueError("sampler was built without per-domain sequence counts")
        if count == 0:
            return np.empty(0, dtype=np.int64)
        size = self.sequence_counts[idx]
        out = np.empty(count, dtype=np.int64)
        filled = 0
        while filled < count:
            if self._permutations[idx] is None:
                self._permutations[idx] = self.rng.permutation(size)
            perm = self._permutations[idx]
            cursor = int(self.cursors[idx])
            take = min(count - filled, size - cursor)
            out[filled : filled + take] = perm[cursor : cursor + take]
            filled += take
            cursor += take
            if cursor >= size:
                self._permutations[idx] = None
                self.cursors[idx] = 0
                self.epoch_counts[idx] += 1
            else:
                self.cursors[idx] = cursor
        return out

    # -- checkpoint serialization -------------------------------------------

    def state_dict(self) -> dict:
        """Compact JSON-able snapshot; restore with ``SamplerState.from_state_dict``."""
        return {
            "format": STATE_FORMAT,
            "domain_names": list(self.domain_names),
            "sequence_length": self.sequence_length,
            "rng": bitgen_state_to_jsonable(self.rng.bit_generator.state),
            "consumed_tokens": [int(x) for x in self.consumed_tokens],
            "epoch_counts": [int(x) for x in self.epoch_counts],
            "cursors": [int(x) for x in self.cursors],
            "credit": [float(x) for x in self._credit],
            "sequence_counts": list(self.sequence_counts) if self.sequence_counts else None,
            "permutations": [
                None if p is None else [int(x) for x in p] for p in self._permutations
            ],
        }

    @classmethod
    def from_state_dict(cls, data: dict) -> "SamplerState":
        if data.get("format") != STATE_FORMAT:
            raise ValueError(f"unsupported sampler state format {data.get('format')!r}")
        state = cls(
            data["domain_names"],
            seed=0,
            sequence_length=data["sequence_length"],
            sequence_counts=data["sequence_counts"],
        )
        state.rng.bit_generator.state = bitgen_state_from_jsonable(data["rng"])
        state.consumed_tokens = np.array(data["consumed_tokens"], dtype=np.int64)
        state.epoch_counts = np.array(data["epoch_counts"], dtype=np.int64)
        state.cursors = np.array(data["cursors"], dtype=np.int64)
        state._credit = np.array(data["credit"], dtype=np.float64)
        state._permutations = [
            None if p is None else np.array(p, dtype=np.int64) for p in data["permutations"]
        ]
        return state
