"""Multi-scale harmonic features: pooled states, Betti matrix, adjacent-scale persistence.

Overlaps between pooled states are computed exactly by default. ``OverlapMode``
can switch them to swap-test emulation (binomial shot noise) and/or to the
basis-invariant projector overlap.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any

import numpy as np

from .geometry import PointCloud, ScaleGrid, pairwise_distances
from .simplicial import build_vr
from .spectral import EigensolverError, PooledState, ZeroTolerance, harmonic_basis, laplacian, pooled_state

FORMAT_VERSION = 1


class IncomparableError(ValueError):
    pass


@dataclass(frozen=True)
class OverlapMode:
    kind: str = "exact"
    shots: int | None = None
    seed: int = 0
    basis: str = "canonical"

    def __post_init__(self):
        if self.kind not in ("exact", "shots"):
            raise ValueError(f"unknown overlap kind {self.kind!r}")
        if self.kind == "shots" and (self.shots is None or self.shots < 1):
            raise ValueError("shot mode needs shots >= 1")
        if self.basis not in ("canonical", "projector"):
            raise ValueError(f"unknown basis mode {self.basis!r}")

    @classmethod
    def parse(cls, text: str, seed: int = 0, basis: str = "canonical") -> OverlapMode:
        """``"exact"`` or ``"shots:S"``."""
        if text == "exact":
            return cls("exact", None, seed, basis)
        if text.startswith("shots:"):
            return cls("shots", int(text.split(":", 1)[1]), seed, basis)
        raise ValueError(f"overlap must be 'exact' or 'shots:S', got {text!r}")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "shots": self.shots, "seed": self.seed, "basis": self.basis}

    @classmethod
    def from_dict(cls, d: dict) -> OverlapMode:
        return cls(d["kind"], d.get("shots"), d.get("seed", 0), d.get("basis", "canonical"))


def inner(a: PooledState, b: PooledState) -> float:
    """Real inner product in the shared vertex-subset space."""
    if a.n != b.n or a.k != b.k:
        raise IncomparableError(f"incomparable state spaces: (n={a.n}, k={a.k}) vs (n={b.n}, k={b.k})")
    _, ia, ib = np.intersect1d(a.keys, b.keys, assume_unique=True, return_indices=True)
    return float(a.amplitudes[ia] @ b.amplitudes[ib])


def persistence_measure(a: PooledState, b: PooledState) -> float:
    """Squared overlap of two pooled states.

    Two zero sentinels give 1.0 and exactly one gives 0.0.
    """
    if a.n != b.n:
        raise IncomparableError(f"incomparable state spaces: n={a.n} vs n={b.n}")
    if a.is_zero or b.is_zero:
        return 1.0 if (a.is_zero and b.is_zero) else 0.0
    if a.same_as(b):
        return 1.0
    return min(inner(a, b) ** 2, 1.0)


def projector_overlap(a: PooledState, b: PooledState) -> float:
    """``tr(P_a P_b) / sqrt(b_a b_b)`` for the harmonic projectors; same sentinel rules."""
    if a.n != b.n or a.k != b.k:
        raise IncomparableError(f"incomparable state spaces: (n={a.n}, k={a.k}) vs (n={b.n}, k={b.k})")
    if a.is_zero or b.is_zero:
        return 1.0 if (a.is_zero and b.is_zero) else 0.0
    if a.same_as(b):
        return 1.0
    _, ia, ib = np.intersect1d(a.keys, b.keys, assume_unique=True, return_indices=True)
    cross = a.basis[:, ia] @ b.basis[:, ib].T
    return min(float(np.sum(cross**2)) / np.sqrt(a.b * b.b), 1.0)


def swap_test(q: float, shots: int, rng: np.random.Generator) -> float:
    """Estimate an overlap ``q`` from ``shots`` simulated swap-test outcomes.

    Outcome 0 occurs with probability ``(1 + q) / 2``; the estimate
    ``2 * zeros / shots - 1`` is clamped to ``[0, 1]``.
    """
    p0 = (1.0 + min(max(q, 0.0), 1.0)) / 2.0
    zeros = rng.binomial(shots, p0)
    return min(max(2.0 * zeros / shots - 1.0, 0.0), 1.0)


def estimate_overlap(a: PooledState, b: PooledState, shots: int, seed, basis: str = "canonical") -> float:
    """Swap-test estimate of the overlap of ``a`` and ``b``; sentinels are not sampled."""
    if shots < 1:
        raise ValueError("shots must be >= 1")
    if a.is_zero or b.is_zero:
        return persistence_measure(a, b)
    q = persistence_measure(a, b) if basis == "canonical" else projector_overlap(a, b)
    return swap_test(q, shots, np.random.default_rng(seed))


def overlap(a: PooledState, b: PooledState, mode: OverlapMode, tag: tuple[int, ...] = ()) -> float:
    """Overlap under ``mode``; in shot mode the stream is seeded by ``(mode.seed, *tag)``."""
    q = persistence_measure(a, b) if mode.basis == "canonical" else projector_overlap(a, b)
    if mode.kind == "exact" or a.is_zero or b.is_zero:
        return q
    rng = np.random.default_rng(np.random.SeedSequence([mode.seed, *tag]))
    return swap_test(q, mode.shots, rng)


@dataclass(frozen=True, eq=False)
class HarmonicFeatureSet:
    """Features of one cloud over a scale grid.

    ``betti`` is ``(T, K+1)`` (scale-major, flattened row-major for the Betti
    kernel); ``persistence`` is ``(K+1, T-1)``; ``states`` maps ``(k, j)`` with
    0-based ``j`` to pooled states.
    """

    n: int
    K: int
    grid: ScaleGrid
    states: dict[tuple[int, int], PooledState]
    betti: np.ndarray
    persistence: np.ndarray
    mode: OverlapMode = OverlapMode()
    tol: ZeroTolerance = ZeroTolerance()
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        betti = np.asarray(self.betti, dtype=np.int64).reshape(self.grid.T, self.K + 1)
        pers = np.asarray(self.persistence, dtype=float).reshape(self.K + 1, self.grid.T - 1)
        betti.setflags(write=False)
        pers.setflags(write=False)
        object.__setattr__(self, "betti", betti)
        object.__setattr__(self, "persistence", pers)

    @property
    def T(self) -> int:
        return self.grid.T

    @property
    def betti_vector(self) -> np.ndarray:
        return self.betti.ravel().astype(float)

    @property
    def persistence_vector(self) -> np.ndarray:
        return self.persistence.ravel()

    def state(self, k: int, j: int) -> PooledState:
        return self.states[(k, j)]

    def check_comparable(self, other: HarmonicFeatureSet) -> None:
        """Raise ``IncomparableError`` unless both sets live in the same feature space.

        Scale values must match exactly for fixed grids; grids derived from each
        cloud's own distances (uniform, quantile) match by policy and length.
        """
        problems = []
        if self.n != other.n:
            problems.append(f"n {self.n} vs {other.n}")
        if self.K != other.K:
            problems.append(f"K {self.K} vs {other.K}")
        if self.T != other.T:
            problems.append(f"T {self.T} vs {other.T}")
        if self.grid.policy != other.grid.policy:
            problems.append(f"grid policy {self.grid.policy} vs {other.grid.policy}")
        elif self.grid.policy == "fixed" and not np.array_equal(self.grid.scales, other.grid.scales):
            problems.append("fixed grids differ")
        if problems:
            raise IncomparableError("incomparable feature sets: " + "; ".join(problems))

    def to_dict(self) -> dict:
        states = []
        for (k, j), st in sorted(self.states.items()):
            states.append({
                "k": k,
                "j": j,
                "entries": [[s.tolist(), float(a)] for s, a in zip(st.simplices, st.amplitudes)],
                "basis": [row.tolist() for row in st.basis],
            })
        return {
            "format": FORMAT_VERSION,
            "n": self.n,
            "K": self.K,
            "T": self.T,
            "scales": [float(s) for s in self.grid.scales],
            "betti": self.betti.tolist(),
            "persistence": self.persistence.tolist(),
            "states": states,
            "config": {
                "grid_policy": self.grid.policy,
                "overlap": self.mode.to_dict(),
                "tolerance": {"abs": self.tol.abs, "rel": self.tol.rel},
                "flatten_order": "scale-major",
                "cloud": self.metadata,
            },
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @cached_property
    def digest(self) -> str:
        return hashlib.sha256(self.to_json().encode()).hexdigest()

    @classmethod
    def from_dict(cls, doc: dict) -> HarmonicFeatureSet:
        n, K = doc["n"], doc["K"]
        cfg = doc["config"]
        grid = ScaleGrid(doc["scales"], policy=cfg["grid_policy"])
        states = {}
        for rec in doc["states"]:
            k, j = rec["k"], rec["j"]
            simplices = np.array([e[0] for e in rec["entries"]], dtype=np.int64).reshape(-1, k + 1)
            amps = np.array([e[1] for e in rec["entries"]], dtype=float)
            basis = np.array(rec["basis"], dtype=float).reshape(len(rec["basis"]), simplices.shape[0])
            states[(k, j)] = PooledState(k, n, simplices, amps, basis)
        return cls(
            n, K, grid, states, doc["betti"], doc["persistence"],
            OverlapMode.from_dict(cfg["overlap"]),
            ZeroTolerance(cfg["tolerance"]["abs"], cfg["tolerance"]["rel"]),
            cfg.get("cloud", {}),
        )

    @classmethod
    def from_json(cls, text: str) -> HarmonicFeatureSet:
        return cls.from_dict(json.loads(text))


def extract_features(cloud: PointCloud, grid: ScaleGrid, K: int, mode: OverlapMode = OverlapMode(),
                     tol: ZeroTolerance = ZeroTolerance()) -> HarmonicFeatureSet:
    """Pooled harmonic states, Betti numbers and persistence measures of ``cloud``.

    The Rips complexes include (K+1)-simplices when the cloud has enough points,
    so Betti numbers in dimension K are those of the full complex rather than of
    its K-skeleton.
    """
    if K < 0:
        raise ValueError("K must be non-negative")
    n = cloud.n
    filt = build_vr(pairwise_distances(cloud), grid, min(K + 1, n - 1))
    T = grid.T
    states: dict[tuple[int, int], PooledState] = {}
    betti = np.zeros((T, K + 1), dtype=np.int64)
    for j in range(T):
        cx = None
        for k in range(K + 1):
            if j > 0 and filt.same_level(k, j - 1, j) and filt.same_level(k + 1, j - 1, j):
                states[(k, j)] = states[(k, j - 1)]
            elif k > filt.K:
                states[(k, j)] = PooledState.zero(k, n)
            else:
                cx = filt.at(j) if cx is None else cx
                try:
                    basis = harmonic_basis(laplacian(cx, k, j), tol)
                except EigensolverError as exc:
                    raise EigensolverError(f"feature extraction failed at k={k}, j={j}: {exc}") from exc
                states[(k, j)] = pooled_state(basis, n)
            betti[j, k] = states[(k, j)].b

    persistence = _persistence_layer(states, K, T, mode)
    return HarmonicFeatureSet(n, K, grid, states, betti, persistence, mode, tol, dict(cloud.metadata))


def _persistence_layer(states, K: int, T: int, mode: OverlapMode) -> np.ndarray:
    persistence = np.zeros((K + 1, T - 1))
    for k in range(K + 1):
        for j in range(T - 1):
            persistence[k, j] = overlap(states[(k, j)], states[(k, j + 1)], mode, tag=(0, k, j))
    return persistence


def with_overlap_mode(fs: HarmonicFeatureSet, mode: OverlapMode) -> HarmonicFeatureSet:
    """The same feature set re-evaluated under another overlap mode.

    Harmonic states and Betti numbers do not depend on the mode, so only the
    persistence layer is recomputed; the result equals a fresh extraction.
    """
    return replace(fs, persistence=_persistence_layer(fs.states, fs.K, fs.T, mode), mode=mode)
