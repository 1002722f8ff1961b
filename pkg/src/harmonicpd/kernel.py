"""Mixed topological kernel: harmonic, Betti and persistence terms and their Gram matrices."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .features import HarmonicFeatureSet, OverlapMode, overlap

PSD_TOL = 1e-8
PSD_MARGIN = 1e-10


@dataclass(frozen=True)
class KernelConfig:
    lambdas: tuple[float, float, float] = (1.0, 1.0, 1.0)
    gamma_band: float = 1.0
    overlap: OverlapMode = OverlapMode()
    normalize_betti: bool = False

    def __post_init__(self):
        lam = tuple(float(x) for x in self.lambdas)
        if len(lam) != 3 or min(lam) < 0 or sum(lam) <= 0:
            raise ValueError(f"weights must be three non-negative numbers with positive sum, got {self.lambdas}")
        if not self.gamma_band > 0:
            raise ValueError("gamma_band must be positive")
        object.__setattr__(self, "lambdas", lam)

    @property
    def nonzero_weights(self) -> int:
        return sum(1 for x in self.lambdas if x != 0)

    def scaled(self, c: float) -> KernelConfig:
        return replace(self, lambdas=tuple(c * x for x in self.lambdas))

    def to_dict(self) -> dict:
        return {
            "lambdas": list(self.lambdas),
            "gamma_band": self.gamma_band,
            "overlap": self.overlap.to_dict(),
            "normalize_betti": self.normalize_betti,
        }

    @classmethod
    def from_dict(cls, d: dict) -> KernelConfig:
        return cls(tuple(d["lambdas"]), d["gamma_band"], OverlapMode.from_dict(d["overlap"]),
                   d.get("normalize_betti", False))


def _pair_tag(a: HarmonicFeatureSet, b: HarmonicFeatureSet) -> tuple[int, int]:
    # order-free so that shot-mode Gram matrices stay symmetric
    x, y = sorted((int(a.digest[:15], 16), int(b.digest[:15], 16)))
    return x, y


def k_harmonic(a: HarmonicFeatureSet, b: HarmonicFeatureSet, mode: OverlapMode | None = None) -> float:
    """Sum over dimensions and scales of the pooled-state overlaps."""
    a.check_comparable(b)
    mode = a.mode if mode is None else mode
    tag = _pair_tag(a, b) if mode.kind == "shots" else (0, 0)
    total = 0.0
    for k in range(a.K + 1):
        for t in range(a.T):
            total += overlap(a.state(k, t), b.state(k, t), mode, tag=(1, *tag, k, t))
    return total


def k_betti(a: HarmonicFeatureSet, b: HarmonicFeatureSet, normalize: bool = False) -> float:
    """Inner product of the flattened Betti matrices, optionally cosine-normalized."""
    if a.betti.shape != b.betti.shape:
        raise ValueError(f"Betti matrices differ in shape: {a.betti.shape} vs {b.betti.shape}")
    va, vb = a.betti_vector, b.betti_vector
    value = float(va @ vb)
    if normalize:
        denom = float(np.linalg.norm(va) * np.linalg.norm(vb))
        return value / denom if denom > 0 else 0.0
    return value


def k_persist(a: HarmonicFeatureSet, b: HarmonicFeatureSet, gamma_band: float = 1.0) -> float:
    """Gaussian kernel on the flattened persistence matrices."""
    if a.persistence.shape != b.persistence.shape:
        raise ValueError(f"persistence matrices differ in shape: {a.persistence.shape} vs {b.persistence.shape}")
    if not gamma_band > 0:
        raise ValueError("gamma_band must be positive")
    diff = a.persistence_vector - b.persistence_vector
    return float(np.exp(-gamma_band * (diff @ diff)))


def k_topo(a: HarmonicFeatureSet, b: HarmonicFeatureSet, config: KernelConfig = KernelConfig()) -> float:
    l1, l2, l3 = config.lambdas
    a.check_comparable(b)
    value = 0.0
    if l1:
        value += l1 * k_harmonic(a, b, config.overlap)
    if l2:
        value += l2 * k_betti(a, b, config.normalize_betti)
    if l3:
        value += l3 * k_persist(a, b, config.gamma_band)
    return value


@dataclass(frozen=True, eq=False)
class ComponentGrams:
    """The three kernel terms evaluated once, so weights can be varied cheaply.

    ``persist_sqdist`` holds squared distances; the Gaussian is applied when
    combining. For a cross block, rows are the ``left`` sets, columns ``right``.
    """

    harmonic: np.ndarray
    betti: np.ndarray
    persist_sqdist: np.ndarray

    def combine(self, config: KernelConfig) -> np.ndarray:
        l1, l2, l3 = config.lambdas
        out = np.zeros_like(self.harmonic)
        if l1:
            out += l1 * self.harmonic
        if l2:
            out += l2 * self.betti
        if l3:
            out += l3 * np.exp(-config.gamma_band * self.persist_sqdist)
        return out

    def subset(self, rows, cols) -> ComponentGrams:
        ix = np.ix_(rows, cols)
        return ComponentGrams(self.harmonic[ix], self.betti[ix], self.persist_sqdist[ix])


def component_grams(left: Sequence[HarmonicFeatureSet], right: Sequence[HarmonicFeatureSet] | None = None,
                    mode: OverlapMode | None = None, normalize_betti: bool = False) -> ComponentGrams:
    symmetric = right is None
    right = left if right is None else right
    if not left or not right:
        raise ValueError("need at least one feature set on each side")
    for f in (*left, *right):
        left[0].check_comparable(f)
    mode = left[0].mode if mode is None else mode

    bl = np.array([f.betti_vector for f in left])
    br = np.array([f.betti_vector for f in right])
    betti = bl @ br.T
    if normalize_betti:
        nl, nr = np.linalg.norm(bl, axis=1), np.linalg.norm(br, axis=1)
        denom = np.outer(nl, nr)
        betti = np.divide(betti, denom, out=np.zeros_like(betti), where=denom > 0)
    pl = np.array([f.persistence_vector for f in left])
    pr = np.array([f.persistence_vector for f in right])
    sqdist = np.sum((pl[:, None, :] - pr[None, :, :]) ** 2, axis=2)

    harm = np.zeros((len(left), len(right)))
    for i, a in enumerate(left):
        for j, b in enumerate(right):
            if symmetric and j < i:
                harm[i, j] = harm[j, i]
            else:
                harm[i, j] = k_harmonic(a, b, mode)
    return ComponentGrams(harm, betti, sqdist)


@dataclass(frozen=True, eq=False)
class KernelMatrix:
    matrix: np.ndarray
    config: KernelConfig
    shift_applied: float = 0.0
    min_eigenvalue: float = 0.0
    digests: tuple[str, ...] = field(default_factory=tuple)

    @property
    def M(self) -> int:
        return self.matrix.shape[0]

    def to_json(self) -> str:
        doc = {
            "M": self.M,
            "config": self.config.to_dict(),
            "shift_applied": self.shift_applied,
            "min_eigenvalue": self.min_eigenvalue,
            "digests": list(self.digests),
            "rows": self.matrix.tolist(),
        }
        return json.dumps(doc, sort_keys=True)


def repair_psd(mat: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Symmetrize and shift the diagonal when the smallest eigenvalue is below ``-1e-8``.

    Returns ``(matrix, shift, min_eigenvalue_before)``.
    """
    mat = (mat + mat.T) / 2
    lam_min = float(np.linalg.eigvalsh(mat)[0]) if mat.size else 0.0
    shift = 0.0
    if lam_min < -PSD_TOL:
        shift = abs(lam_min) + PSD_MARGIN
        mat = mat + shift * np.eye(mat.shape[0])
    return mat, shift, lam_min


def gram(features: Sequence[HarmonicFeatureSet], config: KernelConfig = KernelConfig(),
         components: ComponentGrams | None = None) -> KernelMatrix:
    """Gram matrix of ``k_topo`` over ``features`` with the diagonal-shift PSD repair."""
    comps = components or component_grams(features, mode=config.overlap, normalize_betti=config.normalize_betti)
    mat, shift, lam_min = repair_psd(comps.combine(config))
    return KernelMatrix(mat, config, shift, lam_min, tuple(f.digest for f in features))
