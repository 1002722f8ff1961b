"""Classical persistent homology: the label source and ground-truth check.

The reduction works over the two-element field on the full Rips filtration
ordered by exact diameter. It enumerates simplices by brute force over vertex
subsets instead of reusing :mod:`harmonicpd.simplicial`, so that comparing its
Betti counts with the spectral ones checks two independent routes.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Any

import numpy as np
import scipy.sparse as sps
from scipy.sparse.csgraph import maximum_bipartite_matching


class OutOfCatalogError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PersistenceDiagram:
    """Per-dimension ``(m, 2)`` arrays of (birth, death); death may be ``inf``."""

    dims: dict[int, np.ndarray]
    clip_value: float
    provenance: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        dims = {}
        for k, pts in self.dims.items():
            a = np.asarray(pts, dtype=float).reshape(-1, 2)
            if np.any(a[:, 0] > a[:, 1]):
                raise ValueError(f"dimension {k}: birth after death")
            order = np.lexsort((a[:, 1], a[:, 0]))
            a = a[order]
            a.setflags(write=False)
            dims[int(k)] = a
        object.__setattr__(self, "dims", dims)

    @property
    def max_dim(self) -> int:
        return max(self.dims) if self.dims else -1

    def points(self, k: int) -> np.ndarray:
        return self.dims.get(k, np.zeros((0, 2)))

    def clipped(self, k: int) -> np.ndarray:
        pts = self.points(k).copy()
        pts[np.isinf(pts[:, 1]), 1] = self.clip_value
        return pts

    def betti_at(self, eps: float, k: int) -> int:
        """Number of k-classes alive at ``eps``: birth <= eps < death."""
        pts = self.points(k)
        return int(np.count_nonzero((pts[:, 0] <= eps) & (eps < pts[:, 1])))

    def to_json(self) -> str:
        dims = {
            str(k): [[float(b), "inf" if math.isinf(d) else float(d)] for b, d in pts]
            for k, pts in sorted(self.dims.items())
        }
        doc = {"dims": dims, "clip_value": float(self.clip_value), "provenance": self.provenance}
        return json.dumps(doc, sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> PersistenceDiagram:
        doc = json.loads(text)
        dims = {
            int(k): np.array([[b, math.inf if d == "inf" else d] for b, d in pts], dtype=float).reshape(-1, 2)
            for k, pts in doc["dims"].items()
        }
        return cls(dims, doc["clip_value"], doc.get("provenance", {}))


def rips_filtration(distances: np.ndarray, max_dim: int, max_scale: float | None = None):
    """All simplices up to ``max_dim`` with diameter <= ``max_scale``, in filtration order.

    Order: diameter, then dimension, then lexicographic vertex order.
    Returns ``(simplices, values)`` with simplices as tuples.
    """
    d = np.asarray(distances, dtype=float)
    n = d.shape[0]
    cap = np.inf if max_scale is None else max_scale
    simplices: list[tuple[int, ...]] = []
    values: list[float] = []
    dims: list[int] = []
    for size in range(1, max_dim + 2):
        if size > n:
            break
        combo = np.array(list(combinations(range(n), size)), dtype=np.int64).reshape(-1, size)
        diam = np.zeros(combo.shape[0])
        for a, b in combinations(range(size), 2):
            diam = np.maximum(diam, d[combo[:, a], combo[:, b]])
        keep = diam <= cap
        simplices.extend(map(tuple, combo[keep].tolist()))
        values.extend(diam[keep].tolist())
        dims.extend([size - 1] * int(keep.sum()))
    # combinations() already yields lexicographic order within a size
    order = sorted(range(len(simplices)), key=lambda i: (values[i], dims[i], simplices[i]))
    return [simplices[i] for i in order], [values[i] for i in order]


def reduce_boundary(simplices: list[tuple[int, ...]]) -> dict[int, int]:
    """Standard column reduction over GF(2); returns ``{killer_column: creator_row}``."""
    index = {s: i for i, s in enumerate(simplices)}
    low_owner: dict[int, int] = {}
    reduced: dict[int, int] = {}
    pairs: dict[int, int] = {}
    for j, s in enumerate(simplices):
        if len(s) == 1:
            continue
        col = 0
        for i in range(len(s)):
            col |= 1 << index[s[:i] + s[i + 1:]]
        while col:
            low = col.bit_length() - 1
            other = low_owner.get(low)
            if other is None:
                low_owner[low] = j
                reduced[j] = col
                pairs[j] = low
                break
            col ^= reduced[other]
    return pairs


def compute_ph(distances: np.ndarray, K: int, max_scale: float | None = None,
               provenance: dict[str, Any] | None = None) -> PersistenceDiagram:
    """Persistence diagram of the Rips filtration in dimensions 0..K.

    Simplices of dimension K+1 are included so that K-cycles can die.
    Zero-length pairs are dropped. With ``max_scale`` the filtration is
    truncated and classes alive at the cap get infinite death.
    """
    d = np.asarray(distances, dtype=float)
    n = d.shape[0]
    if K < 0:
        raise ValueError("K must be non-negative")
    if K + 1 > n:
        raise ValueError(f"dimension exceeds vertex count: K={K} with {n} points")
    simplices, values = rips_filtration(d, min(K + 1, n - 1), max_scale)
    clip = float(values[-1]) if max_scale is None else float(max_scale)
    prov = {"filtration": "rips", "coefficients": "GF(2)", "max_dim": K,
            "max_scale": max_scale, "clip": "max filtration value" if max_scale is None else "max_scale"}
    if provenance:
        prov.update(provenance)
    return diagram_from_filtration(simplices, values, K, clip, prov)


def diagram_from_filtration(simplices: list[tuple[int, ...]], values: list[float], K: int, clip: float,
                            provenance: dict[str, Any] | None = None) -> PersistenceDiagram:
    """Reduce a filtration given in a valid order (faces before cofaces, values non-decreasing)."""
    pairs = reduce_boundary(simplices)
    creators = set(pairs.values())
    points: dict[int, list[tuple[float, float]]] = {k: [] for k in range(K + 1)}
    for j, i in pairs.items():
        k = len(simplices[i]) - 1
        if k <= K and values[i] < values[j]:
            points[k].append((values[i], values[j]))
    for i, s in enumerate(simplices):
        k = len(s) - 1
        if k <= K and i not in creators and i not in pairs:
            points[k].append((values[i], math.inf))
    return PersistenceDiagram(points, clip, dict(provenance or {}))


def bottleneck(d1: PersistenceDiagram, d2: PersistenceDiagram, k: int) -> float:
    """Bottleneck distance in dimension ``k`` with infinite deaths clipped per diagram."""
    return bottleneck_points(d1.clipped(k), d2.clipped(k))


def bottleneck_points(a: np.ndarray, b: np.ndarray) -> float:
    """Bottleneck distance between finite diagrams given as ``(m, 2)`` arrays.

    Binary search over candidate radii; each radius is tested by checking for a
    perfect matching in the graph that augments each side with diagonal copies
    of the other side's points.
    """
    a = np.asarray(a, dtype=float).reshape(-1, 2)
    b = np.asarray(b, dtype=float).reshape(-1, 2)
    na, nb = len(a), len(b)
    if na + nb == 0:
        return 0.0
    cross = np.max(np.abs(a[:, None, :] - b[None, :, :]), axis=2) if na and nb else np.zeros((na, nb))
    half_a = (a[:, 1] - a[:, 0]) / 2
    half_b = (b[:, 1] - b[:, 0]) / 2
    candidates = np.unique(np.concatenate([[0.0], cross.ravel(), half_a, half_b]))

    def feasible(r: float) -> bool:
        size = na + nb
        adj = np.zeros((size, size), dtype=bool)
        # left: a points then b-diagonal copies; right: b points then a-diagonal copies
        adj[:na, :nb] = cross <= r
        adj[np.arange(na), nb + np.arange(na)] = half_a <= r
        adj[na + np.arange(nb), np.arange(nb)] = half_b <= r
        adj[na:, nb:] = True
        match = maximum_bipartite_matching(sps.csr_matrix(adj), perm_type="column")
        return bool(np.all(match >= 0))

    lo, hi = 0, len(candidates) - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if feasible(candidates[mid]):
            hi = mid
        else:
            lo = mid + 1
    return float(candidates[lo])


def diagram_distance(d1: PersistenceDiagram, d2: PersistenceDiagram) -> float:
    """Largest per-dimension bottleneck distance."""
    dims = set(range(max(d1.max_dim, d2.max_dim) + 1))
    return max((bottleneck(d1, d2, k) for k in dims), default=0.0)


@dataclass(frozen=True, eq=False)
class DiagramClassCatalog:
    """Exemplar diagrams keyed by class id, with names and an assignment radius."""

    exemplars: dict[int, PersistenceDiagram]
    names: dict[int, str]
    radius: float
    policy: str = "generator_label"

    def __post_init__(self):
        if self.policy not in ("generator_label", "nearest_exemplar"):
            raise ValueError(f"unknown assignment policy {self.policy!r}")
        ids = sorted(self.exemplars)
        for i, a in enumerate(ids):
            for b in ids[i + 1:]:
                dist = diagram_distance(self.exemplars[a], self.exemplars[b])
                if dist <= 2 * self.radius:
                    raise ValueError(
                        f"exemplars {a} and {b} are {dist:.4g} apart; catalog needs more than 2r={2 * self.radius:.4g}"
                    )

    def id_for_name(self, name: str) -> int:
        for cid, nm in self.names.items():
            if nm == name:
                return cid
        raise OutOfCatalogError(f"out of catalog: no class named {name!r}")


def assign_class(diagram: PersistenceDiagram, catalog: DiagramClassCatalog) -> tuple[int, float | None]:
    """Class id for a diagram and, under ``nearest_exemplar``, its distance to the exemplar."""
    if catalog.policy == "generator_label":
        shape = diagram.provenance.get("shape")
        if shape is None:
            raise OutOfCatalogError("out of catalog: diagram carries no generator label")
        return catalog.id_for_name(shape), None
    best_id, best = None, math.inf
    for cid in sorted(catalog.exemplars):
        dist = diagram_distance(diagram, catalog.exemplars[cid])
        if dist < best:
            best_id, best = cid, dist
    if best_id is None or best > catalog.radius:
        raise OutOfCatalogError(f"out of catalog: nearest exemplar is {best:.4g} away, radius {catalog.radius:.4g}")
    return best_id, best
