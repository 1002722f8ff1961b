"""Vietoris-Rips filtrations, canonical simplex ordering and signed boundary operators.

Simplices are strictly ascending vertex tuples. Within one dimension they are kept
as an ``(m, k+1)`` integer array in lexicographic order, which fixes the
coordinate order of every chain space built on top of them.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sps
from scipy.special import comb

from .geometry import ScaleGrid


def simplex_keys(simplices: np.ndarray) -> np.ndarray:
    """Combinatorial-number-system rank of each ascending row.

    Distinct k-subsets of the vertex labels get distinct keys, so keys index the
    common subset space shared by every complex on the same labeled vertices.
    """
    simplices = np.asarray(simplices, dtype=np.int64)
    if simplices.size == 0:
        return np.zeros(simplices.shape[0], dtype=np.int64)
    keys = np.zeros(simplices.shape[0], dtype=np.int64)
    for i in range(simplices.shape[1]):
        keys += comb(simplices[:, i], i + 1, exact=False).round().astype(np.int64)
    return keys


@dataclass(frozen=True, eq=False)
class SimplicialComplex:
    n: int
    simplices: tuple[np.ndarray, ...]

    def __post_init__(self):
        levels = []
        for k, arr in enumerate(self.simplices):
            a = np.asarray(arr, dtype=np.int64).reshape(-1, k + 1)
            a.setflags(write=False)
            levels.append(a)
        object.__setattr__(self, "simplices", tuple(levels))

    @classmethod
    def from_simplices(cls, n: int, simplices, close: bool = True) -> SimplicialComplex:
        """Build a complex from arbitrary vertex tuples, adding all faces when ``close``."""
        from itertools import combinations

        faces: dict[int, set[tuple[int, ...]]] = {}
        for s in simplices:
            s = tuple(sorted(int(v) for v in s))
            if len(set(s)) != len(s) or (s and (s[0] < 0 or s[-1] >= n)):
                raise ValueError(f"invalid simplex {s} on {n} vertices")
            sizes = range(1, len(s) + 1) if close else [len(s)]
            for size in sizes:
                faces.setdefault(size - 1, set()).update(combinations(s, size))
        if close:
            faces.setdefault(0, set()).update((v,) for v in range(n))
        top = max(faces) if faces else 0
        levels = [np.array(sorted(faces.get(k, ())), dtype=np.int64).reshape(-1, k + 1)
                  for k in range(top + 1)]
        return cls(n, tuple(levels))

    @property
    def K(self) -> int:
        return len(self.simplices) - 1

    def count(self, k: int) -> int:
        if k < 0 or k > self.K:
            return 0
        return self.simplices[k].shape[0]

    def counts(self) -> list[int]:
        return [self.count(k) for k in range(self.K + 1)]

    def euler_characteristic(self) -> int:
        return sum((-1) ** k * c for k, c in enumerate(self.counts()))

    def level(self, k: int) -> np.ndarray:
        if k < 0 or k > self.K:
            return np.zeros((0, max(k, 0) + 1), dtype=np.int64)
        return self.simplices[k]

    @cached_property
    def _sorted_keys(self) -> tuple[tuple[np.ndarray, np.ndarray], ...]:
        out = []
        for arr in self.simplices:
            keys = simplex_keys(arr)
            order = np.argsort(keys, kind="stable")
            out.append((keys[order], order))
        return tuple(out)

    def index_of(self, k: int, simplices: np.ndarray) -> np.ndarray:
        """Row positions of the given k-simplices; raises if any is missing."""
        keys = simplex_keys(np.asarray(simplices).reshape(-1, k + 1))
        sorted_keys, order = self._sorted_keys[k]
        pos = np.searchsorted(sorted_keys, keys)
        pos = np.minimum(pos, max(len(sorted_keys) - 1, 0))
        if len(sorted_keys) == 0 or np.any(sorted_keys[pos] != keys):
            raise KeyError(f"face missing from dimension {k}: complex is not closed")
        return order[pos]

    def check(self) -> None:
        """Raise ``ValueError`` unless the complex is sorted, duplicate-free and closed."""
        for k, arr in enumerate(self.simplices):
            if arr.size and np.any(np.diff(arr, axis=1) <= 0):
                raise ValueError(f"dimension {k}: vertices not strictly ascending")
            if arr.shape[0] > 1:
                rows = [tuple(r) for r in arr]
                if any(a >= b for a, b in zip(rows, rows[1:])):
                    raise ValueError(f"dimension {k}: not lexicographically sorted or duplicated")
            if k > 0 and arr.size:
                for i in range(k + 1):
                    try:
                        self.index_of(k - 1, np.delete(arr, i, axis=1))
                    except KeyError as exc:
                        raise ValueError(str(exc)) from None

    def to_dict(self) -> dict:
        return {"n": self.n, "dims": {str(k): a.tolist() for k, a in enumerate(self.simplices)}}


@dataclass(frozen=True, eq=False)
class BoundaryOperator:
    """Signed map from k-chains (columns) to (k-1)-chains (rows)."""

    k: int
    matrix: sps.csc_matrix
    rows: np.ndarray
    cols: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.matrix.shape

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def boundary(cx: SimplicialComplex, k: int) -> BoundaryOperator:
    """``d_k`` with entry ``(-1)**i`` at the face that drops the i-th vertex.

    ``k = 0`` (or any k with no k-simplices) yields an operator with the right
    shape and no entries; k above the complex dimension has zero columns.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    cols = cx.level(k)
    rows = cx.level(k - 1) if k > 0 else np.zeros((0, 0), dtype=np.int64)
    m_rows, m_cols = rows.shape[0], cols.shape[0]
    if k == 0 or m_cols == 0:
        return BoundaryOperator(k, sps.csc_matrix((m_rows, m_cols), dtype=np.int64), rows, cols)

    row_idx = np.empty((m_cols, k + 1), dtype=np.int64)
    for i in range(k + 1):
        row_idx[:, i] = cx.index_of(k - 1, np.delete(cols, i, axis=1))
    signs = np.tile((-1) ** np.arange(k + 1), m_cols).astype(np.int64)
    col_idx = np.repeat(np.arange(m_cols), k + 1)
    mat = sps.csc_matrix((signs, (row_idx.ravel(), col_idx)), shape=(m_rows, m_cols))
    return BoundaryOperator(k, mat, rows, cols)


@dataclass(frozen=True, eq=False)
class FiltrationComplex:
    """Nested Rips complexes over a scale grid.

    ``simplices[k]`` holds every k-simplex alive at the largest scale;
    ``diameters[k]`` the exact filtration value and ``birth_index[k]`` the first
    grid position whose scale reaches it.
    """

    n: int
    grid: ScaleGrid
    simplices: tuple[np.ndarray, ...]
    diameters: tuple[np.ndarray, ...]
    birth_index: tuple[np.ndarray, ...]

    @property
    def K(self) -> int:
        return len(self.simplices) - 1

    @property
    def T(self) -> int:
        return self.grid.T

    def birth_scales(self, k: int) -> np.ndarray:
        return self.grid.scales[self.birth_index[k]]

    def at(self, j: int) -> SimplicialComplex:
        """Complex at grid position ``j`` (0-based)."""
        if not 0 <= j < self.T:
            raise IndexError(f"scale index {j} outside 0..{self.T - 1}")
        return SimplicialComplex(self.n, tuple(s[b <= j] for s, b in zip(self.simplices, self.birth_index)))

    def complexes(self) -> list[SimplicialComplex]:
        return [self.at(j) for j in range(self.T)]

    def same_level(self, k: int, j1: int, j2: int) -> bool:
        """True when the k-simplex sets at positions j1 and j2 coincide."""
        if k > self.K:
            return True
        b = self.birth_index[k]
        return int(np.count_nonzero(b <= j1)) == int(np.count_nonzero(b <= j2))

    def to_json(self) -> str:
        dims = {}
        for k in range(self.K + 1):
            dims[str(k)] = {
                "simplices": self.simplices[k].tolist(),
                "birth": [float(x) for x in self.birth_scales(k)],
                "diameter": [float(x) for x in self.diameters[k]],
            }
        doc = {"n": self.n, "K": self.K, "scales": [float(s) for s in self.grid.scales], "dims": dims}
        return json.dumps(doc, sort_keys=True)


def build_vr(distances: np.ndarray, grid: ScaleGrid, K: int) -> FiltrationComplex:
    """Rips filtration up to dimension ``K`` by clique expansion of the neighbor graph."""
    d = np.asarray(distances, dtype=float)
    n = d.shape[0]
    if d.ndim != 2 or d.shape[1] != n:
        raise ValueError("distance matrix must be square")
    if K < 0:
        raise ValueError("K must be non-negative")
    if K + 1 > n:
        raise ValueError(f"dimension exceeds vertex count: K={K} needs at least {K + 1} points, got {n}")

    eps_max = grid.scales[-1]
    adj = d <= eps_max
    np.fill_diagonal(adj, False)

    level = np.arange(n, dtype=np.int64).reshape(-1, 1)
    diam = np.zeros(n)
    simplices, diameters = [level], [diam]
    for _ in range(K):
        if level.shape[0] == 0:
            level = np.zeros((0, level.shape[1] + 1), dtype=np.int64)
            diam = np.zeros(0)
        else:
            common = np.ones((level.shape[0], n), dtype=bool)
            for i in range(level.shape[1]):
                common &= adj[level[:, i]]
            common &= np.arange(n)[None, :] > level[:, -1:]
            rows, v = np.nonzero(common)
            new_diam = diam[rows]
            for i in range(level.shape[1]):
                new_diam = np.maximum(new_diam, d[level[rows, i], v])
            level = np.column_stack([level[rows], v]).astype(np.int64)
            diam = new_diam
        simplices.append(level)
        diameters.append(diam)

    births = tuple(np.searchsorted(grid.scales, dm, side="left") for dm in diameters)
    for arr in (*simplices, *diameters, *births):
        arr.setflags(write=False)
    return FiltrationComplex(n, grid, tuple(simplices), tuple(diameters), births)
