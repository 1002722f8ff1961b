"""Hodge Laplacians, the Dirac operator, harmonic bases and pooled harmonic states.

This is the exact linear-algebra stand-in for quantum phase estimation: the zero
eigenspace of each Laplacian is computed directly and its dimension is the Betti
number of the complex.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sps
import scipy.sparse.linalg as spla

from .simplicial import SimplicialComplex, boundary, simplex_keys

# below this size the full spectrum is cheaper than a targeted solve
_FULL_EIGH_LIMIT = 96
# relative residual a row must keep to become a pivot of the canonical basis
_PIVOT_TOL = 1e-6


class EigensolverError(RuntimeError):
    pass


@dataclass(frozen=True)
class ZeroTolerance:
    """An eigenvalue counts as zero when it is below ``abs + rel * lambda_max``."""

    abs: float = 1e-12
    rel: float = 1e-9

    def threshold(self, lam_max: float) -> float:
        return self.abs + self.rel * max(lam_max, 0.0)


@dataclass(frozen=True, eq=False)
class Laplacian:
    k: int
    matrix: sps.csr_matrix
    simplices: np.ndarray
    j: int | None = None

    @property
    def size(self) -> int:
        return self.matrix.shape[0]

    def toarray(self) -> np.ndarray:
        return self.matrix.toarray()


def laplacian(cx: SimplicialComplex, k: int, j: int | None = None) -> Laplacian:
    """``d_k^T d_k + d_{k+1} d_{k+1}^T`` over the k-simplices of ``cx``.

    The down term vanishes for k = 0 and the up term for k = K. Entries are
    integers, so the result is exact.
    """
    if k < 0:
        raise ValueError("k must be non-negative")
    simplices = cx.level(k)
    m = simplices.shape[0]
    lap = sps.csr_matrix((m, m), dtype=np.int64)
    if m and k >= 1:
        d = boundary(cx, k).matrix
        lap = lap + (d.T @ d).tocsr()
    if m and k + 1 <= cx.K:
        d = boundary(cx, k + 1).matrix
        lap = lap + (d @ d.T).tocsr()
    return Laplacian(k, lap.astype(float).tocsr(), simplices, j)


@dataclass(frozen=True, eq=False)
class DiracOperator:
    matrix: sps.csr_matrix
    offsets: tuple[int, ...]

    def block(self, mat: np.ndarray | sps.spmatrix, k1: int, k2: int):
        o = self.offsets
        return mat[o[k1]:o[k1 + 1], o[k2]:o[k2 + 1]]


def dirac(cx: SimplicialComplex) -> DiracOperator:
    """Symmetric block matrix with ``d_k`` in block (k-1, k) and its transpose in (k, k-1)."""
    sizes = cx.counts()
    offsets = tuple(int(x) for x in np.concatenate([[0], np.cumsum(sizes)]))
    total = offsets[-1]
    rows, cols, vals = [], [], []
    for k in range(1, cx.K + 1):
        d = boundary(cx, k).matrix.tocoo()
        r = d.row + offsets[k - 1]
        c = d.col + offsets[k]
        rows += [r, c]
        cols += [c, r]
        vals += [d.data, d.data]
    if rows:
        mat = sps.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(total, total)
        )
    else:
        mat = sps.csr_matrix((total, total), dtype=np.int64)
    return DiracOperator(mat, offsets)


@dataclass(frozen=True, eq=False)
class HarmonicBasis:
    """Orthonormal basis of ker Laplacian, one row per basis vector."""

    k: int
    vectors: np.ndarray
    simplices: np.ndarray
    threshold: float
    lambda_max: float

    @property
    def b(self) -> int:
        return self.vectors.shape[0]


def harmonic_basis(lap: Laplacian, tol: ZeroTolerance = ZeroTolerance()) -> HarmonicBasis:
    """Canonical orthonormal basis of the zero eigenspace.

    The eigensolver only determines the subspace. The returned basis is the
    Gram-Schmidt orthonormalization of the projections of the coordinate
    vectors, taken in simplex order, with the first significant coordinate of
    each vector made positive. It therefore depends only on the subspace and the
    canonical simplex order, not on solver internals.
    """
    m = lap.size
    if m == 0:
        return HarmonicBasis(lap.k, np.zeros((0, 0)), lap.simplices, tol.abs, 0.0)
    try:
        null, lam_max, thr = _null_space(lap.matrix, tol)
    except (np.linalg.LinAlgError, spla.ArpackError, spla.ArpackNoConvergence) as exc:
        dense = lap.toarray()
        raise EigensolverError(
            f"eigensolver failed on Laplacian k={lap.k} scale={lap.j} size={m}: {exc}; "
            f"frobenius norm={np.linalg.norm(dense):.3e}, "
            f"diagonal range=[{dense.diagonal().min():.3e}, {dense.diagonal().max():.3e}]"
        ) from exc
    vectors = _canonical_rows(null)
    return HarmonicBasis(lap.k, vectors, lap.simplices, thr, lam_max)


def _null_space(mat: sps.csr_matrix, tol: ZeroTolerance) -> tuple[np.ndarray, float, float]:
    m = mat.shape[0]
    dense = mat.toarray()
    if m <= _FULL_EIGH_LIMIT:
        w, v = np.linalg.eigh(dense)
        lam_max = float(w[-1])
        thr = tol.threshold(lam_max)
        return v[:, w < thr], lam_max, thr
    # fixed start vector so repeated runs are bit-identical
    v0 = np.random.default_rng(0).standard_normal(m)
    lam_max = float(spla.eigsh(mat, k=1, which="LA", return_eigenvectors=False, tol=1e-6, v0=v0)[0])
    # the Krylov estimate is accurate to ~1e-6 relative; irrelevant at a 1e-9 relative threshold
    thr = tol.threshold(lam_max)
    # a successful Cholesky of (L - thr I) proves every eigenvalue exceeds thr
    try:
        sla.cholesky(dense - thr * np.eye(m), check_finite=False)
        return np.zeros((m, 0)), lam_max, thr
    except np.linalg.LinAlgError:
        pass
    w, v = sla.eigh(dense, subset_by_value=(-np.inf, thr), driver="evr")
    return v, lam_max, thr


def _canonical_rows(null: np.ndarray) -> np.ndarray:
    m, b = null.shape
    if b == 0:
        return np.zeros((0, m))
    row_norms = np.linalg.norm(null, axis=1)
    cutoff = _PIVOT_TOL * row_norms.max()
    w = np.zeros((b, 0))
    for i in range(m):
        if row_norms[i] <= cutoff:
            continue
        r = null[i].copy()
        for _ in range(2):
            r -= w @ (w.T @ r)
        nr = np.linalg.norm(r)
        if nr > cutoff:
            w = np.column_stack([w, r / nr])
            if w.shape[1] == b:
                break
    if w.shape[1] < b:
        # numerically rank-deficient pivots; complete with an arbitrary orthonormal extension
        q, _ = np.linalg.qr(np.column_stack([w, np.eye(b)]))
        w = q[:, :b]
    vectors = (null @ w).T
    # re-orthonormalize against rounding in the change of basis
    q, r = np.linalg.qr(vectors.T)
    vectors = (q * np.sign(np.diag(r))).T
    for row in vectors:
        big = np.flatnonzero(np.abs(row) > 1e-9 * np.abs(row).max())
        if row[big[0]] < 0:
            row *= -1
    return vectors


@dataclass(frozen=True, eq=False)
class PooledState:
    """Unit vector in the space indexed by k-subsets of ``n`` labeled vertices.

    ``keys`` and ``simplices`` list the support; ``amplitudes`` the pooled
    superposition and ``basis`` the harmonic vectors it pools (rows). The zero
    sentinel has ``b == 0`` and empty support.
    """

    k: int
    n: int
    simplices: np.ndarray
    amplitudes: np.ndarray
    basis: np.ndarray

    def __post_init__(self):
        simplices = np.asarray(self.simplices, dtype=np.int64).reshape(-1, self.k + 1)
        amps = np.asarray(self.amplitudes, dtype=float).ravel()
        basis = np.asarray(self.basis, dtype=float)
        basis = basis.reshape(-1, simplices.shape[0]) if basis.size else np.zeros((0, simplices.shape[0]))
        if amps.size != simplices.shape[0]:
            raise ValueError("amplitudes and support differ in length")
        for arr in (simplices, amps, basis):
            arr.setflags(write=False)
        object.__setattr__(self, "simplices", simplices)
        object.__setattr__(self, "amplitudes", amps)
        object.__setattr__(self, "basis", basis)
        keys = simplex_keys(simplices)
        keys.setflags(write=False)
        object.__setattr__(self, "keys", keys)

    @classmethod
    def zero(cls, k: int, n: int) -> PooledState:
        return cls(k, n, np.zeros((0, k + 1), dtype=np.int64), np.zeros(0), np.zeros((0, 0)))

    @property
    def b(self) -> int:
        return self.basis.shape[0]

    @property
    def is_zero(self) -> bool:
        return self.b == 0

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def as_dict(self) -> dict[tuple[int, ...], float]:
        return {tuple(int(v) for v in s): float(a) for s, a in zip(self.simplices, self.amplitudes)}

    def same_as(self, other: PooledState) -> bool:
        return (
            self is other
            or (
                self.k == other.k
                and self.n == other.n
                and np.array_equal(self.simplices, other.simplices)
                and np.array_equal(self.amplitudes, other.amplitudes)
                and np.array_equal(self.basis, other.basis)
            )
        )


def pooled_state(basis: HarmonicBasis, n: int) -> PooledState:
    """Uniform superposition of the harmonic basis, renormalized to unit length."""
    if basis.b == 0:
        return PooledState.zero(basis.k, n)
    psi = basis.vectors.sum(axis=0) / np.sqrt(basis.b)
    norm = np.linalg.norm(psi)
    if norm != 1.0:
        psi = psi / norm
    return PooledState(basis.k, n, basis.simplices, psi, basis.vectors)


def betti_numbers(cx: SimplicialComplex, K: int | None = None, tol: ZeroTolerance = ZeroTolerance()) -> list[int]:
    """``dim ker Laplacian_k`` for k = 0..K (K defaults to the complex dimension)."""
    K = cx.K if K is None else K
    return [harmonic_basis(laplacian(cx, k), tol).b if k <= cx.K else 0 for k in range(K + 1)]
