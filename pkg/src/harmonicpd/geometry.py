"""Point clouds, distances, scale grids and seeded synthetic shape generators."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
from scipy.spatial.distance import pdist, squareform
from scipy.spatial.transform import Rotation

GENERATOR_VERSION = f"harmonicpd-gen/1 numpy.PCG64/{np.__version__}"

SHAPES = ("circle", "two_circles", "sphere", "torus", "blob")
MIN_POINTS = {"circle": 3, "two_circles": 6, "sphere": 4, "torus": 8, "blob": 1}

# relative step used to break ties in quantile grids
QUANTILE_DEDUP_STEP = 1e-9


class MalformedCloudError(ValueError):
    pass


class DegenerateCloudError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        pts = np.array(self.points, dtype=float)
        if pts.ndim == 1:
            pts = pts.reshape(-1, 1)
        if pts.ndim != 2 or pts.shape[0] < 1 or pts.shape[1] < 1:
            raise ValueError(f"point cloud needs shape (n>=1, d>=1), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("point cloud contains non-finite coordinates")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "metadata", dict(self.metadata))

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]

    @property
    def shape_name(self) -> str | None:
        return self.metadata.get("shape")


@dataclass(frozen=True, eq=False)
class ScaleGrid:
    scales: np.ndarray
    policy: str = "fixed"

    def __post_init__(self):
        s = np.array(self.scales, dtype=float).ravel()
        if s.size < 2:
            raise ValueError("a scale grid needs at least two scales")
        if np.any(s < 0) or not np.all(np.isfinite(s)):
            raise ValueError("scales must be finite and non-negative")
        if np.any(np.diff(s) <= 0):
            raise ValueError("scales must be strictly increasing")
        s.setflags(write=False)
        object.__setattr__(self, "scales", s)

    @property
    def T(self) -> int:
        return self.scales.size

    def __len__(self) -> int:
        return self.scales.size

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, ScaleGrid):
            return NotImplemented
        return self.policy == other.policy and np.array_equal(self.scales, other.scales)

    __hash__ = None


def pairwise_distances(cloud: PointCloud) -> np.ndarray:
    """Euclidean distance matrix with an exactly zero diagonal."""
    if cloud.n == 1:
        return np.zeros((1, 1))
    return squareform(pdist(cloud.points))


def make_scale_grid(distances: np.ndarray, T: int, policy: str = "uniform") -> ScaleGrid:
    """Scale grid of ``T`` values derived from a distance matrix.

    ``uniform`` spaces the scales evenly over ``(0, d_max]``. ``quantile`` takes the
    ``i/T`` quantiles of the off-diagonal distances; repeated values are pushed
    apart by ``1e-9 * d_max`` steps so the grid stays strictly increasing.
    """
    if T < 2:
        raise ValueError("T must be at least 2")
    distances = np.asarray(distances, dtype=float)
    d_max = float(distances.max()) if distances.size else 0.0
    if d_max <= 0.0:
        raise DegenerateCloudError("degenerate cloud: all pairwise distances are zero")

    if policy == "uniform":
        scales = d_max * np.arange(1, T + 1) / T
        scales[-1] = d_max
    elif policy == "quantile":
        iu = np.triu_indices(distances.shape[0], k=1)
        scales = np.quantile(distances[iu], np.arange(1, T + 1) / T)
        scales = _deduplicate(scales, QUANTILE_DEDUP_STEP * d_max)
    else:
        raise ValueError(f"unknown grid policy {policy!r}")
    return ScaleGrid(scales, policy=policy)


def _deduplicate(q: np.ndarray, step: float) -> np.ndarray:
    q = np.array(q, dtype=float)
    for i in range(q.size - 2, -1, -1):
        if q[i] >= q[i + 1]:
            q[i] = q[i + 1] - step
    if q[0] < 0:
        # pushing down crossed zero; push up from zero instead
        q[0] = max(q[0], 0.0)
        for i in range(1, q.size):
            if q[i] <= q[i - 1]:
                q[i] = q[i - 1] + step
    return q


def generate(shape: str, n: int, noise: float = 0.0, seed: int = 0) -> PointCloud:
    """Sample ``n`` points from a shape with known topology.

    All randomness comes from one PCG64 stream seeded by ``seed``; the same
    arguments always give bit-identical points.
    """
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}; expected one of {', '.join(SHAPES)}")
    if n < MIN_POINTS[shape]:
        raise ValueError(f"{shape} needs at least {MIN_POINTS[shape]} points, got {n}")
    if noise < 0:
        raise ValueError("noise must be non-negative")
    seed = int(seed)
    rng = np.random.Generator(np.random.PCG64(seed & 0xFFFFFFFFFFFFFFFF))

    if shape == "circle":
        pts = _circle(n, rng)
    elif shape == "two_circles":
        n1 = (n + 1) // 2
        a = _circle(n1, rng)
        b = _circle(n - n1, rng) + np.array([3.0, 0.0])
        pts = np.vstack([a, b])
    elif shape == "sphere":
        pts = _sphere(n, rng)
    elif shape == "torus":
        pts = _torus(n, rng)
    else:
        pts = rng.standard_normal((n, 3))

    if noise > 0:
        pts = pts + noise * rng.standard_normal(pts.shape)
    meta = {
        "shape": shape,
        "n": n,
        "noise": float(noise),
        "seed": seed,
        "generator_version": GENERATOR_VERSION,
    }
    return PointCloud(pts, meta)


def _circle(n: int, rng: np.random.Generator) -> np.ndarray:
    # stratified angles keep gaps below two strata
    theta = 2 * np.pi * (np.arange(n) + 0.5 * rng.random(n)) / n + 2 * np.pi * rng.random()
    return np.column_stack([np.cos(theta), np.sin(theta)])


def _sphere(n: int, rng: np.random.Generator) -> np.ndarray:
    i = np.arange(n)
    z = 1 - (2 * i + 1) / n
    r = np.sqrt(1 - z**2)
    phi = i * np.pi * (3 - np.sqrt(5))
    pts = np.column_stack([r * np.cos(phi), r * np.sin(phi), z])
    return Rotation.random(random_state=rng).apply(pts)


TORUS_R, TORUS_r = 2.0, 1.0


def _torus(n: int, rng: np.random.Generator) -> np.ndarray:
    # sheared lattice: ~n_u rings of ~n_v points, aspect matched to the radii
    n_v = max(3, int(round(np.sqrt(n * TORUS_r / TORUS_R))))
    n_u = max(1, int(round(n / n_v)))
    i = np.arange(n)
    u = 2 * np.pi * i / n + 2 * np.pi * rng.random()
    v = 2 * np.pi * ((i * n_u / n) % 1.0) + 2 * np.pi * rng.random()
    ring = TORUS_R + TORUS_r * np.cos(v)
    return np.column_stack([ring * np.cos(u), ring * np.sin(u), TORUS_r * np.sin(v)])


def write_cloud(cloud: PointCloud, path: str | Path) -> None:
    """Write ``path`` as headerless CSV and, if metadata exists, a ``<name>.json`` sidecar."""
    path = Path(path)
    lines = [",".join(repr(float(x)) for x in row) for row in cloud.points]
    path.write_text("\n".join(lines) + "\n")
    if cloud.metadata:
        sidecar_path(path).write_text(json.dumps(cloud.metadata, sort_keys=True, indent=2) + "\n")


def read_cloud(path: str | Path) -> PointCloud:
    path = Path(path)
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rows.append([float(tok) for tok in line.split(",")])
        except ValueError as exc:
            raise MalformedCloudError(f"{path}:{lineno}: malformed CSV line") from exc
    if not rows:
        raise MalformedCloudError(f"{path}: malformed CSV, no points")
    if len({len(r) for r in rows}) != 1:
        raise MalformedCloudError(f"{path}: malformed CSV, rows have differing dimensions")
    meta = {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text())
    return PointCloud(np.array(rows), meta)


def sidecar_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".json")
