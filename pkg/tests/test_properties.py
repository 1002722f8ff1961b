"""Randomized invariants over clouds, complexes, states, kernels and diagrams."""

import itertools

import numpy as np
import scipy.sparse as sps
from hypothesis import given, settings
from hypothesis import strategies as st

from harmonicpd.features import OverlapMode, extract_features, persistence_measure, with_overlap_mode
from harmonicpd.geometry import SHAPES, PointCloud, ScaleGrid, generate, make_scale_grid, pairwise_distances
from harmonicpd.kernel import KernelConfig, gram, k_topo
from harmonicpd.oracle import bottleneck_points, compute_ph
from harmonicpd.simplicial import SimplicialComplex, boundary, build_vr
from harmonicpd.spectral import betti_numbers, dirac, harmonic_basis, laplacian, pooled_state
from harmonicpd.svm import TrainingSet, train

seeds = st.integers(0, 2**32 - 1)


@st.composite
def clouds(draw, n_max=14):
    shape = draw(st.sampled_from(SHAPES))
    n = draw(st.integers(8, n_max))
    noise = draw(st.sampled_from([0.0, 0.02, 0.1]))
    return generate(shape, n, noise, draw(seeds))


@st.composite
def complexes(draw):
    n = draw(st.integers(1, 7))
    faces = draw(st.lists(st.lists(st.integers(0, n - 1), min_size=1, max_size=4, unique=True), max_size=10))
    return SimplicialComplex.from_simplices(n, faces or [[0]])


@st.composite
def diagrams(draw, max_points=4):
    m = draw(st.integers(0, max_points))
    births = draw(st.lists(st.floats(0, 5), min_size=m, max_size=m))
    lengths = draw(st.lists(st.floats(0, 3), min_size=m, max_size=m))
    return np.array([[b, b + length] for b, length in zip(births, lengths)]).reshape(-1, 2)


@given(clouds())
def test_distances_are_a_metric(cloud):
    d = pairwise_distances(cloud)
    assert np.array_equal(d, d.T) and np.all(np.diag(d) == 0)
    for i, j, k in itertools.combinations(range(cloud.n), 3):
        assert d[i, k] <= d[i, j] + d[j, k] + 1e-12


@given(clouds(), st.integers(2, 12), st.sampled_from(["uniform", "quantile"]))
def test_grids_increase(cloud, T, policy):
    d = pairwise_distances(cloud)
    grid = make_scale_grid(d, T, policy)
    assert np.all(np.diff(grid.scales) > 0) and grid.T == T
    if policy == "uniform":
        assert grid.scales[-1] == d.max()


@given(seeds, seeds)
def test_generator_seeds(a, b):
    x, y = generate("torus", 20, 0.1, a), generate("torus", 20, 0.1, b)
    assert np.array_equal(x.points, generate("torus", 20, 0.1, a).points)
    assert (a == b) == np.array_equal(x.points, y.points)


@given(complexes())
def test_chain_identities_and_euler(cx):
    for k in range(1, cx.K):
        assert not np.any(boundary(cx, k).toarray() @ boundary(cx, k + 1).toarray())
    B = dirac(cx).matrix
    direct = sps.block_diag([laplacian(cx, k).matrix for k in range(cx.K + 1)]).toarray()
    assert np.max(np.abs((B @ B).toarray() - direct), initial=0.0) <= 1e-12
    betti = betti_numbers(cx)
    assert cx.euler_characteristic() == sum((-1) ** k * b for k, b in enumerate(betti))


@given(complexes())
def test_harmonic_bases(cx):
    for k in range(cx.K + 1):
        basis = harmonic_basis(laplacian(cx, k))
        assert np.allclose(basis.vectors @ basis.vectors.T, np.eye(basis.b), atol=1e-10)
        assert np.array_equal(harmonic_basis(laplacian(cx, k)).vectors, basis.vectors)
        psi = pooled_state(basis, cx.n)
        assert psi.is_zero or abs(psi.norm() - 1) <= 1e-10


@settings(max_examples=25)
@given(clouds(), st.integers(2, 8), st.integers(0, 2))
def test_filtration_monotone_and_persistence_rules(cloud, T, K):
    d = pairwise_distances(cloud)
    grid = make_scale_grid(d, T)
    filt = build_vr(d, grid, min(K + 1, cloud.n - 1))
    counts = np.array([filt.at(j).counts() for j in range(T)])
    assert np.all(np.diff(counts, axis=0) >= 0)
    fs = extract_features(cloud, grid, K)
    assert np.all((fs.persistence >= 0) & (fs.persistence <= 1 + 1e-9))
    for k in range(K + 1):
        for j in range(T - 1):
            if filt.same_level(k, j, j + 1) and filt.same_level(k + 1, j, j + 1):
                assert fs.persistence[k, j] == 1.0
            a, b = fs.state(k, j), fs.state(k, j + 1)
            assert abs(persistence_measure(a, b) - persistence_measure(b, a)) <= 1e-12


@settings(max_examples=15)
@given(clouds(n_max=12), st.integers(0, 2**32 - 1))
def test_relabeling_vertices(cloud, seed):
    perm = np.random.default_rng(seed).permutation(cloud.n)
    moved = PointCloud(cloud.points[perm])
    grid = make_scale_grid(pairwise_distances(cloud), 6)
    a = extract_features(cloud, grid, 1)
    b = extract_features(moved, ScaleGrid(grid.scales, grid.policy), 1)
    assert np.array_equal(a.betti, b.betti)
    # the projector overlap depends only on the harmonic subspaces
    mode = OverlapMode(basis="projector")
    assert np.allclose(with_overlap_mode(a, mode).persistence, with_overlap_mode(b, mode).persistence, atol=1e-9)
    # the pooled canonical state is determined up to sign when each side has at most one harmonic vector
    for k in range(2):
        for j in range(5):
            if a.betti[j, k] <= 1 and a.betti[j + 1, k] <= 1:
                assert abs(a.persistence[k, j] - b.persistence[k, j]) <= 1e-9
    # single-vector states agree in magnitude on relabeled simplices; signs follow orientation
    inverse = np.argsort(perm)
    for k in range(2):
        for j in range(6):
            sa, sb = a.state(k, j), b.state(k, j)
            if sa.b == 1:
                moved_a = {tuple(sorted(int(inverse[v]) for v in s)): abs(x) for s, x in sa.as_dict().items()}
                got = {s: abs(x) for s, x in sb.as_dict().items()}
                assert moved_a.keys() == got.keys()
                assert all(abs(moved_a[s] - got[s]) <= 1e-7 for s in got)


@settings(max_examples=10)
@given(st.lists(clouds(n_max=10), min_size=3, max_size=5))
def test_kernel_symmetry_and_scaling(cloud_list):
    n = cloud_list[0].n
    cloud_list = [c for c in cloud_list if c.n == n] or cloud_list[:1]
    feats = [extract_features(c, make_scale_grid(pairwise_distances(c), 4), 1) for c in cloud_list]
    cfg = KernelConfig((1.0, 0.5, 1.0), 0.5)
    for a, b in itertools.combinations(feats, 2):
        assert abs(k_topo(a, b, cfg) - k_topo(b, a, cfg)) <= 1e-12
    base = gram(feats, cfg)
    scaled = gram(feats, cfg.scaled(2.5))
    assert np.allclose(scaled.matrix, 2.5 * base.matrix, rtol=1e-13, atol=1e-12)


@settings(max_examples=25)
@given(st.integers(2, 12), seeds, st.floats(0.01, 100))
def test_lssvm_stationarity(M, seed, reg):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((M, 4))
    labels = np.concatenate([[1, 2], rng.integers(1, 3, M - 2)])
    dummy = [None] * M
    model = train(x @ x.T, TrainingSet(dummy, labels), reg)
    assert np.all(np.abs(model.alphas.sum(axis=1)) <= 1e-9)
    assert max(model.residuals) <= 1e-8


@given(diagrams(), diagrams(), diagrams())
def test_bottleneck_pseudometric(a, b, c):
    ab, ba = bottleneck_points(a, b), bottleneck_points(b, a)
    assert ab == ba and bottleneck_points(a, a) == 0.0
    assert bottleneck_points(a, c) <= ab + bottleneck_points(b, c) + 1e-9


@settings(max_examples=20)
@given(clouds(n_max=10), st.integers(0, 2))
def test_oracle_diagram_shape(cloud, K):
    d = compute_ph(pairwise_distances(cloud), K)
    pts = d.points(0)
    assert np.count_nonzero(np.isinf(pts[:, 1])) == 1
    for k in range(K + 1):
        p = d.points(k)
        assert np.all(p[:, 0] <= p[:, 1])
