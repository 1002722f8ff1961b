import json

import numpy as np
import pytest

from harmonicpd.geometry import ScaleGrid, generate, make_scale_grid, pairwise_distances
from harmonicpd.features import extract_features
from harmonicpd.kernel import KernelConfig, component_grams, gram
from harmonicpd.svm import (LsSvmModel, SingularSystemError, TrainingSet, argmax_class, augmented_matrix,
                            cross_validate, decision, decision_values, one_vs_rest_targets, predict,
                            predict_from_kernel, solve_system, train)


def tiny(seed):
    return extract_features(generate("blob", 3, 0, seed), ScaleGrid([0.5, 1.0]), 0)


@pytest.fixture(scope="module")
def two_class():
    feats, labels = [], []
    for label, shape in ((1, "circle"), (2, "two_circles")):
        for s in range(6):
            cloud = generate(shape, 14, 0.02, 100 * label + s)
            feats.append(extract_features(cloud, make_scale_grid(pairwise_distances(cloud), 6), 1))
            labels.append(label)
    return TrainingSet(feats, labels, {1: "circle", 2: "two_circles"})


def test_two_sample_identity_kernel():
    F = augmented_matrix(np.eye(2), 1.0)
    assert F.tolist() == [[0, 1, 1], [1, 2, 0], [1, 0, 2]]
    model = train(np.eye(2), TrainingSet([tiny(1), tiny(2)], [1, 2]), gamma_reg=1.0)
    assert model.biases[0] == pytest.approx(0.0, abs=1e-12)
    assert np.allclose(model.alphas[0], [0.5, -0.5], atol=1e-12, rtol=0)
    # decision values from the expansion with K = I: f(X1) = 0.5, f(X2) = -0.5
    kcross = np.eye(2)
    values = model.biases[None, :] + kcross @ model.alphas.T
    assert np.allclose(values[:, 0], [0.5, -0.5], atol=1e-12)
    assert predict_from_kernel(model.biases, model.alphas, kcross).tolist() == [1, 2]


def test_constant_labels_still_solvable():
    kmat = np.array([[2.0, 1.0], [1.0, 2.0]])
    sol = solve_system(augmented_matrix(kmat, 4.0), np.array([0.0, 1.0, 1.0]))
    assert sol[0] == pytest.approx(1.0)
    assert np.allclose(sol[1:], 0.0, atol=1e-14)


def test_untruncated_equals_direct():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((6, 3))
    F = augmented_matrix(x @ x.T, 2.0)
    rhs = np.concatenate([[0.0], np.sign(rng.standard_normal(6))])
    direct = solve_system(F, rhs)
    assert np.allclose(solve_system(F, rhs, float("inf")), direct, atol=1e-10)
    assert np.allclose(solve_system(F, rhs, 1e12), direct, atol=1e-10)


def test_truncation_converges_to_direct():
    rng = np.random.default_rng(1)
    x = rng.standard_normal((8, 3))
    F = augmented_matrix(x @ x.T, 100.0)
    rhs = np.concatenate([[0.0], np.sign(rng.standard_normal(8))])
    direct = solve_system(F, rhs)
    cond = np.linalg.cond(F)
    errs = [np.linalg.norm(solve_system(F, rhs, kappa) - direct) for kappa in (2.0, 10.0, 100.0, cond * 1.01)]
    assert all(a >= b - 1e-12 for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-8
    with pytest.raises(ValueError):
        solve_system(F, rhs, 0.5)


def test_singular_system_is_reported():
    F = np.zeros((3, 3))
    with pytest.raises(SingularSystemError, match="singular"):
        solve_system(F, np.ones(3))


def test_training_set_validation():
    with pytest.raises(ValueError, match="classes without samples"):
        TrainingSet([tiny(1), tiny(2)], [1, 3])
    with pytest.raises(ValueError):
        TrainingSet([tiny(1)], [1, 2])
    with pytest.raises(ValueError):
        TrainingSet([tiny(1), tiny(2)], [0, 1])


def test_targets():
    assert one_vs_rest_targets(np.array([1, 2, 1]), 2).tolist() == [[1, -1, 1], [-1, 1, -1]]


def test_fit_consistency_and_stationarity(two_class):
    model = train(gram(two_class.features, KernelConfig()), two_class, gamma_reg=256.0)
    assert max(model.residuals) <= 1e-8
    assert np.all(np.abs(model.alphas.sum(axis=1)) <= 1e-9)
    for fs, label in zip(two_class.features, two_class.labels):
        cid, values, tie = predict(model, fs)
        assert cid == label and not tie
        assert np.sign(decision(model, 1, fs)) == (1 if label == 1 else -1)
    with pytest.raises(ValueError):
        decision(model, 3, two_class.features[0])


def test_constant_model():
    x = tiny(1)
    model = LsSvmModel(np.array([0.7, -0.2]), np.zeros((2, 2)), 1.0, KernelConfig(), None, (tiny(2), tiny(3)))
    assert np.allclose(decision_values(model, x), [0.7, -0.2])


def test_argmax_ties():
    assert argmax_class(np.array([0.3, 0.3, 0.1])) == (1, True)
    assert argmax_class(np.array([0.1, 0.4, 0.4])) == (2, True)
    assert argmax_class(np.array([-1.0, 2.0])) == (2, False)


def test_two_class_flip_at_zero():
    # symmetric two-class model: class 2's decision is the negation of class 1's
    for f1 in (-0.5, -1e-12, 1e-12, 0.5):
        cid, _ = argmax_class(np.array([f1, -f1]))
        assert cid == (1 if f1 > 0 else 2)


def test_argmax_invariance_under_kernel_scaling(two_class):
    feats = two_class.features
    test = []
    for shape in ("circle", "two_circles", "blob"):
        cloud = generate(shape, 14, 0.05, 999)
        test.append(extract_features(cloud, make_scale_grid(pairwise_distances(cloud), 6), 1))
    cfg = KernelConfig()
    base = train(gram(feats, cfg), two_class, gamma_reg=4.0)
    for c in (0.1, 7.0):
        scaled = train(gram(feats, cfg.scaled(c)), two_class, gamma_reg=4.0 / c)
        for fs in test:
            assert predict(scaled, fs)[0] == predict(base, fs)[0]


def test_cross_validation(two_class):
    single = cross_validate(two_class, [(1.0, 0.0, 1.0)], [10.0], [2.0], folds=3)
    assert single.config.lambdas == (1.0, 0.0, 1.0) and single.gamma_reg == 2.0
    dup = cross_validate(two_class, [(1, 1, 1), (1, 1, 1)], [1.0], [16.0], folds=3)
    assert dup.table[0]["accuracy"] == dup.table[1]["accuracy"]
    comps = component_grams(two_class.features)
    full = cross_validate(two_class, folds=3, components=comps)
    default = cross_validate(two_class, [(1, 1, 1)], [1.0], [16.0], folds=3, components=comps)
    assert full.accuracy >= default.accuracy
    with pytest.raises(ValueError, match="class too small"):
        cross_validate(two_class, folds=7)


def test_model_json(two_class):
    model = train(gram(two_class.features, KernelConfig()), two_class)
    doc = json.loads(model.to_json())
    assert {"L", "gamma_reg", "kernel_config", "truncation", "per_class", "training_feature_digests"} <= doc.keys()
    assert doc["L"] == 2 and len(doc["per_class"][0]["alphas"]) == two_class.M
