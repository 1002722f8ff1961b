"""One-vs-rest least-squares SVM on a precomputed topological kernel.

Each class solves the bordered system ``[[0, 1^T], [1, K + I/gamma_reg]] (b, alpha) = (0, y)``
with ``y = +1`` for the class and ``-1`` otherwise. Labels enter only through that
right-hand side, so the decision function is ``b + sum_i alpha_i k(X_i, x)``;
multiplying by the labels again would count them twice.
"""

from __future__ import annotations

import itertools
import json
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from sklearn.model_selection import StratifiedKFold

from .features import HarmonicFeatureSet, OverlapMode
from .kernel import ComponentGrams, KernelConfig, KernelMatrix, component_grams, k_topo, repair_psd

RESIDUAL_TOL = 1e-8
# systems with a worse condition estimate are treated as singular
MAX_CONDITION = 1e14

DEFAULT_GAMMA_REG = 16.0
DEFAULT_LAMBDA_GRID = tuple(
    lam for lam in itertools.product((0.0, 0.5, 1.0), repeat=3) if any(lam)
)
DEFAULT_BAND_GRID = (0.1, 1.0, 10.0)
DEFAULT_REG_GRID = tuple(2.0**p for p in range(-2, 9))


class SingularSystemError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True, eq=False)
class TrainingSet:
    features: Sequence[HarmonicFeatureSet]
    labels: Sequence[int]
    class_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if len(labels) != len(self.features):
            raise ValueError(f"{len(self.features)} feature sets but {len(labels)} labels")
        if labels.size == 0:
            raise ValueError("empty training set")
        L = int(labels.max())
        if labels.min() < 1:
            raise ValueError("class ids start at 1")
        missing = sorted(set(range(1, L + 1)) - set(labels.tolist()))
        if missing:
            raise ValueError(f"classes without samples: {missing}")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "features", tuple(self.features))

    @property
    def L(self) -> int:
        return int(self.labels.max())

    @property
    def M(self) -> int:
        return len(self.features)


@dataclass(frozen=True, eq=False)
class LsSvmModel:
    biases: np.ndarray
    alphas: np.ndarray
    gamma_reg: float
    config: KernelConfig
    truncation: float | None
    train_features: tuple[HarmonicFeatureSet, ...] = ()
    class_names: dict[int, str] = field(default_factory=dict)
    residuals: tuple[float, ...] = ()

    @property
    def L(self) -> int:
        return len(self.biases)

    @property
    def M(self) -> int:
        return self.alphas.shape[1]

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "gamma_reg": self.gamma_reg,
            "kernel_config": self.config.to_dict(),
            "truncation": None if self.truncation is None or math.isinf(self.truncation) else self.truncation,
            "per_class": [
                {"class_id": i + 1, "name": self.class_names.get(i + 1), "bias": float(b), "alphas": a.tolist()}
                for i, (b, a) in enumerate(zip(self.biases, self.alphas))
            ],
            "training_feature_digests": [f.digest for f in self.train_features],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)


def augmented_matrix(kmat: np.ndarray, gamma_reg: float) -> np.ndarray:
    M = kmat.shape[0]
    F = np.zeros((M + 1, M + 1))
    F[0, 1:] = 1.0
    F[1:, 0] = 1.0
    F[1:, 1:] = kmat + np.eye(M) / gamma_reg
    return F


def one_vs_rest_targets(labels: np.ndarray, L: int) -> np.ndarray:
    """``(L, M)`` matrix of +1/-1 targets, row ``l-1`` for class ``l``."""
    labels = np.asarray(labels)
    return np.where(labels[None, :] == np.arange(1, L + 1)[:, None], 1.0, -1.0)


def solve_system(F: np.ndarray, rhs: np.ndarray, truncation: float | None = None) -> np.ndarray:
    """Solve ``F x = rhs`` (rhs may have several columns).

    Without truncation this is a symmetric indefinite (Bunch-Kaufman) solve. With a
    finite ``truncation`` the solve is restricted to eigenvectors of ``F`` whose
    eigenvalue magnitude is at least ``max|eig| / truncation``.
    """
    if truncation is not None and not math.isinf(truncation):
        if truncation < 1:
            raise ValueError("effective condition number must be >= 1")
        w, v = np.linalg.eigh(F)
        keep = np.abs(w) >= np.abs(w).max() / truncation
        inv = 1.0 / w[keep]
        coef = v[:, keep].T @ rhs
        coef = coef * (inv[:, None] if coef.ndim == 2 else inv)
        return v[:, keep] @ coef
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            return sla.solve(F, rhs, assume_a="sym")
        except (np.linalg.LinAlgError, sla.LinAlgWarning) as exc:
            cond = np.linalg.cond(F)
            raise SingularSystemError(f"augmented system is singular (condition estimate {cond:.3e}): {exc}") from exc


def train(gram: KernelMatrix | np.ndarray, train_set: TrainingSet, gamma_reg: float = DEFAULT_GAMMA_REG,
          truncation: float | None = None, config: KernelConfig | None = None) -> LsSvmModel:
    kmat = gram.matrix if isinstance(gram, KernelMatrix) else np.asarray(gram, dtype=float)
    config = gram.config if isinstance(gram, KernelMatrix) else (config or KernelConfig())
    M = kmat.shape[0]
    if M < 2:
        raise ValueError("need at least two training samples")
    if kmat.shape != (M, M) or M != train_set.M:
        raise ValueError(f"Gram matrix {kmat.shape} does not match {train_set.M} training samples")
    if not gamma_reg > 0:
        raise ValueError("gamma_reg must be positive")

    F = augmented_matrix(kmat, gamma_reg)
    if np.linalg.cond(F) > MAX_CONDITION:
        raise SingularSystemError(f"augmented system is singular (condition estimate {np.linalg.cond(F):.3e})")
    targets = one_vs_rest_targets(train_set.labels, train_set.L)
    rhs = np.vstack([np.zeros((1, train_set.L)), targets.T])
    sol = solve_system(F, rhs, truncation)
    residuals = np.linalg.norm(F @ sol - rhs, axis=0) / np.linalg.norm(rhs, axis=0)
    if truncation is None and np.any(residuals > RESIDUAL_TOL):
        raise SingularSystemError(f"solve residual {residuals.max():.3e} exceeds {RESIDUAL_TOL}")
    return LsSvmModel(
        biases=sol[0].copy(),
        alphas=sol[1:].T.copy(),
        gamma_reg=float(gamma_reg),
        config=config,
        truncation=truncation,
        train_features=tuple(train_set.features),
        class_names=dict(train_set.class_names),
        residuals=tuple(float(r) for r in residuals),
    )


def decision_values(model: LsSvmModel, x: HarmonicFeatureSet) -> np.ndarray:
    """All L decision values ``b_l + sum_i alpha_{l,i} k_topo(X_i, x)``."""
    kvec = np.array([k_topo(xi, x, model.config) for xi in model.train_features])
    return model.biases + model.alphas @ kvec


def decision(model: LsSvmModel, ell: int, x: HarmonicFeatureSet) -> float:
    """Decision value of classifier ``ell`` (1-based)."""
    if not 1 <= ell <= model.L:
        raise ValueError(f"class id {ell} outside 1..{model.L}")
    return float(decision_values(model, x)[ell - 1])


def argmax_class(values: np.ndarray) -> tuple[int, bool]:
    """1-based argmax; ties go to the lowest id and are reported."""
    values = np.asarray(values)
    best = values.max()
    winners = np.flatnonzero(values == best)
    return int(winners[0]) + 1, len(winners) > 1


def predict(model: LsSvmModel, x: HarmonicFeatureSet) -> tuple[int, np.ndarray, bool]:
    """``(class_id, decision_values, tie_broken)``."""
    values = decision_values(model, x)
    cid, tie = argmax_class(values)
    return cid, values, tie


def predict_from_kernel(biases: np.ndarray, alphas: np.ndarray, kcross: np.ndarray) -> np.ndarray:
    """Class ids for test rows of a precomputed ``(n_test, M)`` kernel block."""
    values = biases[None, :] + kcross @ alphas.T
    return np.array([argmax_class(row)[0] for row in values])


@dataclass(frozen=True)
class CVResult:
    config: KernelConfig
    gamma_reg: float
    accuracy: float
    table: list[dict]


def cross_validate(train_set: TrainingSet, lambda_grid=DEFAULT_LAMBDA_GRID, band_grid=DEFAULT_BAND_GRID,
                   reg_grid=DEFAULT_REG_GRID, folds: int = 5, seed: int = 0,
                   overlap: OverlapMode | None = None, normalize_betti: bool = False,
                   components: ComponentGrams | None = None) -> CVResult:
    """Stratified k-fold grid search over kernel weights, bandwidth and regularization.

    Picks the highest mean fold accuracy; ties go to fewer nonzero weights, then
    smaller ``gamma_reg``, then grid order.
    """
    if folds < 2:
        raise ValueError("need at least two folds")
    counts = np.bincount(train_set.labels)[1:]
    if counts.min() < folds:
        raise ValueError(f"class too small for stratification: smallest class has {counts.min()} samples, "
                         f"{folds} folds requested")
    overlap = overlap or train_set.features[0].mode
    comps = components or component_grams(train_set.features, mode=overlap, normalize_betti=normalize_betti)
    labels = np.asarray(train_set.labels)
    splits = list(StratifiedKFold(n_splits=folds, shuffle=True, random_state=seed % 2**32)
                  .split(np.zeros(len(labels)), labels))
    L = train_set.L

    table = []
    best = None
    for lam in lambda_grid:
        bands = band_grid if lam[2] else band_grid[:1]
        for band in bands:
            config = KernelConfig(tuple(lam), band, overlap, normalize_betti)
            full, _, _ = repair_psd(comps.combine(config))
            for reg in reg_grid:
                accs = []
                for tr, te in splits:
                    F = augmented_matrix(full[np.ix_(tr, tr)], reg)
                    rhs = np.vstack([np.zeros((1, L)), one_vs_rest_targets(labels[tr], L).T])
                    try:
                        sol = solve_system(F, rhs)
                    except SingularSystemError:
                        accs.append(0.0)
                        continue
                    pred = predict_from_kernel(sol[0], sol[1:].T, full[np.ix_(te, tr)])
                    accs.append(float(np.mean(pred == labels[te])))
                row = {"lambdas": list(config.lambdas), "gamma_band": band, "gamma_reg": reg,
                       "accuracy": float(np.mean(accs)), "fold_accuracies": accs}
                table.append(row)
                key = (-row["accuracy"], config.nonzero_weights, reg)
                if best is None or key < best[0]:
                    best = (key, config, reg, row["accuracy"])
    return CVResult(best[1], best[2], best[3], table)
