"""Fidelity kernels, kernel ridge regression and exact sample deletion."""

from __future__ import annotations

import logging
from dataclasses import InitVar, dataclass

import numpy as np
import scipy.linalg

from .documents import write_csv
from .errors import InvariantViolation, ValidationError
from .learn import init_params
from .parallel import ordered_map
from .pqc import CircuitTemplate, _check_inputs, _simulate_vector

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class FeatureMap:
    """Encoding template with its parameter slots pinned to ``theta``."""

    template: CircuitTemplate
    theta: np.ndarray

    def __post_init__(self):
        if self.template.noisy:
            raise ValidationError(
                "fidelity kernels need a noiseless template", "template"
            )
        theta = np.asarray(self.theta, dtype=float).reshape(-1)
        if theta.shape[0] != self.template.n_params:
            raise ValidationError(
                f"{theta.shape[0]} values for {self.template.n_params}"
                " parameters",
                "theta",
            )
        object.__setattr__(self, "theta", theta)

    @classmethod
    def from_seed(cls, template, seed) -> "FeatureMap":
        return cls(template, init_params(template.n_params, seed))

    def state(self, x) -> np.ndarray:
        theta, x = _check_inputs(self.template, self.theta, x)
        return _simulate_vector(self.template, theta, x)

    def states(self, X, workers=1) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        return np.stack(ordered_map(self.state, X, workers))


def kernel_value(fm: FeatureMap, x, x2) -> float:
    overlap = np.vdot(fm.state(x), fm.state(x2))
    return float(np.clip(abs(overlap) ** 2, 0.0, 1.0))


@dataclass(frozen=True, eq=False)
class GramMatrix:
    matrix: np.ndarray
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        matrix = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", matrix)
        if not validate:
            return
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValidationError(f"{matrix.shape} is not square", "matrix")
        if np.max(np.abs(matrix - matrix.T)) > 1e-9:
            raise ValidationError("Gram matrix is not symmetric", "matrix")
        if np.max(np.abs(np.diag(matrix) - 1.0)) > 1e-9:
            raise ValidationError("diagonal is not 1", "matrix")
        if np.linalg.eigvalsh(matrix)[0] < -1e-8:
            raise ValidationError("Gram matrix is not PSD", "matrix")

    def __len__(self):
        return self.matrix.shape[0]


def _overlaps(left, right):
    return np.clip(np.abs(left.conj() @ right.T) ** 2, 0.0, 1.0)


def gram(fm: FeatureMap, X, workers=1) -> GramMatrix:
    states = fm.states(X, workers)
    K = _overlaps(states, states)
    K = 0.5 * (K + K.T)
    np.fill_diagonal(K, 1.0)
    return GramMatrix(K)


def cross_kernel(fm: FeatureMap, X, Y, workers=1) -> np.ndarray:
    """``K[i, j] = kappa(X[i], Y[j])``."""
    return _overlaps(fm.states(X, workers), fm.states(Y, workers))


@dataclass(eq=False)
class KernelRidgeModel:
    """Dual solution of ``(K + ridge I) alpha = y``.

    ``inverse`` keeps ``(K + ridge I)^-1`` so that deletions are block
    updates; ``samples`` holds the training rows when a feature map is
    attached, and ``ids`` their positions in the original fit.
    """

    alpha: np.ndarray
    ridge: float
    inverse: np.ndarray
    y: np.ndarray
    ids: np.ndarray
    samples: np.ndarray | None = None
    feature_map: FeatureMap | None = None

    def __len__(self):
        return self.alpha.shape[0]

    def kernel_row(self, x) -> np.ndarray:
        if self.feature_map is None or self.samples is None:
            raise ValidationError(
                "model has no feature map; pass a kernel row", "x"
            )
        state = self.feature_map.state(x)
        states = self.feature_map.states(self.samples)
        return _overlaps(state[None, :], states)[0]


def krr_fit(K, y, ridge, samples=None, feature_map=None) -> KernelRidgeModel:
    if not ridge > 0:
        raise ValidationError("must be positive", "ridge")
    K = np.asarray(getattr(K, "matrix", K), dtype=float)
    y = np.asarray(y, dtype=float).reshape(-1)
    if K.shape != (y.shape[0], y.shape[0]):
        raise ValidationError(
            f"Gram {K.shape} against {y.shape[0]} labels", "y"
        )
    A = K + ridge * np.eye(y.shape[0])
    try:
        factor = scipy.linalg.cho_factor(A)
    except np.linalg.LinAlgError as e:
        raise ValidationError(f"solver failure: {e}", "K") from e
    alpha = scipy.linalg.cho_solve(factor, y)
    inverse = scipy.linalg.cho_solve(factor, np.eye(y.shape[0]))
    residual = np.max(np.abs(A @ alpha - y))
    if residual > RESIDUAL_TOL:
        raise InvariantViolation(f"ridge residual {residual:.3g}")
    return KernelRidgeModel(
        alpha=alpha,
        ridge=float(ridge),
        inverse=0.5 * (inverse + inverse.T),
        y=y,
        ids=np.arange(y.shape[0]),
        samples=None if samples is None else np.asarray(samples, float),
        feature_map=feature_map,
    )


def krr_predict(model: KernelRidgeModel, x=None, kernel_row=None) -> float:
    if kernel_row is None:
        kernel_row = model.kernel_row(x)
    return float(np.asarray(kernel_row, dtype=float) @ model.alpha)


def _split(model, indices):
    deleted = np.unique(np.asarray(indices, dtype=int).reshape(-1))
    if deleted.size and (deleted[0] < 0 or deleted[-1] >= len(model)):
        raise ValidationError("sample index out of range", "indices")
    if deleted.size >= len(model):
        raise ValidationError("cannot delete every sample", "indices")
    kept = np.setdiff1d(np.arange(len(model)), deleted)
    return kept, deleted


def delete_samples_smw(model: KernelRidgeModel, indices) -> KernelRidgeModel:
    """Drop rows/columns via ``M_rr - M_rs M_ss^-1 M_sr``; no refactoring.

    ``indices`` are positions in ``model`` (not the original fit).
    """
    kept, deleted = _split(model, indices)
    M = model.inverse
    if deleted.size == 0:
        inverse = M.copy()
    else:
        M_rs = M[np.ix_(kept, deleted)]
        M_ss = M[np.ix_(deleted, deleted)]
        inverse = M[np.ix_(kept, kept)] - M_rs @ np.linalg.solve(
            M_ss, M_rs.T
        )
        inverse = 0.5 * (inverse + inverse.T)
    y = model.y[kept]
    logger.debug("deleted %d of %d samples", deleted.size, len(model))
    return KernelRidgeModel(
        alpha=inverse @ y,
        ridge=model.ridge,
        inverse=inverse,
        y=y,
        ids=model.ids[kept],
        samples=None if model.samples is None else model.samples[kept],
        feature_map=model.feature_map,
    )


def _bound_parts(model, deleted, x, kernel_row):
    kept, removed = _split(model, deleted)
    updated = delete_samples_smw(model, removed)
    if kernel_row is None:
        kernel_row = model.kernel_row(x)
    kernel_row = np.asarray(kernel_row, dtype=float)
    return kept, removed, updated, kernel_row


def deviation_bound(model, deleted, x=None, kernel_row=None) -> float:
    """``||k_s(x)|| ||alpha' - alpha_s||`` bounding ``|f'(x) - f_s(x)|``.

    ``f_s`` is the original predictor restricted to the retained samples.
    """
    kept, _, updated, k = _bound_parts(model, deleted, x, kernel_row)
    gap = updated.alpha - model.alpha[kept]
    return float(np.linalg.norm(k[kept]) * np.linalg.norm(gap))


def removal_deviation_bound(model, deleted, x=None, kernel_row=None):
    """Bound on ``|f'(x) - f(x)|`` against the full original predictor."""
    kept, removed, updated, k = _bound_parts(model, deleted, x, kernel_row)
    gap = updated.alpha - model.alpha[kept]
    return float(
        np.linalg.norm(k[kept]) * np.linalg.norm(gap)
        + np.linalg.norm(k[removed]) * np.linalg.norm(model.alpha[removed])
    )


def _matrix(K):
    return np.asarray(getattr(K, "matrix", K), dtype=float)


def alignment(K1, K2) -> float:
    K1, K2 = _matrix(K1), _matrix(K2)
    if K1.shape != K2.shape:
        raise ValidationError(f"{K1.shape} vs {K2.shape}", "K2")
    denominator = np.linalg.norm(K1) * np.linalg.norm(K2)
    if denominator == 0:
        raise ValidationError("zero Gram matrix", "K1")
    return float(np.clip(np.sum(K1 * K2) / denominator, 0.0, 1.0))


def alignment_gap(K_after, K_reference) -> float:
    return 1.0 - alignment(K_after, K_reference)


def mmd(K, set_a, set_b) -> float:
    K = _matrix(K)
    a = np.asarray(set_a, dtype=int).reshape(-1)
    b = np.asarray(set_b, dtype=int).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValidationError("MMD needs two non-empty sets", "set_a")
    squared = (
        K[np.ix_(a, a)].mean()
        + K[np.ix_(b, b)].mean()
        - 2.0 * K[np.ix_(a, b)].mean()
    )
    return float(np.sqrt(max(squared, 0.0)))


def export_gram_csv(K, path):
    K = _matrix(K)
    header = [f"s{i}" for i in range(K.shape[0])]
    return write_csv(path, header, K.tolist())
