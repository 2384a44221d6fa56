"""Parameter-shift gradients, quantum Fisher information and natural steps.

The QFIM follows the convention

    F_ij = Re[<d_i psi|d_j psi> - <d_i psi|psi><psi|d_j psi>]

without the customary factor of four, so a single ``RY`` on ``|0>`` has
``F = 0.25``.  Derivative states are exact: the generator ``-i G / 2`` is
inserted after every occurrence of the parameter.
"""

from __future__ import annotations

import logging
from dataclasses import InitVar, dataclass

import numpy as np
import scipy.linalg

from .errors import ValidationError
from .losses import LossSpec
from .parallel import ordered_map
from .pqc import CircuitTemplate, _check_inputs, _simulate_vector, predict

logger = logging.getLogger(__name__)

QFIM_MODES = ("full", "block", "diagonal")
DEFAULT_DAMPING = 1e-3
SINGULAR_TOL = 1e-10
SHIFT = np.pi / 2


@dataclass(frozen=True, eq=False)
class QFIM:
    matrix: np.ndarray
    mode: str = "full"
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        matrix = np.asarray(self.matrix, dtype=float)
        object.__setattr__(self, "matrix", matrix)
        if not validate:
            return
        if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
            raise ValidationError(f"{matrix.shape} is not square", "matrix")
        if np.max(np.abs(matrix - matrix.T), initial=0.0) > 1e-8:
            raise ValidationError("QFIM is not symmetric", "matrix")
        if matrix.size and np.linalg.eigvalsh(matrix)[0] < -1e-8:
            raise ValidationError("QFIM is not PSD", "matrix")

    @property
    def size(self):
        return self.matrix.shape[0]

    def diagonal(self):
        return np.diag(self.matrix).copy()


def _as_matrix(F):
    if isinstance(F, QFIM):
        return F.matrix
    return np.asarray(F, dtype=float)


def _as_batch(X, y=None):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[0] == 0:
        raise ValidationError("batch is empty", "batch")
    if y is None:
        return X, None
    y = np.asarray(y, dtype=float).reshape(-1)
    if y.shape[0] != X.shape[0]:
        raise ValidationError(
            f"{X.shape[0]} samples but {y.shape[0]} labels", "batch"
        )
    return X, y


def readout_gradient(t: CircuitTemplate, theta, x):
    """``d<O>/d theta`` for one sample via the two-term shift rule."""
    theta, x = _check_inputs(t, theta, x)
    grad = np.zeros(t.n_params)
    for position, k in t.trainable_positions:
        plus = predict(t, theta, x, shift_at=position, shift=SHIFT)
        minus = predict(t, theta, x, shift_at=position, shift=-SHIFT)
        grad[k] += 0.5 * (plus - minus)
    return grad


def parameter_shift_gradient(
    t: CircuitTemplate, theta, X, y, loss: LossSpec, workers=1
):
    """Batch-mean loss gradient, chained through ``loss.derivative``."""
    X, y = _as_batch(X, y)

    def per_sample(i):
        f = predict(t, theta, X[i])
        return loss.derivative(f, y[i]) * readout_gradient(t, theta, X[i])

    terms = ordered_map(per_sample, range(X.shape[0]), workers)
    return np.mean(np.stack(terms), axis=0)


def batch_loss(t: CircuitTemplate, theta, X, y, loss: LossSpec) -> float:
    X, y = _as_batch(X, y)
    f = np.array([predict(t, theta, x) for x in X])
    return loss.mean(f, y)


def finite_diff_gradient(
    t: CircuitTemplate, theta, X, y, loss: LossSpec, h=1e-5
):
    if h <= 0:
        raise ValidationError("step must be positive", "h")
    theta = np.asarray(theta, dtype=float)
    grad = np.zeros_like(theta)
    for k in range(theta.shape[0]):
        up, down = theta.copy(), theta.copy()
        up[k] += h
        down[k] -= h
        grad[k] = (
            batch_loss(t, up, X, y, loss) - batch_loss(t, down, X, y, loss)
        ) / (2.0 * h)
    return grad


def _structure_mask(n_params, mode, block_size):
    if mode == "full":
        return None
    if mode == "diagonal":
        return np.eye(n_params, dtype=bool)
    if mode == "block":
        if block_size is None or block_size < 1:
            raise ValidationError("block mode needs block_size >= 1")
        blocks = np.arange(n_params) // block_size
        return blocks[:, None] == blocks[None, :]
    raise ValidationError(f"unknown QFIM mode {mode!r}", "mode")


def qfim(t: CircuitTemplate, theta, x, mode="full", block_size=2) -> QFIM:
    """Pure-state QFIM of one sample; noisy templates are rejected."""
    if t.noisy:
        raise ValidationError(
            "the QFIM is defined for noiseless templates only", "template"
        )
    theta, x = _check_inputs(t, theta, x)
    mask = _structure_mask(t.n_params, mode, block_size)
    psi = _simulate_vector(t, theta, x)
    derivs = np.zeros((t.n_params, psi.shape[0]), dtype=complex)
    for position, k in t.trainable_positions:
        derivs[k] += _simulate_vector(t, theta, x, insert_at=position)
    overlaps = derivs.conj() @ derivs.T
    berry = derivs.conj() @ psi
    matrix = np.real(overlaps - np.outer(berry, berry.conj()))
    matrix = 0.5 * (matrix + matrix.T)
    if mask is not None:
        matrix = np.where(mask, matrix, 0.0)
    return QFIM(matrix, mode=mode, validate=False)


def qfim_batch(
    t: CircuitTemplate, theta, X, mode="full", block_size=2, workers=1
) -> QFIM:
    X, _ = _as_batch(X)
    terms = ordered_map(
        lambda x: qfim(t, theta, x, mode, block_size).matrix, X, workers
    )
    return QFIM(np.mean(np.stack(terms), axis=0), mode=mode, validate=False)


def _check_damping(lam):
    if lam < 0:
        raise ValidationError(f"{lam!r} is negative", "damping")


def damped_inverse(F, lam=DEFAULT_DAMPING) -> np.ndarray:
    """``(F + lam I)^-1`` through the eigendecomposition of ``F``."""
    _check_damping(lam)
    matrix = _as_matrix(F)
    values, vectors = scipy.linalg.eigh(matrix)
    if lam == 0 and (values.size == 0 or values[0] <= SINGULAR_TOL):
        raise ValidationError(
            "F is singular; a positive damping is required", "damping"
        )
    inverse = (vectors / (values + lam)) @ vectors.T
    return 0.5 * (inverse + inverse.T)


def _is_diagonal(matrix):
    return not np.any(matrix[~np.eye(matrix.shape[0], dtype=bool)])


def precondition(g, F, lam=DEFAULT_DAMPING) -> np.ndarray:
    """``(F + lam I)^-1 g``; coordinate-wise when ``F`` is diagonal."""
    _check_damping(lam)
    g = np.asarray(g, dtype=float)
    matrix = _as_matrix(F)
    if matrix.shape != (g.shape[0], g.shape[0]):
        raise ValidationError(
            f"F of shape {matrix.shape} against {g.shape[0]} parameters", "F"
        )
    if _is_diagonal(matrix):
        scale = np.diag(matrix) + lam
        if lam == 0 and np.any(scale <= SINGULAR_TOL):
            raise ValidationError(
                "F is singular; a positive damping is required", "damping"
            )
        return g / scale
    return damped_inverse(matrix, lam) @ g


def natural_step(theta, g, F, eta, lam=DEFAULT_DAMPING) -> np.ndarray:
    theta = np.asarray(theta, dtype=float)
    g = np.asarray(g, dtype=float)
    if theta.shape != g.shape:
        raise ValidationError(
            f"theta {theta.shape} and gradient {g.shape} differ", "g"
        )
    return theta - eta * precondition(g, F, lam)


def f_norm_squared(delta, F, lam=DEFAULT_DAMPING) -> float:
    """``delta^T (F + lam I) delta``."""
    matrix = _as_matrix(F)
    return float(delta @ matrix @ delta + lam * delta @ delta)


def qfi_spectrum(F) -> np.ndarray:
    """Eigenvalues of ``F`` in descending order, round-off floored at 0."""
    values = scipy.linalg.eigh(_as_matrix(F), eigvals_only=True)
    return np.clip(values, 0.0, None)[::-1]


def effective_dimension(F, lam=DEFAULT_DAMPING) -> float:
    values = qfi_spectrum(F)
    if lam <= 0:
        return float(np.count_nonzero(values > SINGULAR_TOL))
    return float(np.sum(values / (values + lam)))
