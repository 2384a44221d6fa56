"""Forgetting mechanisms for circuit models and client registers.

The gradient mechanisms take the task-loss gradient on the forget set and
step along ``-(F + lam I)^-1 grad``, the damped influence-removal estimate
with the QFIM standing in for the Hessian.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .geo import (
    DEFAULT_DAMPING,
    QFIM_MODES,
    f_norm_squared,
    natural_step,
    parameter_shift_gradient,
    precondition,
    qfim_batch,
)
from .learn import Dataset, TrainConfig, TrainedModel, fine_tune, init_params
from .losses import LossSpec
from .privacy import clip
from .qcore import (
    DensityMatrix,
    _check_targets,
    maximally_mixed,
    partial_trace,
    permute_qubits,
    tensor_product,
)

logger = logging.getLogger(__name__)

PRECONDITIONERS = QFIM_MODES + ("identity",)


def _default_fine_tune():
    return TrainConfig(optimizer="natural", epochs=5, patience=2)


@dataclass
class QmuIConfig:
    step: float = 0.1
    clip_norm: float = 1.0
    trust_radius: float = 1.0
    damping: float = DEFAULT_DAMPING
    qfim_mode: str = "diagonal"
    block_size: int = 2
    batch_size: int | None = None
    iterations: int = 25
    seed: int = 0
    workers: int = 1
    fine_tune: TrainConfig = field(default_factory=_default_fine_tune)

    def __post_init__(self):
        for name in ("step", "clip_norm", "trust_radius"):
            if not getattr(self, name) > 0:
                raise ValidationError("must be positive", name)
        if self.qfim_mode not in PRECONDITIONERS:
            raise ValidationError(
                f"{self.qfim_mode!r} is not one of {PRECONDITIONERS}",
                "qfim_mode",
            )
        if self.qfim_mode == "identity":
            if self.damping < 0:
                raise ValidationError("must not be negative", "damping")
        elif not self.damping > 0:
            raise ValidationError("must be positive", "damping")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValidationError("must be at least 1", "batch_size")
        if self.iterations < 1:
            raise ValidationError("must be at least 1", "iterations")


@dataclass
class UnlearnTrace:
    """Parameter snapshots of one mechanism run.

    ``distances`` stays empty until an audit fills it in; ``steps`` holds
    per-iteration diagnostics of the update.
    """

    mechanism: str
    snapshots: list = field(default_factory=list)
    distances: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    reference: np.ndarray | None = None

    def record(self, theta, **info):
        self.snapshots.append(np.array(theta, dtype=float))
        if info:
            self.steps.append(info)


def _rows(data: Dataset, indices):
    indices = np.asarray(indices, dtype=int).reshape(-1)
    if indices.size == 0:
        raise ValidationError("sample set is empty", "S")
    if np.any(indices < 0) or np.any(indices >= len(data)):
        raise ValidationError("sample index out of range", "S")
    return data.features[indices], data.labels[indices]


def forget_gradient(model: TrainedModel, X, y, workers=1):
    loss = LossSpec(model.loss)
    return parameter_shift_gradient(
        model.template, model.theta, X, y, loss, workers=workers
    )


def _metric(model, X, F, mode="full", block_size=2):
    if F is not None:
        return np.asarray(getattr(F, "matrix", F), dtype=float)
    return qfim_batch(model.template, model.theta, X, mode, block_size).matrix


def influence_delta(
    model: TrainedModel, data: Dataset, S, lam=DEFAULT_DAMPING, F=None
):
    """One-shot removal estimate ``-(F + lam I)^-1 grad L_S``.

    ``F`` defaults to the full QFIM averaged over the samples of ``S``.
    """
    X, y = _rows(data, S)
    g = forget_gradient(model, X, y)
    return -precondition(g, _metric(model, X, F), lam)


def fisher_step(
    model: TrainedModel, data: Dataset, S, eta, lam=DEFAULT_DAMPING
):
    """Coordinate-wise step ``theta_i - eta g_i / (F_ii + lam)``."""
    X, y = _rows(data, S)
    g = forget_gradient(model, X, y)
    F = _metric(model, X, None, mode="diagonal")
    return natural_step(model.theta, g, F, eta, lam)


def fisher_ranked_selection(F, fraction) -> tuple:
    """Indices of the ``ceil(fraction p)`` largest diagonal QFIM entries."""
    if not 0 < fraction <= 1:
        raise ValidationError(f"{fraction!r} not in (0, 1]", "fraction")
    diagonal = np.diag(np.asarray(getattr(F, "matrix", F), dtype=float))
    count = math.ceil(fraction * diagonal.size)
    order = np.argsort(-diagonal, kind="stable")
    return tuple(sorted(int(i) for i in order[:count]))


def _forget_rows(data):
    X, y = data.select("forget")
    if X.shape[0] == 0:
        raise ValidationError("forget set is empty", "forget_mask")
    return X, y


def _pass_order(n, seed, epoch):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2, epoch]))
    return rng.permutation(n)


def qmu_i(
    model: TrainedModel,
    data: Dataset,
    reference=None,
    cfg: QmuIConfig | None = None,
):
    """QFI-weighted influence unlearning followed by a D_s fine-tune."""
    cfg = cfg or QmuIConfig()
    X, y = _forget_rows(data)
    t = model.template
    loss = LossSpec(model.loss)
    batch_size = cfg.batch_size or min(8, X.shape[0])
    trace = UnlearnTrace(
        "qmu_i",
        reference=None if reference is None else np.asarray(reference),
    )
    theta = np.array(model.theta, dtype=float)
    trace.record(theta)
    batches = []
    for iteration in range(cfg.iterations):
        if not batches:
            order = _pass_order(X.shape[0], cfg.seed, iteration)
            batches = [
                order[s : s + batch_size]
                for s in range(0, X.shape[0], batch_size)
            ]
        rows = batches.pop(0)
        raw = parameter_shift_gradient(
            t, theta, X[rows], y[rows], loss, workers=cfg.workers
        )
        g = raw if math.isinf(cfg.clip_norm) else clip(raw, cfg.clip_norm)
        if cfg.qfim_mode == "identity":
            F = np.eye(t.n_params)
        else:
            F = qfim_batch(
                t,
                theta,
                X[rows],
                cfg.qfim_mode,
                cfg.block_size,
                workers=cfg.workers,
            ).matrix
        delta = precondition(g, F, cfg.damping)
        norm2 = f_norm_squared(delta, F, cfg.damping)
        scaled = norm2 > cfg.trust_radius**2
        if scaled:
            delta = delta * (cfg.trust_radius / np.sqrt(norm2))
        theta = theta - cfg.step * delta
        logger.info(
            "qmu_i iteration %d |g|=%.4g trust-scaled=%s",
            iteration,
            np.linalg.norm(raw),
            scaled,
        )
        trace.record(
            theta,
            iteration=iteration,
            grad_norm=float(np.linalg.norm(raw)),
            clipped=bool(np.linalg.norm(raw) > cfg.clip_norm),
            f_norm=float(np.sqrt(f_norm_squared(delta, F, cfg.damping))),
            trust_scaled=bool(scaled),
        )
    unlearned = model.copy()
    unlearned.theta = theta
    Xs, ys = data.select("retained")
    unlearned = fine_tune(unlearned, Xs, ys, cfg.fine_tune)
    if cfg.fine_tune.epochs:
        trace.record(unlearned.theta)
    return unlearned, trace


def reset_partial(
    model: TrainedModel,
    data: Dataset,
    selection,
    seed,
    cfg: TrainConfig | None = None,
):
    """Redraw the selected coordinates, then fine-tune only those on D_s."""
    selection = sorted({int(i) for i in selection})
    if not selection:
        raise ValidationError("selection is empty", "selection")
    if selection[0] < 0 or selection[-1] >= model.template.n_params:
        raise ValidationError("parameter index out of range", "selection")
    cfg = cfg or _default_fine_tune()
    trace = UnlearnTrace("reset_partial")
    trace.record(model.theta)
    fresh = init_params(model.template.n_params, seed)
    reset = model.copy()
    reset.theta[selection] = fresh[selection]
    trace.record(reset.theta)
    Xs, ys = data.select("retained")
    tuned = fine_tune(reset, Xs, ys, cfg, free=selection)
    if cfg.epochs:
        trace.record(tuned.theta)
    return tuned, trace


def client_forget(rho: DensityMatrix, client_block) -> DensityMatrix:
    """Replace the client block with ``I / 2^|c|``, keep the rest as is."""
    n = rho.n_qubits
    block = list(_check_targets(client_block, n))
    rest = [q for q in range(n) if q not in block]
    if not rest:
        raise ValidationError(
            "client block covers the whole register", "client_block"
        )
    if not block:
        return rho
    joint = tensor_product(
        maximally_mixed(len(block)), partial_trace(rho, rest)
    )
    position = {q: k for k, q in enumerate(block + rest)}
    return permute_qubits(joint, [position[q] for q in range(n)])


def forget_indices(data: Dataset, indices) -> Dataset:
    mask = np.zeros(len(data), dtype=bool)
    mask[np.asarray(indices, dtype=int)] = True
    return data.with_forget(mask)


def forget_class(data: Dataset, label) -> Dataset:
    """Class-level scope: D_r is every train row carrying ``label``."""
    mask = (data.split == "train") & (data.labels == label)
    return data.with_forget(mask)


def forget_cluster(data: Dataset, label, size, seed) -> Dataset:
    """The ``size`` train rows of ``label`` nearest a seeded anchor row."""
    rows = np.flatnonzero((data.split == "train") & (data.labels == label))
    if size < 1 or size > rows.size:
        raise ValidationError(
            f"cannot take {size} of {rows.size} rows", "size"
        )
    rng = np.random.default_rng(seed)
    anchor = data.features[rng.choice(rows)]
    distance = np.linalg.norm(data.features[rows] - anchor, axis=1)
    chosen = rows[np.argsort(distance, kind="stable")[:size]]
    return forget_indices(data, chosen)
