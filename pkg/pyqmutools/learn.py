"""Datasets, supervised training of circuit models and their evaluation."""

from __future__ import annotations

import logging
from dataclasses import InitVar, dataclass, field

import numpy as np
from sklearn.metrics import roc_auc_score

from .documents import dump_yaml, load_yaml
from .errors import ValidationError
from .geo import (
    DEFAULT_DAMPING,
    QFIM_MODES,
    batch_loss,
    natural_step,
    parameter_shift_gradient,
    qfim_batch,
)
from .losses import LossSpec
from .pqc import (
    CircuitTemplate,
    predict,
    template_from_dict,
    template_to_dict,
)

logger = logging.getLogger(__name__)

SPLITS = ("train", "test", "retained", "forget")
OPTIMIZERS = ("gd", "natural")
MAX_PROBES = 32


@dataclass(frozen=True, eq=False)
class Dataset:
    """Feature rows with +/-1 labels, a train/test tag and a forget mask.

    The forget mask marks D_r; the retained set D_s is every other train
    row.  Test rows are never in D_r.
    """

    features: np.ndarray
    labels: np.ndarray
    forget_mask: np.ndarray | None = None
    split: np.ndarray | None = None
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        features = np.atleast_2d(np.asarray(self.features, dtype=float))
        n = features.shape[0]
        labels = np.asarray(self.labels).astype(int).reshape(-1)
        split = (
            np.full(n, "train", dtype=object)
            if self.split is None
            else np.asarray(self.split, dtype=object).reshape(-1)
        )
        mask = (
            np.zeros(n, dtype=bool)
            if self.forget_mask is None
            else np.asarray(self.forget_mask, dtype=bool).reshape(-1)
        )
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "split", split)
        object.__setattr__(self, "forget_mask", mask)
        if not validate:
            return
        for name, column in (("labels", labels), ("split", split)):
            if column.shape[0] != n:
                raise ValidationError(
                    f"{column.shape[0]} entries for {n} rows", name
                )
        if mask.shape[0] != n:
            raise ValidationError(
                f"{mask.shape[0]} entries for {n} rows", "forget_mask"
            )
        if not np.all(np.isin(labels, (-1, 1))):
            raise ValidationError("labels must be -1 or +1", "labels")
        if not np.all(np.isin(split, ("train", "test"))):
            raise ValidationError("split must be train or test", "split")
        if np.any(mask & (split != "train")):
            raise ValidationError(
                "only train rows can be forgotten", "forget_mask"
            )
        if not np.all(np.isfinite(features)):
            raise ValidationError("non-finite feature", "features")

    def __len__(self):
        return self.features.shape[0]

    @property
    def n_features(self):
        return self.features.shape[1]

    def indices(self, split) -> np.ndarray:
        train = self.split == "train"
        if split == "train":
            rows = train
        elif split == "test":
            rows = self.split == "test"
        elif split == "retained":
            rows = train & ~self.forget_mask
        elif split == "forget":
            rows = self.forget_mask
        else:
            raise ValidationError(f"unknown split {split!r}", "split")
        return np.flatnonzero(rows)

    def select(self, split):
        rows = self.indices(split)
        return self.features[rows], self.labels[rows]

    def with_forget(self, mask) -> "Dataset":
        return Dataset(self.features, self.labels, mask, self.split)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows, dtype=int)
        return Dataset(
            self.features[rows],
            self.labels[rows],
            self.forget_mask[rows],
            self.split[rows],
            validate=False,
        )


@dataclass
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 30
    batch_size: int = 8
    optimizer: str = "gd"
    damping: float = DEFAULT_DAMPING
    patience: int = 5
    seed: int = 0
    loss: str = "mse"
    qfim_mode: str = "diagonal"
    block_size: int = 2
    workers: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValidationError("must be positive", "learning_rate")
        if self.epochs < 0:
            raise ValidationError("must not be negative", "epochs")
        if self.batch_size < 1:
            raise ValidationError("must be at least 1", "batch_size")
        if self.optimizer not in OPTIMIZERS:
            raise ValidationError(
                f"{self.optimizer!r} is not one of {OPTIMIZERS}", "optimizer"
            )
        if self.damping < 0:
            raise ValidationError("must not be negative", "damping")
        if self.patience < 1:
            raise ValidationError("must be at least 1", "patience")
        if self.qfim_mode not in QFIM_MODES:
            raise ValidationError(
                f"{self.qfim_mode!r} is not one of {QFIM_MODES}", "qfim_mode"
            )
        LossSpec(self.loss)

    @property
    def loss_spec(self) -> LossSpec:
        return LossSpec(self.loss)


@dataclass
class TrainedModel:
    template: CircuitTemplate
    theta: np.ndarray
    loss_trace: list = field(default_factory=list)
    seed: int = 0
    loss: str = "mse"

    def copy(self) -> "TrainedModel":
        return TrainedModel(
            self.template,
            np.array(self.theta, dtype=float),
            list(self.loss_trace),
            self.seed,
            self.loss,
        )

    def predict(self, x) -> float:
        return predict(self.template, self.theta, x)


def init_params(n_params, seed) -> np.ndarray:
    """Uniform draw on ``[-pi, pi]``."""
    rng = np.random.default_rng(seed)
    return rng.uniform(-np.pi, np.pi, size=n_params)


def _epoch_order(n, seed, epoch):
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1, epoch]))
    return rng.permutation(n)


def _fit(t, X, y, theta, cfg: TrainConfig, free=None):
    """Mini-batch descent from ``theta``; returns best theta and loss trace.

    ``free`` lists the coordinates allowed to move; the others are never
    written.
    """
    if cfg.optimizer == "natural" and t.noisy:
        raise ValidationError(
            "natural gradient needs a noiseless template", "optimizer"
        )
    loss = cfg.loss_spec
    theta = np.array(theta, dtype=float)
    free = (
        np.arange(t.n_params)
        if free is None
        else np.asarray(sorted(free), dtype=int)
    )
    n = X.shape[0]
    best_theta, best_loss = theta.copy(), np.inf
    trace = []
    stale = 0
    for epoch in range(cfg.epochs):
        order = _epoch_order(n, cfg.seed, epoch)
        for start in range(0, n, cfg.batch_size):
            rows = order[start : start + cfg.batch_size]
            g = parameter_shift_gradient(
                t, theta, X[rows], y[rows], loss, workers=cfg.workers
            )
            if cfg.optimizer == "natural":
                F = qfim_batch(
                    t,
                    theta,
                    X[rows],
                    cfg.qfim_mode,
                    cfg.block_size,
                    workers=cfg.workers,
                ).matrix
                theta[free] = natural_step(
                    theta[free],
                    g[free],
                    F[np.ix_(free, free)],
                    cfg.learning_rate,
                    cfg.damping,
                )
            else:
                theta[free] = theta[free] - cfg.learning_rate * g[free]
        epoch_loss = batch_loss(t, theta, X, y, loss)
        trace.append(epoch_loss)
        logger.info("epoch %d loss %.6f", epoch, epoch_loss)
        if epoch_loss < best_loss:
            best_theta, best_loss = theta.copy(), epoch_loss
            stale = 0
        else:
            stale += 1
            if stale >= cfg.patience:
                logger.warning(
                    "early stop after %d epochs without improvement", stale
                )
                break
    return best_theta, trace


def _check_features(t, data):
    if data.n_features != t.n_features:
        raise ValidationError(
            f"template reads {t.n_features} features, data has"
            f" {data.n_features}",
            "data",
        )


def train(t: CircuitTemplate, data: Dataset, cfg: TrainConfig):
    if cfg.epochs < 1:
        raise ValidationError("training needs at least one epoch", "epochs")
    _check_features(t, data)
    X, y = data.select("train")
    if X.shape[0] == 0:
        raise ValidationError("train split is empty", "data")
    theta, trace = _fit(t, X, y, init_params(t.n_params, cfg.seed), cfg)
    return TrainedModel(t, theta, trace, cfg.seed, cfg.loss)


def retrain_counterfactual(t: CircuitTemplate, data: Dataset, cfg):
    """Train on D_s only, from the same initial parameters as ``train``."""
    if cfg.epochs < 1:
        raise ValidationError("training needs at least one epoch", "epochs")
    _check_features(t, data)
    X, y = data.select("retained")
    if X.shape[0] == 0:
        raise ValidationError("retained set is empty", "data")
    theta, trace = _fit(t, X, y, init_params(t.n_params, cfg.seed), cfg)
    return TrainedModel(t, theta, trace, cfg.seed, cfg.loss)


def fine_tune(model: TrainedModel, X, y, cfg: TrainConfig, free=None):
    """Continue training ``model`` on ``(X, y)``; zero epochs is a no-op."""
    out = model.copy()
    if cfg.epochs == 0 or len(X) == 0:
        return out
    out.theta, trace = _fit(model.template, X, y, model.theta, cfg, free)
    out.loss_trace.extend(trace)
    return out


def predictions(t, theta, X) -> np.ndarray:
    return np.array([predict(t, theta, x) for x in X])


def evaluate(model: TrainedModel, data: Dataset, split="test") -> dict:
    X, y = data.select(split)
    if X.shape[0] == 0:
        raise ValidationError(f"{split} split is empty", "split")
    f = predictions(model.template, model.theta, X)
    guess = np.where(f >= 0, 1, -1)
    metrics = {
        "n": int(X.shape[0]),
        "loss": LossSpec(model.loss).mean(f, y),
        "accuracy": float(np.mean(guess == y)),
    }
    if np.unique(y).size == 2:
        metrics["auc"] = float(roc_auc_score(y, f))
    return metrics


def default_probes(data: Dataset, max_probes=MAX_PROBES, seed=0):
    """Seeded selection of at most ``max_probes`` test rows.

    Falls back to the retained rows when the dataset has no test split.
    """
    rows = data.indices("test")
    if rows.size == 0:
        rows = data.indices("retained")
    if rows.size == 0:
        raise ValidationError("no rows to probe with", "data")
    rng = np.random.default_rng(seed)
    chosen = np.sort(rng.permutation(rows)[:max_probes])
    return data.features[chosen]


def save_model(model: TrainedModel, path):
    return dump_yaml(
        path,
        {
            "template": template_to_dict(model.template),
            "theta": model.theta,
            "loss_trace": model.loss_trace,
            "seed": model.seed,
            "loss": model.loss,
        },
    )


def load_model(path) -> TrainedModel:
    data = load_yaml(path, empty_error=ValidationError)
    template = template_from_dict(data["template"])
    theta = np.asarray(data["theta"], dtype=float)
    if theta.shape != (template.n_params,):
        raise ValidationError(
            f"{theta.shape[0]} values for {template.n_params} parameters",
            "theta",
        )
    return TrainedModel(
        template,
        theta,
        list(data.get("loss_trace", [])),
        int(data.get("seed", 0)),
        data.get("loss", "mse"),
    )
