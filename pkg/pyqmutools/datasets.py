"""Synthetic dataset generators and the dataset CSV format.

The CSV header is ``f0,...,f{d-1},label[,split][,forget]``.  Labels are
-1 or 1, split is ``train`` or ``test`` and forget is 0 or 1.
"""

from __future__ import annotations

import logging

import numpy as np
from sklearn.datasets import make_blobs, make_moons
from sklearn.model_selection import train_test_split

from .documents import read_csv, write_csv
from .errors import ValidationError
from .learn import Dataset

logger = logging.getLogger(__name__)

GENERATORS = ("two_moons", "blobs", "xor")
TEST_FRACTION = 0.2
MIN_SAMPLES = 4


def scale_features(X) -> np.ndarray:
    """Min-max scale every column onto ``[-pi, pi]``."""
    X = np.asarray(X, dtype=float)
    low, high = X.min(axis=0), X.max(axis=0)
    span = np.where(high > low, high - low, 1.0)
    scaled = (X - low) / span * 2.0 * np.pi - np.pi
    return np.where(high > low, scaled, 0.0)


def split_tags(labels, seed, test_fraction=TEST_FRACTION) -> np.ndarray:
    """Seeded, label-stratified train/test tags."""
    rows = np.arange(len(labels))
    counts = np.unique(labels, return_counts=True)[1]
    stratify = labels if counts.min() >= 2 else None
    _, test = train_test_split(
        rows,
        test_size=test_fraction,
        random_state=seed,
        stratify=stratify,
    )
    tags = np.full(len(labels), "train", dtype=object)
    tags[test] = "test"
    return tags


def _xor(n, noise, rng):
    corners = np.array([[1, 1], [-1, -1], [1, -1], [-1, 1]], dtype=float)
    which = np.arange(n) % 4
    X = corners[which] * rng.uniform(0.2, 1.0, size=(n, 2))
    X = X + noise * rng.normal(size=(n, 2))
    y = np.where(which < 2, 1, -1)
    return X, y


def generate_dataset(name, n, noise=0.1, seed=0) -> Dataset:
    if n < MIN_SAMPLES:
        raise ValidationError(f"need at least {MIN_SAMPLES} samples", "n")
    if noise < 0:
        raise ValidationError("must not be negative", "noise")
    if name == "two_moons":
        X, y = make_moons(n_samples=n, noise=noise, random_state=seed)
        y = 2 * y - 1
    elif name == "blobs":
        X, y = make_blobs(
            n_samples=n,
            centers=[(-1.0, -1.0), (1.0, 1.0)],
            cluster_std=noise,
            random_state=seed,
        )
        y = 2 * y - 1
    elif name == "xor":
        X, y = _xor(n, noise, np.random.default_rng(seed))
    else:
        raise ValidationError(
            f"{name!r} is not one of {GENERATORS}", "generator"
        )
    logger.info("generated %s with %d samples", name, n)
    return Dataset(scale_features(X), y, None, split_tags(y, seed))


def save_dataset_csv(data: Dataset, path):
    header = [f"f{i}" for i in range(data.n_features)]
    header += ["label", "split", "forget"]
    rows = [
        [*map(float, x), int(label), split, int(forget)]
        for x, label, split, forget in zip(
            data.features, data.labels, data.split, data.forget_mask
        )
    ]
    return write_csv(path, header, rows)


def load_dataset_csv(path, seed=0) -> Dataset:
    """Read a dataset CSV; a missing split column gets a seeded 80/20."""
    header, rows = read_csv(path)
    if not header:
        raise ValidationError(f"{path} has no header", "dataset")
    feature_columns = [i for i, h in enumerate(header) if h.startswith("f")]
    feature_columns = [
        i for i in feature_columns if header[i][1:].isdigit()
    ]
    if not feature_columns:
        raise ValidationError("no f0.. feature columns", "dataset")
    if "label" not in header:
        raise ValidationError("missing label column", "dataset")
    if not rows:
        raise ValidationError(f"{path} has no rows", "dataset")
    column = {name: i for i, name in enumerate(header)}
    try:
        X = np.array(
            [[float(r[i]) for i in feature_columns] for r in rows]
        )
        y = np.array([int(float(r[column["label"]])) for r in rows])
    except ValueError as e:
        raise ValidationError(str(e), "dataset") from e
    if "split" in column:
        split = np.array([r[column["split"]] for r in rows], dtype=object)
    else:
        split = split_tags(y, seed)
    if "forget" in column:
        forget = np.array([r[column["forget"]] in ("1", "true") for r in rows])
    else:
        forget = None
    return Dataset(X, y, forget, split)
