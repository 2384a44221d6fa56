"""Simulated secure aggregation with zero-sum additive masks."""

from __future__ import annotations

import hashlib
import logging
from dataclasses import InitVar, dataclass

import numpy as np

from ..errors import InvariantViolation, ValidationError

logger = logging.getLogger(__name__)

TOPOLOGIES = ("star", "ring", "none")
MASK_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class MaskSet:
    """One mask per client, summing to zero elementwise."""

    masks: np.ndarray
    topology: str = "star"
    validate: InitVar[bool] = True

    def __post_init__(self, validate):
        masks = np.atleast_2d(np.asarray(self.masks, dtype=float))
        object.__setattr__(self, "masks", masks)
        if validate and np.max(np.abs(masks.sum(axis=0))) > MASK_TOL:
            raise ValidationError("masks do not sum to zero", "masks")

    def __len__(self):
        return self.masks.shape[0]


def generate_masks(n_clients, n_params, seed, topology="star", scale=1.0):
    """Zero-sum masks from a trusted round seed.

    ``star`` draws ``n - 1`` shares and closes with the negated sum;
    ``ring`` gives client ``i`` the difference of its own draw and its left
    neighbour's.  ``none`` yields zero masks.
    """
    if topology not in TOPOLOGIES:
        raise ValidationError(
            f"{topology!r} is not one of {TOPOLOGIES}", "topology"
        )
    if n_clients < 1:
        raise ValidationError("need at least one client", "n_clients")
    if topology == "none":
        return MaskSet(np.zeros((n_clients, n_params)), topology)
    rng = np.random.default_rng(seed)
    if topology == "star":
        shares = scale * rng.normal(size=(n_clients - 1, n_params))
        masks = np.vstack([shares, -shares.sum(axis=0, keepdims=True)])
    else:
        draws = scale * rng.normal(size=(n_clients, n_params))
        masks = draws - np.roll(draws, 1, axis=0)
    return MaskSet(masks, topology)


def mask_updates(updates, masks: MaskSet):
    updates = np.atleast_2d(np.asarray(updates, dtype=float))
    if updates.shape[0] != len(masks):
        raise ValidationError(
            f"{updates.shape[0]} updates for {len(masks)} masks", "masks"
        )
    if updates.shape != masks.masks.shape:
        raise ValidationError(
            f"updates {updates.shape} against masks {masks.masks.shape}",
            "masks",
        )
    return updates + masks.masks


def messages_digest(messages) -> str:
    data = np.ascontiguousarray(np.asarray(messages, dtype=float))
    return hashlib.sha256(data.tobytes()).hexdigest()


def secure_aggregate(updates, masks: MaskSet) -> np.ndarray:
    """Aggregate of one round.

    The masked messages are what the aggregator sees; their total is checked
    against the plain sum and the plain sum is returned, so the result does
    not depend on the mask topology.
    """
    if np.max(np.abs(masks.masks.sum(axis=0))) > MASK_TOL:
        raise ValidationError("masks do not sum to zero", "masks")
    messages = mask_updates(updates, masks)
    logger.debug(
        "aggregator observed %d masked messages, digest %s",
        len(messages),
        messages_digest(messages),
    )
    total = messages.sum(axis=0)
    plain = np.asarray(updates, dtype=float).sum(axis=0)
    if np.max(np.abs(total - plain)) > MASK_TOL:
        raise InvariantViolation("masked aggregate differs from the sum")
    return plain
