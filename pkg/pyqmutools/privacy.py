"""Gradient clipping, Gaussian noise and Renyi DP accounting."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

logger = logging.getLogger(__name__)

RDP_ORDERS = tuple(1.25 + 0.25 * i for i in range(252))
MECHANISMS = ("gaussian",)


def clip(g, C) -> np.ndarray:
    if not C > 0:
        raise ValidationError("clip norm must be positive", "C")
    g = np.asarray(g, dtype=float)
    norm = np.linalg.norm(g)
    if norm <= C:
        return g.copy()
    return g * (C / norm)


def gaussian_sigma(C, epsilon, delta) -> float:
    """Noise scale ``C sqrt(2 ln(1.25 / delta)) / epsilon``.

    The closed form is only proven for ``epsilon < 1``; larger values are
    still evaluated but logged.
    """
    sigma, _ = calibrate(C, epsilon, delta)
    return sigma


def calibrate(C, epsilon, delta):
    """Return ``(sigma, flagged)``; flagged outside the proof regime."""
    if not C > 0:
        raise ValidationError("clip norm must be positive", "C")
    if not epsilon > 0:
        raise ValidationError("must be positive", "epsilon")
    if not 0 < delta < 1:
        raise ValidationError("must lie in (0, 1)", "delta")
    flagged = epsilon >= 1
    if flagged:
        logger.warning(
            "epsilon=%g is outside the Gaussian mechanism proof regime",
            epsilon,
        )
    return C * np.sqrt(2.0 * np.log(1.25 / delta)) / epsilon, flagged


def add_noise(g, sigma, rng) -> np.ndarray:
    if sigma < 0:
        raise ValidationError("must not be negative", "sigma")
    g = np.asarray(g, dtype=float)
    if sigma == 0:
        return g.copy()
    return g + rng.normal(0.0, sigma, size=g.shape)


@dataclass
class DPConfig:
    """Either a target ``epsilon`` or an explicit ``sigma`` sets the noise."""

    clip_norm: float = 1.0
    epsilon: float | None = None
    delta: float = 1e-5
    sigma: float | None = None

    def __post_init__(self):
        if not self.clip_norm > 0:
            raise ValidationError("must be positive", "clip_norm")
        if not 0 < self.delta < 1:
            raise ValidationError("must lie in (0, 1)", "delta")
        if (self.epsilon is None) == (self.sigma is None):
            raise ValidationError(
                "give exactly one of epsilon and sigma", "epsilon"
            )
        if self.epsilon is not None and not self.epsilon > 0:
            raise ValidationError("must be positive", "epsilon")
        if self.sigma is not None and self.sigma < 0:
            raise ValidationError("must not be negative", "sigma")

    def resolve(self):
        if self.sigma is not None:
            return float(self.sigma), False
        return calibrate(self.clip_norm, self.epsilon, self.delta)


@dataclass(frozen=True)
class LedgerEntry:
    sigma: float
    clip_norm: float
    mechanism: str = "gaussian"
    flagged: bool = False


def _round_rdp(entry: LedgerEntry, orders):
    if entry.mechanism not in MECHANISMS:
        raise ValidationError(
            f"unknown mechanism {entry.mechanism!r}", "mechanism"
        )
    if entry.sigma == 0:
        return np.full(len(orders), np.inf)
    return orders * entry.clip_norm**2 / (2.0 * entry.sigma**2)


def _convert(rdp, delta, orders):
    """Best ``(epsilon, order)`` over the order grid."""
    with np.errstate(invalid="ignore"):
        candidates = rdp + np.log(1.0 / delta) / (orders - 1.0)
    if not np.any(np.isfinite(candidates)):
        return np.inf, None
    best = int(np.nanargmin(candidates))
    return float(candidates[best]), float(orders[best])


def compose(ledger, rounds=None, delta=None) -> dict:
    """Cumulative epsilon of the first ``rounds`` ledger entries.

    Reports the RDP total with its optimal order, and the naive comparator:
    the per-round epsilons each converted at ``delta / k`` and summed.
    """
    entries = list(ledger.entries if hasattr(ledger, "entries") else ledger)
    if rounds is not None:
        entries = entries[:rounds]
    if delta is None:
        delta = getattr(ledger, "delta", 1e-5)
    orders = np.asarray(RDP_ORDERS)
    k = len(entries)
    if k == 0:
        return {
            "rounds": 0,
            "delta": delta,
            "epsilon": 0.0,
            "order": None,
            "naive_epsilon": 0.0,
        }
    per_round = [_round_rdp(entry, orders) for entry in entries]
    epsilon, order = _convert(np.sum(per_round, axis=0), delta, orders)
    naive = sum(_convert(r, delta / k, orders)[0] for r in per_round)
    return {
        "rounds": k,
        "delta": delta,
        "epsilon": epsilon,
        "order": order,
        "naive_epsilon": float(naive),
    }


@dataclass
class PrivacyLedger:
    delta: float = 1e-5
    entries: list = field(default_factory=list)

    def record(self, sigma, clip_norm, mechanism="gaussian", flagged=False):
        entry = LedgerEntry(float(sigma), float(clip_norm), mechanism, flagged)
        _round_rdp(entry, np.asarray(RDP_ORDERS[:1]))
        self.entries.append(entry)
        return entry

    def epsilon(self, delta=None) -> float:
        return compose(self, delta=delta)["epsilon"]

    def snapshot(self) -> dict:
        return compose(self)

    def to_dict(self) -> dict:
        summary = compose(self)
        summary["entries"] = [
            {
                "sigma": e.sigma,
                "clip_norm": e.clip_norm,
                "mechanism": e.mechanism,
                "flagged": e.flagged,
            }
            for e in self.entries
        ]
        return summary
