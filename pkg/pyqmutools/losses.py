"""Per-sample losses on the readout value ``f = <O>`` in ``[-1, 1]``."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

KINDS = ("mse", "logistic", "expectation")
_PROB_FLOOR = 1e-12


@dataclass(frozen=True)
class LossSpec:
    """Loss applied to a readout value and a +/-1 label.

    ``logistic`` maps the readout to a probability ``(1 + f) / 2`` and
    scores it with binary cross-entropy.  ``expectation`` is the raw readout
    and ignores the label.
    """

    kind: str = "mse"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValidationError(
                f"{self.kind!r} is not one of {KINDS}", "kind"
            )

    def value(self, f, y):
        f = np.asarray(f, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "mse":
            out = (f - y) ** 2
        elif self.kind == "logistic":
            p = np.clip((1.0 + f) / 2.0, _PROB_FLOOR, 1.0 - _PROB_FLOOR)
            target = (1.0 + y) / 2.0
            out = -(target * np.log(p) + (1.0 - target) * np.log(1.0 - p))
        else:
            out = f + 0.0 * y
        return out

    def derivative(self, f, y):
        """``d loss / d f`` at the readout value."""
        f = np.asarray(f, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "mse":
            out = 2.0 * (f - y)
        elif self.kind == "logistic":
            p = np.clip((1.0 + f) / 2.0, _PROB_FLOOR, 1.0 - _PROB_FLOOR)
            target = (1.0 + y) / 2.0
            out = 0.5 * (p - target) / (p * (1.0 - p))
        else:
            out = np.ones_like(f + y)
        return out

    def mean(self, f, y) -> float:
        return float(np.mean(self.value(f, y)))
