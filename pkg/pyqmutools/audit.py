"""Certification of forgetting against the retrained counterfactual."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from jinja2 import Environment, FileSystemLoader
from sklearn.metrics import roc_auc_score, roc_curve

from .documents import (
    document_digest,
    dump_yaml,
    load_yaml,
    parse_timestamp,
    to_plain,
    utc_timestamp,
    write_csv,
)
from .errors import ReportValidationError, ValidationError
from .geo import effective_dimension, qfi_spectrum, qfim_batch
from .learn import Dataset, TrainedModel, evaluate
from .losses import LossSpec
from .pqc import CircuitTemplate, model_state, predict
from .qcore import fidelity, trace_distance
from .unlearn import UnlearnTrace, forget_gradient

logger = logging.getLogger(__name__)

EPS_CERT = 0.05
SUMMARY_TEMPLATE = Path(__file__).parent / "templates" / "report_summary.md"
REQUIRED_FIELDS = (
    "mechanism",
    "distances",
    "certificate",
    "param_gap",
    "membership",
    "retention",
    "reproducibility",
)


def _probes(t, probes):
    probes = np.atleast_2d(np.asarray(probes, dtype=float))
    if probes.shape[0] == 0:
        raise ValidationError("probe set is empty", "probes")
    if probes.shape[1] != t.n_features:
        raise ValidationError(
            f"probes have {probes.shape[1]} features, template reads"
            f" {t.n_features}",
            "probes",
        )
    return probes


def probe_digest(probes) -> str:
    return document_digest({"probes": np.asarray(probes, dtype=float)})


def _distances(t, theta, reference_state, probes):
    state = model_state(t, theta, probes)
    return (
        trace_distance(state, reference_state),
        1.0 - fidelity(state, reference_state),
    )


def distance_audit(
    t: CircuitTemplate,
    theta_before,
    theta_after,
    theta_ref,
    probes,
    eps_cert=EPS_CERT,
) -> dict:
    """Trace distance and infidelity to the counterfactual model state."""
    probes = _probes(t, probes)
    reference = model_state(t, theta_ref, probes)
    d_before, inf_before = _distances(t, theta_before, reference, probes)
    d_after, inf_after = _distances(t, theta_after, reference, probes)
    return {
        "trace_distance_before": d_before,
        "trace_distance_after": d_after,
        "infidelity_before": inf_before,
        "infidelity_after": inf_after,
        "contracted": bool(d_after < d_before),
        "eps_cert": float(eps_cert),
        "certified": bool(d_after <= eps_cert),
    }


def param_gap_bound(
    model: TrainedModel, data: Dataset, S, lam=1e-3, F=None
) -> float:
    """Heuristic ``||grad L_S|| / (lambda_min(F) + lam)``."""
    S = np.asarray(S, dtype=int).reshape(-1)
    if S.size == 0:
        raise ValidationError("sample set is empty", "S")
    X, y = data.features[S], data.labels[S]
    g = forget_gradient(model, X, y)
    if F is None:
        F = qfim_batch(model.template, model.theta, X).matrix
    smallest = float(np.linalg.eigvalsh(getattr(F, "matrix", F))[0])
    scale = max(smallest, 0.0) + lam
    norm = float(np.linalg.norm(g))
    if norm == 0:
        return 0.0
    if scale <= 0:
        raise ValidationError("F is singular and lam is zero", "lam")
    return norm / scale


def geometric_gap(theta, theta_ref, F) -> float:
    """``(theta - theta_ref)^T F (theta - theta_ref)``."""
    gap = np.asarray(theta, dtype=float) - np.asarray(theta_ref, dtype=float)
    return float(gap @ np.asarray(getattr(F, "matrix", F)) @ gap)


def sample_losses(t, theta, X, y, loss="mse") -> np.ndarray:
    f = np.array([predict(t, theta, x) for x in X])
    return LossSpec(loss).value(f, y)


def membership_inference(
    t: CircuitTemplate, theta, forget, retained, holdout, loss="mse"
) -> dict:
    """Loss-threshold attack calibrated on (D_s, holdout), run on D_r.

    Each set is an ``(X, y)`` pair.  Members are predicted when the loss is
    at most ``threshold``.
    """
    for name, (X, _) in (
        ("forget", forget),
        ("retained", retained),
        ("holdout", holdout),
    ):
        if len(X) == 0:
            raise ValidationError("set is empty", name)
    score_r = -sample_losses(t, theta, *forget, loss)
    score_s = -sample_losses(t, theta, *retained, loss)
    score_h = -sample_losses(t, theta, *holdout, loss)
    calibration = np.concatenate(
        [np.ones(len(score_s)), np.zeros(len(score_h))]
    )
    fpr, tpr, cuts = roc_curve(
        calibration, np.concatenate([score_s, score_h])
    )
    best = int(np.argmax(tpr - fpr))
    cut = float(cuts[best])
    tpr_r = float(np.mean(score_r >= cut))
    fpr_h = float(np.mean(score_h >= cut))
    members = np.concatenate([np.ones(len(score_r)), np.zeros(len(score_h))])
    auc = float(roc_auc_score(members, np.concatenate([score_r, score_h])))
    return {
        "advantage": tpr_r - fpr_h,
        "auc": auc,
        "threshold": -cut,
        "tpr": tpr_r,
        "fpr": fpr_h,
    }


@dataclass
class ForgettingCurve:
    iterations: list
    distances: list

    def __post_init__(self):
        if any(b <= a for a, b in zip(self.iterations, self.iterations[1:])):
            raise ValidationError("iterations must increase", "iterations")

    def flatness(self, k=3) -> float:
        """``max - min`` over the final ``k`` points."""
        tail = self.distances[-k:]
        return float(max(tail) - min(tail))

    def rows(self):
        return list(zip(self.iterations, self.distances))


def forgetting_curve(
    trace: UnlearnTrace, theta_ref, t: CircuitTemplate, probes
) -> ForgettingCurve:
    """Distance to the counterfactual at every snapshot of ``trace``."""
    if not trace.snapshots:
        raise ValidationError("trace has no snapshots", "trace")
    probes = _probes(t, probes)
    reference = model_state(t, theta_ref, probes)
    distances = [
        _distances(t, theta, reference, probes)[0]
        for theta in trace.snapshots
    ]
    trace.distances = list(distances)
    return ForgettingCurve(list(range(len(distances))), distances)


def write_curve_csv(curve: ForgettingCurve, path):
    return write_csv(path, ["iteration", "trace_distance"], curve.rows())


def retention_metrics(
    t: CircuitTemplate, theta_after, data: Dataset, baseline=None
) -> dict:
    """Accuracy on D_s and D_r, with deltas against ``baseline``."""
    model = TrainedModel(t, np.asarray(theta_after, dtype=float))
    metrics = {
        "retained_accuracy": evaluate(model, data, "retained")["accuracy"],
        "forget_accuracy": evaluate(model, data, "forget")["accuracy"],
    }
    if baseline is not None:
        for key in ("retained_accuracy", "forget_accuracy"):
            metrics[key.replace("accuracy", "delta")] = (
                metrics[key] - baseline[key]
            )
    return metrics


def qfi_summary(F, lam=1e-3) -> dict:
    return {
        "spectrum": qfi_spectrum(F).tolist(),
        "effective_dimension": effective_dimension(F, lam),
        "damping": lam,
    }


@dataclass
class UnlearnReport:
    mechanism: str
    distances: dict
    certificate: dict
    param_gap: dict
    membership: dict
    retention: dict
    reproducibility: dict
    geometric_gap: float | None = None
    qfi: dict | None = None
    kernel: dict | None = None
    privacy: dict | None = None
    curve: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if v is not None}


def validate_report(document: dict) -> dict:
    for name in REQUIRED_FIELDS:
        if name not in document:
            raise ReportValidationError("required field is missing", name)
    for key, value in document["distances"].items():
        if key.startswith(("trace_distance", "infidelity")):
            if not -1e-9 <= value <= 1 + 1e-9:
                raise ReportValidationError(
                    f"{value!r} not in [0, 1]", f"distances.{key}"
                )
    for stage, attack in document["membership"].items():
        if not -1 <= attack["advantage"] <= 1:
            raise ReportValidationError(
                "advantage not in [-1, 1]", f"membership.{stage}"
            )
        if not 0 <= attack["auc"] <= 1:
            raise ReportValidationError(
                "AUC not in [0, 1]", f"membership.{stage}"
            )
    return document


def emit_report(report, path) -> str:
    """Write the report document; returns its timestamp-free digest."""
    document = to_plain(
        report.to_dict() if hasattr(report, "to_dict") else report
    )
    validate_report(document)
    document.pop("digest", None)
    document["created"] = utc_timestamp()
    document["digest"] = document_digest(document)
    dump_yaml(path, document)
    logger.info("wrote report %s", path)
    return document["digest"]


def load_report(path) -> dict:
    document = load_yaml(path, empty_error=ReportValidationError)
    validate_report(document)
    stored = document.pop("digest", None)
    if stored != document_digest(document):
        raise ReportValidationError("digest does not match", "digest")
    document["digest"] = stored
    if "created" in document:
        document["created"] = parse_timestamp(document["created"])
    return document


def render_summary(document: dict, path):
    env = Environment(
        loader=FileSystemLoader(str(SUMMARY_TEMPLATE.parent)),
        keep_trailing_newline=True,
    )
    tmpl = env.get_template(SUMMARY_TEMPLATE.name)
    path = Path(path)
    path.write_text(tmpl.render(report=document))
    return path
