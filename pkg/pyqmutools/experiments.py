"""Experiment drivers behind the ``pyqmu`` subcommands.

Every experiment writes into the configured output directory: its report
document(s), a snapshot of the dataset it ran on, and ``manifest.yaml``
listing the seeds it consumed and the digest of every artifact.
"""

from __future__ import annotations

import dataclasses
import logging
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from .audit import (
    UnlearnReport,
    distance_audit,
    emit_report,
    forgetting_curve,
    geometric_gap,
    load_report,
    membership_inference,
    param_gap_bound,
    probe_digest,
    qfi_summary,
    render_summary,
    retention_metrics,
    write_curve_csv,
)
from .config import RunConfig
from .datasets import generate_dataset, load_dataset_csv, save_dataset_csv
from .documents import (
    document_digest,
    dump_yaml,
    file_digest,
    to_plain,
    utc_timestamp,
    write_csv,
)
from .errors import ConfigError, InvariantViolation, ValidationError
from .fed import run_simulation
from .geo import parameter_shift_gradient, qfim_batch
from .learn import (
    Dataset,
    TrainedModel,
    default_probes,
    evaluate,
    init_params,
    retrain_counterfactual,
    save_model,
    train,
)
from .losses import LossSpec
from .pqc import build_encoding_map, build_layered_ansatz
from .qkernel import (
    FeatureMap,
    alignment_gap,
    delete_samples_smw,
    export_gram_csv,
    gram,
    krr_fit,
    krr_predict,
    mmd,
    removal_deviation_bound,
)
from .unlearn import (
    UnlearnTrace,
    fisher_ranked_selection,
    fisher_step,
    forget_class,
    forget_cluster,
    forget_indices,
    influence_delta,
    qmu_i,
    reset_partial,
)

logger = logging.getLogger(__name__)

SIMULATOR = "exact statevector / density-matrix (numpy)"
BOUND_SLACK = 1e-9
SMW_TOL = 1e-8


@contextmanager
def field_prefix(prefix):
    """Re-raise library validation errors under a configuration path."""
    try:
        yield
    except ConfigError:
        raise
    except ValidationError as e:
        name = f"{prefix}.{e.field}" if e.field else prefix
        raise ConfigError(e.reason, name) from e


class Run:
    """Output directory, seed book and artifact index of one experiment."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.seeds = config.seed_book()
        self.out = Path(config.output)
        self.out.mkdir(parents=True, exist_ok=True)
        self.artifacts = {}
        self.reports = {}
        self.timings = {}

    @contextmanager
    def timed(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[f"{name}_seconds"] = time.perf_counter() - start

    def path(self, name) -> Path:
        return self.out / name

    def register(self, name, path):
        self.artifacts[name] = file_digest(path)
        logger.info("wrote %s", path)
        return path

    def csv(self, name, header, rows):
        return self.register(name, write_csv(self.path(name), header, rows))

    def model(self, name, model: TrainedModel):
        return self.register(name, save_model(model, self.path(name)))

    def dataset(self, data: Dataset):
        name = "dataset.csv"
        return self.register(name, save_dataset_csv(data, self.path(name)))

    def document(self, name, document) -> str:
        """YAML document stamped with ``created`` and its digest."""
        document = to_plain(document)
        document["created"] = utc_timestamp()
        document["digest"] = document_digest(document)
        dump_yaml(self.path(name), document)
        self.reports[name] = document["digest"]
        logger.info("wrote %s", self.path(name))
        return document["digest"]

    def report(self, name, report: UnlearnReport) -> str:
        digest = emit_report(report, self.path(name))
        self.reports[name] = digest
        summary = render_summary(
            load_report(self.path(name)),
            self.path(Path(name).stem + ".md"),
        )
        logger.info("wrote %s", summary)
        return digest

    def finish(self) -> dict:
        manifest = {
            "experiment": self.config.experiment,
            "config": self.config.to_dict(),
            "seeds": self.seeds.to_dict(),
            "artifacts": dict(sorted(self.artifacts.items())),
            "reports": dict(sorted(self.reports.items())),
            "timings": self.timings,
        }
        dump_yaml(self.path("manifest.yaml"), manifest)
        logger.info("wrote %s", self.path("manifest.yaml"))
        return manifest


def prepare_dataset(config: RunConfig, seeds) -> Dataset:
    """Load or generate the dataset, then mark its forget set."""
    spec = config.dataset
    with field_prefix("dataset"):
        if spec.path is not None:
            data = load_dataset_csv(spec.path, seeds("split"))
        else:
            data = generate_dataset(
                spec.generator, spec.n, spec.noise, seeds("dataset")
            )
    forget = spec.forget
    with field_prefix("dataset.forget"):
        if forget.kind == "cluster":
            data = forget_cluster(
                data, forget.label, forget.size, seeds("forget")
            )
        elif forget.kind == "class":
            data = forget_class(data, forget.label)
        elif forget.kind == "indices":
            data = forget_indices(data, forget.indices)
    return data


def build_template(config: RunConfig, data: Dataset):
    spec = config.template
    with field_prefix("template"):
        return build_layered_ansatz(
            spec.n_qubits,
            spec.depth,
            spec.entangler,
            spec.reupload,
            spec.noise,
            n_features=data.n_features,
            scale=spec.scale,
        )


def train_config(config: RunConfig, seeds):
    """Training settings with the seed drawn from the run's seed book."""
    return dataclasses.replace(config.train, seed=seeds("train"))


def _forget_rows(data: Dataset):
    rows = data.indices("forget")
    if rows.size == 0:
        raise ConfigError("forget set is empty", "dataset.forget")
    return rows


def _holdout(data: Dataset):
    holdout = data.select("test")
    if holdout[0].shape[0] == 0:
        raise ValidationError(
            "membership audit needs a test split", "dataset"
        )
    return holdout


def _forget_metric(model: TrainedModel, X):
    """QFIM over the forget rows, or the identity for noisy templates."""
    if model.template.noisy:
        return np.eye(model.template.n_params), "identity"
    return qfim_batch(model.template, model.theta, X).matrix, "qfim"


def _membership(t, theta, data, loss):
    return membership_inference(
        t,
        theta,
        data.select("forget"),
        data.select("retained"),
        _holdout(data),
        loss,
    )


def config_digest(config: RunConfig) -> str:
    """Digest of the configuration without its output location."""
    document = config.to_dict()
    document.pop("output")
    return document_digest(document)


def _reproducibility(run: Run, data: Dataset, probes) -> dict:
    return {
        "seed": run.config.seed,
        "config_digest": config_digest(run.config),
        "dataset_digest": document_digest(
            {
                "features": data.features,
                "labels": data.labels,
                "forget": data.forget_mask,
            }
        ),
        "probe_digest": probe_digest(probes),
        "simulator": SIMULATOR,
        "noise": run.config.template.noise,
    }


def _trained_pair(run: Run, data, t):
    """The original model and its counterfactual retrain on D_s."""
    cfg = train_config(run.config, run.seeds)
    with run.timed("train"), field_prefix("train"):
        original = train(t, data, cfg)
    with run.timed("retrain"), field_prefix("train"):
        reference = retrain_counterfactual(t, data, cfg)
    run.model("model.yaml", original)
    run.model("counterfactual.yaml", reference)
    return original, reference


def apply_mechanism(run: Run, model: TrainedModel, data, reference):
    """Run the configured forgetting mechanism on ``model``."""
    spec = run.config.mechanism
    rows = _forget_rows(data)
    with field_prefix("mechanism"):
        if spec.name == "qmu_i":
            cfg = dataclasses.replace(spec.qmu_i, seed=run.seeds("unlearn"))
            return qmu_i(model, data, reference.theta, cfg)
        if spec.name == "reset_partial":
            X = data.features[rows]
            F, _ = _forget_metric(model, X)
            selection = fisher_ranked_selection(
                F, spec.reset_partial.fraction
            )
            logger.info("resetting coordinates %s", selection)
            cfg = dataclasses.replace(
                spec.reset_partial.fine_tune, seed=run.seeds("fine_tune")
            )
            return reset_partial(
                model, data, selection, run.seeds("reset"), cfg
            )
        trace = UnlearnTrace(spec.name, reference=reference.theta)
        trace.record(model.theta)
        if spec.name == "influence":
            delta = influence_delta(model, data, rows, spec.damping)
            theta = model.theta + delta
        else:
            theta = fisher_step(model, data, rows, spec.step, spec.damping)
        trace.record(theta)
    unlearned = model.copy()
    unlearned.theta = np.asarray(theta, dtype=float)
    return unlearned, trace


def _probes(run, data):
    with field_prefix("audit"):
        return default_probes(
            data, run.config.audit.max_probes, run.seeds("probes")
        )


def run_gen_data(run: Run) -> dict:
    data = prepare_dataset(run.config, run.seeds)
    run.dataset(data)
    summary = {
        "experiment": "gen-data",
        "n": len(data),
        "n_features": data.n_features,
        "splits": {
            split: int(data.indices(split).size)
            for split in ("train", "test", "retained", "forget")
        },
        "labels": {
            str(label): int(np.sum(data.labels == label))
            for label in (-1, 1)
        },
    }
    run.document("dataset_report.yaml", summary)
    return summary


def run_train(run: Run) -> dict:
    data = prepare_dataset(run.config, run.seeds)
    run.dataset(data)
    t = build_template(run.config, data)
    cfg = train_config(run.config, run.seeds)
    with run.timed("train"), field_prefix("train"):
        model = train(t, data, cfg)
    run.model("model.yaml", model)
    document = {
        "experiment": "train",
        "loss_trace": model.loss_trace,
        "train": evaluate(model, data, "train"),
        "test": evaluate(model, data, "test"),
        "timings": dict(run.timings),
    }
    run.document("train_report.yaml", document)
    return document


def run_retrain(run: Run) -> dict:
    data = prepare_dataset(run.config, run.seeds)
    run.dataset(data)
    t = build_template(run.config, data)
    cfg = train_config(run.config, run.seeds)
    with run.timed("retrain"), field_prefix("train"):
        model = retrain_counterfactual(t, data, cfg)
    run.model("counterfactual.yaml", model)
    document = {
        "experiment": "retrain",
        "loss_trace": model.loss_trace,
        "retained": evaluate(model, data, "retained"),
        "test": evaluate(model, data, "test"),
        "timings": dict(run.timings),
    }
    run.document("retrain_report.yaml", document)
    return document


def run_unlearn(run: Run) -> dict:
    config = run.config
    data = prepare_dataset(config, run.seeds)
    run.dataset(data)
    t = build_template(config, data)
    original, reference = _trained_pair(run, data, t)
    with run.timed("unlearn"):
        unlearned, trace = apply_mechanism(run, original, data, reference)
    run.model("unlearned.yaml", unlearned)
    probes = _probes(run, data)
    rows = _forget_rows(data)
    lam = config.mechanism.damping
    with run.timed("audit"):
        distances = distance_audit(
            t,
            original.theta,
            unlearned.theta,
            reference.theta,
            probes,
            config.audit.eps_cert,
        )
        curve = forgetting_curve(trace, reference.theta, t, probes)
        F, metric = _forget_metric(original, data.features[rows])
        bound = param_gap_bound(original, data, rows, lam, F)
        loss = original.loss
        membership = {
            "before": _membership(t, original.theta, data, loss),
            "after": _membership(t, unlearned.theta, data, loss),
            "counterfactual": _membership(t, reference.theta, data, loss),
        }
        baseline = retention_metrics(t, original.theta, data)
        retention = retention_metrics(t, unlearned.theta, data, baseline)
    write_curve_csv(curve, run.path("forgetting_curve.csv"))
    run.register("forgetting_curve.csv", run.path("forgetting_curve.csv"))
    report = UnlearnReport(
        mechanism=config.mechanism.name,
        distances=distances,
        certificate={
            "eps_cert": config.audit.eps_cert,
            "value": distances["trace_distance_after"],
            "satisfied": distances["certified"],
            "flatness": curve.flatness(config.audit.curve_tail),
        },
        param_gap={
            "bound": bound,
            "label": "gradient / curvature ratio (heuristic)",
            "heuristic": True,
            "metric": metric,
            "damping": lam,
        },
        membership=membership,
        retention=retention,
        reproducibility=_reproducibility(run, data, probes),
        geometric_gap=geometric_gap(unlearned.theta, reference.theta, F),
        qfi=qfi_summary(F, lam),
        curve=curve.rows(),
        timings=dict(run.timings),
    )
    run.report("unlearn_report.yaml", report)
    return report.to_dict()


def run_audit(run: Run) -> dict:
    """Risk assessment before any forgetting is applied."""
    config = run.config
    data = prepare_dataset(config, run.seeds)
    run.dataset(data)
    t = build_template(config, data)
    original, reference = _trained_pair(run, data, t)
    probes = _probes(run, data)
    rows = _forget_rows(data)
    lam = config.mechanism.damping
    with run.timed("audit"):
        distances = distance_audit(
            t,
            original.theta,
            original.theta,
            reference.theta,
            probes,
            config.audit.eps_cert,
        )
        F, metric = _forget_metric(original, data.features[rows])
        document = {
            "experiment": "audit",
            "distance_to_counterfactual": {
                "trace_distance": distances["trace_distance_before"],
                "infidelity": distances["infidelity_before"],
                "within_eps_cert": distances["certified"],
                "eps_cert": distances["eps_cert"],
            },
            "membership": {
                "model": _membership(t, original.theta, data, original.loss),
                "counterfactual": _membership(
                    t, reference.theta, data, original.loss
                ),
            },
            "param_gap": {
                "bound": param_gap_bound(original, data, rows, lam, F),
                "label": "gradient / curvature ratio (heuristic)",
                "metric": metric,
            },
            "geometric_gap": geometric_gap(
                original.theta, reference.theta, F
            ),
            "qfi": qfi_summary(F, lam),
            "retention": retention_metrics(t, original.theta, data),
            "reproducibility": _reproducibility(run, data, probes),
        }
    document["timings"] = dict(run.timings)
    run.document("audit_report.yaml", document)
    return document


def _ledger_rows(history):
    for record in history:
        if record["kind"] != "round":
            continue
        ledger = record["ledger"]
        yield [
            record["round"],
            len(record["clients"]),
            record["sigma"],
            ledger["epsilon"],
            ledger["naive_epsilon"],
            "" if ledger["order"] is None else ledger["order"],
            int(record["alarm"]),
            record["digest"],
        ]


def run_fed(run: Run) -> dict:
    config = run.config
    data = prepare_dataset(config, run.seeds)
    run.dataset(data)
    n_features = data.n_features
    t = build_template(config, data)
    with run.timed("federation"), field_prefix("federation"):
        result = run_simulation(
            t, data, config.federation, config.dp, run.seeds
        )
    run.csv(
        "ledger.csv",
        [
            "round",
            "clients",
            "sigma",
            "epsilon",
            "naive_epsilon",
            "order",
            "alarm",
            "digest",
        ],
        _ledger_rows(result["history"]),
    )
    loss = config.federation.loss
    final = TrainedModel(t, result["final_theta"], loss=loss)
    initial = TrainedModel(t, result["initial_theta"], loss=loss)
    document = {
        "experiment": "fed",
        "n_features": n_features,
        "clients": result["clients"],
        "history": result["history"],
        "privacy": result["ledger"],
        "accuracy": {
            "initial": evaluate(initial, data, "test")["accuracy"],
            "final": evaluate(final, data, "test")["accuracy"],
        },
        "theta": result["final_theta"],
        "unlearn": [
            {"mechanism": trace.mechanism, "steps": trace.steps}
            for trace in result["traces"]
        ],
        "timings": dict(run.timings),
    }
    run.document("fed_report.yaml", document)
    return document


def _kernel_deletion(data: Dataset, spec, seed):
    """Positions within the train rows to delete: forget rows first."""
    train_rows = data.indices("train")
    forget = set(data.indices("forget").tolist())
    positions = [k for k, row in enumerate(train_rows) if row in forget]
    if not positions:
        rng = np.random.default_rng(seed)
        positions = rng.permutation(train_rows.size).tolist()
    count = min(spec.delete, train_rows.size - 1)
    return np.sort(np.asarray(positions[:count], dtype=int))


def run_kernel(run: Run) -> dict:
    config = run.config
    spec = config.kernel
    data = prepare_dataset(config, run.seeds)
    run.dataset(data)
    with field_prefix("kernel"):
        template = build_encoding_map(
            config.template.n_qubits,
            data.n_features,
            spec.layers,
            spec.entangler,
        )
        fm = FeatureMap.from_seed(template, run.seeds("feature_map"))
    X, y = data.select("train")
    with run.timed("gram"):
        K = gram(fm, X)
    export_gram_csv(K, run.path("gram.csv"))
    run.register("gram.csv", run.path("gram.csv"))
    with field_prefix("kernel"):
        model = krr_fit(K, y, spec.ridge, samples=X, feature_map=fm)
    deleted = _kernel_deletion(data, spec, run.seeds("kernel_delete"))
    kept = np.setdiff1d(np.arange(len(model)), deleted)
    with run.timed("smw_delete"):
        updated = delete_samples_smw(model, deleted)
    with run.timed("krr_refit"):
        direct = krr_fit(K.matrix[np.ix_(kept, kept)], y[kept], spec.ridge)
    alpha_error = float(np.max(np.abs(updated.alpha - direct.alpha)))
    if alpha_error > SMW_TOL:
        raise InvariantViolation(
            f"decremental solution differs from retrain by {alpha_error:.3g}"
        )
    queries = default_probes(data, spec.queries, run.seeds("kernel_queries"))
    train_states = fm.states(X)
    violations, worst_ratio = 0, 0.0
    deviations, bounds = [], []
    for x in queries:
        row = np.abs(train_states.conj() @ fm.state(x)) ** 2
        deviation = abs(
            krr_predict(updated, kernel_row=row[kept])
            - krr_predict(model, kernel_row=row)
        )
        bound = removal_deviation_bound(model, deleted, kernel_row=row)
        deviations.append(deviation)
        bounds.append(bound)
        if deviation > bound + BOUND_SLACK:
            violations += 1
        if bound > 0:
            worst_ratio = max(worst_ratio, deviation / bound)
    if violations:
        raise InvariantViolation(
            f"{violations} query points exceed the deviation bound"
        )
    reference = gram(fm, X[kept])
    document = {
        "experiment": "kernel",
        "n_train": int(len(model)),
        "deleted": deleted.tolist(),
        "ridge": spec.ridge,
        "alpha_error": alpha_error,
        "alignment_gap": alignment_gap(
            K.matrix[np.ix_(kept, kept)], reference
        ),
        "mmd_deleted_vs_kept": (
            mmd(K, deleted, kept) if deleted.size else None
        ),
        "bound": {
            "queries": int(len(queries)),
            "max_deviation": float(max(deviations)),
            "max_bound": float(max(bounds)),
            "worst_ratio": worst_ratio,
            "violations": violations,
        },
        "reproducibility": {
            "seed": config.seed,
            "feature_map_theta": fm.theta,
            "probe_digest": probe_digest(queries),
        },
        "timings": dict(run.timings),
    }
    run.document("kernel_report.yaml", document)
    return document


def _time_op(function, repeats):
    elapsed = []
    for _ in range(repeats):
        start = time.perf_counter()
        function()
        elapsed.append(time.perf_counter() - start)
    return elapsed


def run_bench(run: Run) -> dict:
    """Wall-clock timings of the gradient, QFIM and SMW kernels."""
    config = run.config
    spec = config.bench
    data = prepare_dataset(config, run.seeds)
    run.dataset(data)
    t = build_template(config, data)
    X, y = data.select("train")
    batch = min(spec.batch, X.shape[0])
    Xb, yb = X[:batch], y[:batch]
    loss = LossSpec(config.train.loss)
    theta = init_params(t.n_params, run.seeds("bench_theta"))
    ops = {
        "parameter_shift_gradient": lambda: parameter_shift_gradient(
            t, theta, Xb, yb, loss
        ),
    }
    if not t.noisy:
        for mode in ("diagonal", "block", "full"):
            ops[f"qfim_{mode}"] = lambda mode=mode: qfim_batch(
                t, theta, Xb, mode
            )
    fm = FeatureMap.from_seed(
        build_encoding_map(
            config.template.n_qubits,
            data.n_features,
            config.kernel.layers,
            config.kernel.entangler,
        ),
        run.seeds("feature_map"),
    )
    n_kernel = min(spec.kernel_samples, X.shape[0])
    Xk, yk = X[:n_kernel], y[:n_kernel]
    K = gram(fm, Xk)
    model = krr_fit(K, yk, config.kernel.ridge)
    deleted = np.arange(min(config.kernel.delete, n_kernel - 1))
    kept = np.arange(deleted.size, n_kernel)
    ops["gram"] = lambda: gram(fm, Xk)
    ops["smw_delete"] = lambda: delete_samples_smw(model, deleted)
    ops["krr_refit"] = lambda: krr_fit(
        K.matrix[np.ix_(kept, kept)], yk[kept], config.kernel.ridge
    )
    rows, table = [], {}
    for name, function in ops.items():
        elapsed = _time_op(function, spec.repeats)
        rows.extend([name, k, s] for k, s in enumerate(elapsed))
        table[name] = {
            "repeats": spec.repeats,
            "mean_seconds": float(np.mean(elapsed)),
            "min_seconds": float(np.min(elapsed)),
        }
        logger.info("%s: %.4g s", name, np.mean(elapsed))
    run.csv("timings.csv", ["operation", "repeat", "elapsed_seconds"], rows)
    document = {
        "experiment": "bench",
        "n_params": t.n_params,
        "n_qubits": t.n_qubits,
        "batch": batch,
        "kernel_samples": n_kernel,
        "deleted": int(deleted.size),
        "operations": table,
    }
    run.document("bench_report.yaml", document)
    return document


EXPERIMENT_RUNNERS = {
    "gen-data": run_gen_data,
    "train": run_train,
    "retrain": run_retrain,
    "unlearn": run_unlearn,
    "audit": run_audit,
    "fed": run_fed,
    "kernel": run_kernel,
    "bench": run_bench,
}


def run_experiment(config: RunConfig) -> dict:
    """Execute ``config.experiment`` and write its manifest."""
    run = Run(config)
    logger.info(
        "running %s with seed %d into %s",
        config.experiment,
        config.seed,
        run.out,
    )
    EXPERIMENT_RUNNERS[config.experiment](run)
    return run.finish()
