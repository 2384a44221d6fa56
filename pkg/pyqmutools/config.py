"""Run configuration documents.

A run is described by one YAML file.  Each top-level section maps onto a
dataclass; every validation failure is reported as a ``ConfigError`` whose
field is the dotted path of the offending entry.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .audit import EPS_CERT
from .documents import load_yaml
from .errors import ConfigError, ValidationError
from .fed.simulation import FederationSpec
from .learn import MAX_PROBES, TrainConfig
from .privacy import DPConfig
from .seeds import SeedBook
from .unlearn import QmuIConfig

EXPERIMENTS = (
    "gen-data",
    "train",
    "unlearn",
    "retrain",
    "audit",
    "fed",
    "kernel",
    "bench",
)
MECHANISMS = ("qmu_i", "reset_partial", "influence", "fisher")
FORGET_KINDS = ("none", "cluster", "class", "indices")

__all__ = ["RunConfig", "SeedBook", "load_config"]


@dataclass
class ForgetSpec:
    kind: str = "cluster"
    label: int = 1
    size: int = 15
    indices: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in FORGET_KINDS:
            raise ValidationError(
                f"{self.kind!r} is not one of {FORGET_KINDS}", "kind"
            )
        if self.label not in (-1, 1):
            raise ValidationError("must be -1 or 1", "label")


@dataclass
class DatasetSpec:
    generator: str | None = "two_moons"
    path: str | None = None
    n: int = 100
    noise: float = 0.1
    forget: ForgetSpec = field(default_factory=ForgetSpec)

    def __post_init__(self):
        if self.path is not None:
            self.generator = None
            if not Path(self.path).exists():
                raise ValidationError(f"{self.path} does not exist", "path")
        elif self.generator is None:
            raise ValidationError("give a generator or a path", "generator")


@dataclass
class TemplateSpec:
    n_qubits: int = 2
    depth: int = 2
    entangler: str = "linear"
    reupload: bool = True
    noise: float | None = None
    scale: float = 1.0

    def __post_init__(self):
        if self.n_qubits < 1:
            raise ValidationError("must be at least 1", "n_qubits")
        if self.depth < 1:
            raise ValidationError("must be at least 1", "depth")
        if self.entangler not in ("linear", "ring"):
            raise ValidationError("must be linear or ring", "entangler")
        if self.noise is not None and not 0 <= self.noise <= 1:
            raise ValidationError("must lie in [0, 1]", "noise")


@dataclass
class ResetSpec:
    fraction: float = 0.25
    fine_tune: TrainConfig = field(default_factory=TrainConfig)

    def __post_init__(self):
        if not 0 < self.fraction <= 1:
            raise ValidationError("must lie in (0, 1]", "fraction")


@dataclass
class MechanismSpec:
    name: str = "qmu_i"
    qmu_i: QmuIConfig = field(default_factory=QmuIConfig)
    reset_partial: ResetSpec = field(default_factory=ResetSpec)
    damping: float = 1e-3
    step: float = 0.1

    def __post_init__(self):
        if self.name not in MECHANISMS:
            raise ValidationError(
                f"{self.name!r} is not one of {MECHANISMS}", "name"
            )


@dataclass
class KernelSpec:
    layers: int = 2
    entangler: str = "linear"
    ridge: float = 0.1
    delete: int = 3
    queries: int = 20

    def __post_init__(self):
        if not self.ridge > 0:
            raise ValidationError("must be positive", "ridge")
        if self.delete < 0:
            raise ValidationError("must not be negative", "delete")


@dataclass
class AuditSpec:
    eps_cert: float = EPS_CERT
    max_probes: int = MAX_PROBES
    curve_tail: int = 3

    def __post_init__(self):
        if self.eps_cert < 0:
            raise ValidationError("must not be negative", "eps_cert")
        if self.max_probes < 1:
            raise ValidationError("must be at least 1", "max_probes")


@dataclass
class BenchSpec:
    repeats: int = 3
    batch: int = 8
    kernel_samples: int = 20

    def __post_init__(self):
        if self.repeats < 1:
            raise ValidationError("must be at least 1", "repeats")


@dataclass
class RunConfig:
    experiment: str
    seed: int
    output: str = "pyqmu-out"
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    template: TemplateSpec = field(default_factory=TemplateSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    mechanism: MechanismSpec = field(default_factory=MechanismSpec)
    dp: DPConfig = field(default_factory=lambda: DPConfig(epsilon=0.5))
    federation: FederationSpec = field(default_factory=FederationSpec)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    audit: AuditSpec = field(default_factory=AuditSpec)
    bench: BenchSpec = field(default_factory=BenchSpec)

    def __post_init__(self):
        if self.experiment not in EXPERIMENTS:
            raise ValidationError(
                f"{self.experiment!r} is not one of {EXPERIMENTS}",
                "experiment",
            )

    @classmethod
    def from_dict(cls, data, seed=None, output=None, experiment=None):
        if not isinstance(data, dict):
            raise ConfigError("expected a mapping", "config")
        data = dict(data)
        if seed is not None:
            data["seed"] = seed
        if output is not None:
            data["output"] = str(output)
        if experiment is not None:
            data["experiment"] = experiment
        if data.get("seed") is None:
            raise ConfigError("a seed is required", "seed")
        return _build(cls, data, "")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def seed_book(self) -> SeedBook:
        return SeedBook(self.seed)


def _build(cls, data, path):
    """Instantiate dataclass ``cls`` from ``data``, recursing into fields."""
    if not isinstance(data, dict):
        raise ConfigError("expected a mapping", path.rstrip(".") or "config")
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            raise ConfigError("unknown entry", f"{path}{key}")
        nested = _nested_type(known[key])
        if nested is not None and isinstance(value, dict):
            value = _build(nested, value, f"{path}{key}.")
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except ValidationError as e:
        if isinstance(e, ConfigError):
            raise
        where = f"{path}{e.field}" if e.field else path.rstrip(".")
        raise ConfigError(e.reason, where or "config") from e
    except TypeError as e:
        raise ConfigError(str(e), path.rstrip(".") or "config") from e


_NESTED = {
    "dataset": DatasetSpec,
    "forget": ForgetSpec,
    "template": TemplateSpec,
    "train": TrainConfig,
    "fine_tune": TrainConfig,
    "mechanism": MechanismSpec,
    "qmu_i": QmuIConfig,
    "reset_partial": ResetSpec,
    "dp": DPConfig,
    "federation": FederationSpec,
    "kernel": KernelSpec,
    "audit": AuditSpec,
    "bench": BenchSpec,
}


def _nested_type(f):
    return _NESTED.get(f.name)


def load_config(path, seed=None, output=None, experiment=None) -> RunConfig:
    return RunConfig.from_dict(
        load_yaml(path), seed=seed, output=output, experiment=experiment
    )
