"""Run configuration: a YAML document mirrored by nested dataclasses.

Every key has a default; defaults follow the reference recipe wherever
it states a value (lr 0.2, weight decay 1e-4, 5 warmup epochs, tau 0.1,
m0 0.99, k 20, alpha 0.8) with desk-scale sizes elsewhere (batch 128,
queue 4096).  Unknown keys are rejected with their full path.  Parsing
then serializing then parsing again is the identity.

Command-line overrides use dotted paths ("train.base_lr=0.05"); values
are parsed as YAML scalars so ints, floats, bools, null, and lists all
work.
"""

import dataclasses
from dataclasses import dataclass, field

import yaml

from .data import SynthConfig
from .errors import ConfigError
from .evaluation import ProbeConfig
from .losses import SmoothingConfig
from .optim import TrainPlan

SOURCES = ("synth", "cifar10", "dump")


@dataclass(frozen=True)
class DataSection:
    source: str = "synth"
    n_classes: int = 10
    n_instances: int = 5000
    input_dim: int = 64
    class_sep: float = 4.0
    class_spread: float = 0.25
    aug_noise: float = 0.1
    false_neg_rate: float | None = None
    false_pos_rate: float = 0.0
    eval_fraction: float = 0.2
    cifar_train: str | None = None
    cifar_eval: str | None = None
    dump_path: str | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"data.source must be one of {SOURCES}, got {self.source!r}")


@dataclass(frozen=True)
class ModelSection:
    hidden_dims: list = field(default_factory=lambda: [512, 256])
    feature_dim: int = 128
    projector_hidden: int = 256
    embed_dim: int = 64
    precision: str = "single"

    def __post_init__(self):
        dims = list(self.hidden_dims) + [self.feature_dim, self.projector_hidden, self.embed_dim]
        if not all(isinstance(x, int) and x >= 1 for x in dims):
            raise ConfigError("model dims must be positive integers")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"model.precision must be single or double, got {self.precision!r}")


@dataclass(frozen=True)
class TrainSection:
    base_lr: float = 0.2
    warmup_epochs: int = 5
    total_epochs: int = 200
    batch_size: int = 128
    weight_decay: float = 1.0e-4
    sgd_momentum: float = 0.9
    queue_capacity: int = 4096
    ema_m0: float = 0.99
    symmetric: bool = True
    seed: int = 0
    checkpoint_every: int = 50
    out_dir: str = "runs"
    run_name: str | None = None


@dataclass(frozen=True)
class EvalSection:
    knn_k: int = 20
    vote_temp: float = 0.07
    weighted: bool = True
    probe_epochs: int = 100
    probe_lr: float = 1.0
    probe_batch: int = 256
    probe_wd: float = 0.0


@dataclass(frozen=True)
class RunConfig:
    data: DataSection = field(default_factory=DataSection)
    model: ModelSection = field(default_factory=ModelSection)
    train: TrainSection = field(default_factory=TrainSection)
    smoothing: SmoothingConfig = field(default_factory=SmoothingConfig)
    eval: EvalSection = field(default_factory=EvalSection)


_SECTIONS = {
    "data": DataSection,
    "model": ModelSection,
    "train": TrainSection,
    "smoothing": SmoothingConfig,
    "eval": EvalSection,
}


def _build_section(name: str, cls, mapping) -> object:
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError(f"section {name!r} must be a mapping, got {type(mapping).__name__}")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(mapping) - known)
    if unknown:
        raise ConfigError(f"unknown key {name}.{unknown[0]}")
    try:
        return cls(**mapping)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad value in section {name!r}: {exc}") from exc


def from_mapping(mapping) -> RunConfig:
    if mapping is None:
        mapping = {}
    if not isinstance(mapping, dict):
        raise ConfigError("config document must be a mapping")
    unknown = sorted(set(mapping) - set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown section {unknown[0]!r}")
    parts = {
        name: _build_section(name, cls, mapping.get(name))
        for name, cls in _SECTIONS.items()
    }
    return RunConfig(**parts)


def to_mapping(config: RunConfig) -> dict:
    return dataclasses.asdict(config)


def from_yaml(text: str) -> RunConfig:
    try:
        mapping = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config is not valid YAML: {exc}") from exc
    return from_mapping(mapping)


def to_yaml(config: RunConfig) -> str:
    return yaml.safe_dump(to_mapping(config), sort_keys=False)


def load_config(path: str | None, overrides=()) -> RunConfig:
    """Read a config file (or start from defaults) and apply dotted overrides."""
    if path is None:
        mapping = to_mapping(RunConfig())
    else:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        try:
            mapping = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigError(f"config is not valid YAML: {exc}") from exc
        if mapping is None:
            mapping = {}
    for item in overrides:
        mapping = apply_override(mapping, item)
    return from_mapping(mapping)


def apply_override(mapping: dict, item: str) -> dict:
    """Apply one "section.key=value" assignment; value parsed as a YAML scalar."""
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    path, _, raw = item.partition("=")
    keys = path.strip().split(".")
    if len(keys) != 2 or not all(keys):
        raise ConfigError(f"override path {path!r} must be section.key")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}: {exc}") from exc
    section = mapping.setdefault(keys[0], {})
    if not isinstance(section, dict):
        raise ConfigError(f"section {keys[0]!r} is not a mapping")
    section[keys[1]] = value
    return mapping


def build_synth_config(data: DataSection) -> SynthConfig:
    return SynthConfig(
        n_classes=data.n_classes, n_instances=data.n_instances,
        input_dim=data.input_dim, class_sep=data.class_sep,
        class_spread=data.class_spread, aug_noise=data.aug_noise,
        false_neg_rate=data.false_neg_rate, false_pos_rate=data.false_pos_rate,
        eval_fraction=data.eval_fraction,
    )


def build_plan(config: RunConfig) -> TrainPlan:
    t = config.train
    return TrainPlan(
        smoothing=config.smoothing, base_lr=t.base_lr,
        warmup_epochs=t.warmup_epochs, total_epochs=t.total_epochs,
        batch_size=t.batch_size, weight_decay=t.weight_decay,
        sgd_momentum=t.sgd_momentum, queue_capacity=t.queue_capacity,
        ema_m0=t.ema_m0, symmetric=t.symmetric, seed=t.seed,
    )


def build_probe_config(ev: EvalSection) -> ProbeConfig:
    return ProbeConfig(epochs=ev.probe_epochs, lr=ev.probe_lr,
                       batch_size=ev.probe_batch, weight_decay=ev.probe_wd)


def run_name(config: RunConfig) -> str:
    if config.train.run_name:
        return config.train.run_name
    sm = config.smoothing
    return f"{sm.pattern}-a{sm.alpha:g}-k{sm.k}-seed{config.train.seed}"
