"""Run configuration: one YAML document tying every knob together.

The document round-trips exactly: parse(serialize(config)) == config.
Defaults follow the hyperparameters the training recipe is built
around (learning-rate ramp 1e-3 to 5e-3 then decay to 1e-4, batch 32,
100 candidate tokens over 60 epochs, 16-head blocks).
"""

from dataclasses import asdict, dataclass, field, fields

import yaml

from .data import CorpusSpec
from .distill import EraseSpec
from .encoder import EncoderConfig

POOLING_MODES = ("AVG", "CLS", "CLS-DIST")


class ConfigError(ValueError):
    """Unusable run configuration."""


@dataclass
class OptimizerConfig:
    lr_start: float = 1e-3
    lr_peak: float = 5e-3
    lr_end: float = 1e-4
    ramp_fraction: float = 0.5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if min(self.lr_start, self.lr_peak, self.lr_end) <= 0:
            raise ConfigError("learning rates must be positive")
        if not 0.0 < self.ramp_fraction < 1.0:
            raise ConfigError(f"ramp_fraction {self.ramp_fraction} outside (0, 1)")


@dataclass
class RunConfig:
    seed: int = 0
    pooling: str = "CLS"
    epochs: int = 60
    n_tokens: int = 100
    batch_size: int = 32
    position_mode: str = "concat"
    normalize: bool = False
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    corpus: CorpusSpec = field(default_factory=CorpusSpec)
    erase: EraseSpec = field(default_factory=EraseSpec)
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)

    def __post_init__(self):
        if self.pooling not in POOLING_MODES:
            raise ConfigError(f"pooling must be one of {POOLING_MODES}, got {self.pooling!r}")
        if self.position_mode not in ("concat", "add"):
            raise ConfigError(f"position_mode must be concat or add, got {self.position_mode!r}")
        if min(self.epochs, self.n_tokens, self.batch_size) < 1:
            raise ConfigError("epochs, n_tokens, and batch_size must be >= 1")
        if self.position_mode == "add" and self.corpus.position_dim != self.corpus.feature_dim:
            raise ConfigError("additive positions require position_dim == feature_dim")

    @property
    def input_dim(self):
        """Width of the model input.

        Positional features guide token attention; the traditional
        average-pooling baseline runs on the plain frames, so AVG mode
        sees feature_dim columns only.
        """
        if self.pooling == "AVG":
            return self.corpus.feature_dim
        if self.position_mode == "concat":
            return self.corpus.feature_dim + self.corpus.position_dim
        return self.corpus.feature_dim


_TUPLE_FIELDS = {"frames", "area", "aspect"}
_NESTED = {
    "encoder": EncoderConfig,
    "corpus": CorpusSpec,
    "erase": EraseSpec,
    "optimizer": OptimizerConfig,
}


def to_dict(config):
    d = asdict(config)
    for key in list(d):
        section = d[key]
        if isinstance(section, dict):
            for name in _TUPLE_FIELDS & section.keys():
                section[name] = list(section[name])
    return d


def _build(cls, data, where):
    if not isinstance(data, dict):
        raise ConfigError(f"{where}: expected a mapping, got {type(data).__name__}")
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for name, value in data.items():
        if name in _TUPLE_FIELDS and isinstance(value, list):
            value = tuple(value)
        kwargs[name] = value
    try:
        return cls(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(data):
    if not isinstance(data, dict):
        raise ConfigError(f"config must be a mapping, got {type(data).__name__}")
    data = dict(data)
    kwargs = {}
    for name, cls in _NESTED.items():
        if name in data:
            kwargs[name] = _build(cls, data.pop(name), name)
    known = {f.name for f in fields(RunConfig)} - set(_NESTED)
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"config: unknown keys {sorted(unknown)}")
    kwargs.update(data)
    try:
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config: {exc}") from exc


def serialize(config):
    return yaml.safe_dump(to_dict(config), sort_keys=True)


def parse(text):
    return from_dict(yaml.safe_load(text))


def save_config(config, path):
    with open(path, "w") as fh:
        fh.write(serialize(config))


def load_config(path):
    with open(path) as fh:
        return parse(fh.read())
