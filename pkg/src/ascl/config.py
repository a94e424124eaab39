"""Run configuration: one flat dataclass whose field names double as the
config-file keys, plus the ``key = value`` file parser."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

from .attacks import AttackConfig
from .data import load_dataset, make_blobs, make_two_moons
from .errors import ConfigError
from .losses import STRATEGIES, LossWeights
from .models import ModelSpec

__all__ = ["RunConfig", "parse_config_file", "config_from_dict"]


@dataclass
class RunConfig:
    # dataset: "moons", "blobs", or a dataset file path
    dataset: str = "moons"
    dataset_test: str = ""
    data_size: int = 200
    data_noise: float = 0.10
    data_classes: int = 10
    data_per_class: int = 20
    data_dims: int = 16
    data_spread: float = 0.08
    data_seed: int = 1

    hidden_layers: tuple = (32, 32)
    projection: str = "identity"
    projection_dim: int = 128
    projection_mid: int = 200

    strategy: str = "global"
    lambda_scl: float = 1.0
    lambda_vat: float = 2.0
    tau: float = 0.07
    similarity: str = "cosine"
    nat_ce: bool = True
    use_vat: bool = True

    train_eps: float = 0.05
    train_eta: float = 0.0125
    train_steps: int = 10
    train_random_init: bool = True
    eval_eps: float = 0.05
    eval_eta: float = 0.0125
    eval_steps: int = 250
    eval_random_init: bool = True

    optimizer: str = "adam"
    lr: float = 1e-3
    momentum: float = 0.9
    weight_decay: float = 0.0
    schedule: tuple = ()

    epochs: int = 30
    batch_size: int = 64
    seed: int = 0
    output_dir: str = "runs/run0"
    eval_every: int = 1
    epoch_eval_steps: int = 10

    augment_flip: bool = False
    augment_shift: float = 0.0
    image_shape: tuple = ()

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch_size must be at least 2 (selection needs other samples)")
        if self.epochs < 0:
            raise ConfigError("epochs must be nonnegative")
        if self.strategy not in STRATEGIES:
            raise ConfigError(f"strategy must be one of {STRATEGIES}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError("optimizer must be adam or sgd")
        self.schedule = tuple((int(e), float(v)) for e, v in self.schedule)
        if self.schedule:
            epochs = [e for e, _ in self.schedule]
            if epochs[0] != 0 or any(a >= b for a, b in zip(epochs, epochs[1:])):
                raise ConfigError("schedule epochs must start at 0 and strictly increase")
        self.hidden_layers = tuple(int(w) for w in self.hidden_layers)
        self.image_shape = tuple(int(v) for v in self.image_shape)

    # -- derived objects ---------------------------------------------------

    def effective_schedule(self):
        return self.schedule if self.schedule else ((0, self.lr),)

    def loss_weights(self) -> LossWeights:
        return LossWeights(lambda_scl=self.lambda_scl, lambda_vat=self.lambda_vat,
                           tau=self.tau, similarity=self.similarity)

    def train_attack(self) -> AttackConfig:
        return AttackConfig(epsilon=self.train_eps, eta=self.train_eta,
                            steps=self.train_steps, random_init=self.train_random_init)

    def eval_attack(self) -> AttackConfig:
        return AttackConfig(epsilon=self.eval_eps, eta=self.eval_eta,
                            steps=self.eval_steps, random_init=self.eval_random_init)

    def model_spec(self, input_dim, num_classes) -> ModelSpec:
        return ModelSpec(input_dim=input_dim, hidden_layers=self.hidden_layers,
                         num_classes=num_classes, projection=self.projection,
                         projection_dim=self.projection_dim,
                         projection_mid=self.projection_mid)

    def build_datasets(self):
        if self.dataset == "moons":
            train = make_two_moons(self.data_size, self.data_noise, self.data_seed,
                                   split="train")
            test = make_two_moons(self.data_size, self.data_noise, self.data_seed + 1,
                                  split="test")
        elif self.dataset == "blobs":
            train = make_blobs(self.data_classes, self.data_per_class, self.data_dims,
                               self.data_spread, self.data_seed, split="train")
            test = make_blobs(self.data_classes, self.data_per_class, self.data_dims,
                              self.data_spread, self.data_seed + 1, split="test")
        else:
            train = load_dataset(self.dataset)
            test = load_dataset(self.dataset_test) if self.dataset_test else train
        return train, test

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["hidden_layers"] = list(self.hidden_layers)
        d["schedule"] = [list(s) for s in self.schedule]
        d["image_shape"] = list(self.image_shape)
        return d


_FIELD_TYPES = {f.name: f.type for f in dataclasses.fields(RunConfig)}


def _parse_bool(v, key):
    if v.lower() in ("true", "1", "yes"):
        return True
    if v.lower() in ("false", "0", "no"):
        return False
    raise ConfigError(f"{key} expects true/false, got {v!r}")


def _parse_value(key, raw):
    raw = raw.strip()
    if key == "schedule":
        if not raw:
            return ()
        pairs = []
        for part in raw.split(","):
            epoch, _, lr = part.partition(":")
            if not lr:
                raise ConfigError(f"schedule entries are epoch:lr, got {part!r}")
            pairs.append((int(epoch), float(lr)))
        return tuple(pairs)
    if key in ("hidden_layers", "image_shape"):
        return tuple(int(v) for v in raw.split(",")) if raw else ()
    kind = _FIELD_TYPES[key]
    try:
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            return _parse_bool(raw, key)
    except ValueError as e:
        raise ConfigError(f"bad value for {key}: {e}") from e
    return raw


def config_from_dict(values: dict, base: RunConfig | None = None) -> RunConfig:
    known = set(_FIELD_TYPES)
    unknown = set(values) - known
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    merged = (base.to_dict() if base else {})
    merged = {k: v for k, v in merged.items() if k in known}
    merged.update(values)
    return RunConfig(**merged)


def parse_config_file(path, base: RunConfig | None = None) -> RunConfig:
    """Read UTF-8 ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, raw = line.partition("=")
            if not eq:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key = key.strip()
            if key not in _FIELD_TYPES:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            values[key] = _parse_value(key, raw)
    return config_from_dict(values, base=base)
