"""Run configuration: one YAML file with nested sections drives every CLI
command. Every field has a default; unknown keys are hard errors. All
randomness flows from the single master ``seed`` through named substreams.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np
import yaml

from .errors import ConfigError
from .losses import PRESETS, LossSpec
from .model import ModelConfig
from .samplers import SAMPLER_KINDS
from .schedules import FLIP_KINDS, TIME_KINDS
from .training import TrainSettings

DATASET_KINDS = ("sawtooth", "product", "table-file", "empirical-file")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "sawtooth"
    probs: tuple | None = None     # product mode: d probabilities; optional generator for empirical mode
    path: str | None = None        # table-file / empirical-file location
    n_train: int = 20000           # sample count written by gen-data in empirical mode

    def __post_init__(self):
        if self.kind not in DATASET_KINDS:
            raise ConfigError(f"dataset.kind must be one of {DATASET_KINDS}, got {self.kind!r}")
        if self.kind == "product" and self.probs is None:
            raise ConfigError("dataset.kind=product requires dataset.probs")
        if self.kind == "table-file" and self.path is None:
            raise ConfigError("dataset.kind=table-file requires dataset.path")
        if self.probs is not None:
            object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))


@dataclass(frozen=True)
class ScheduleSpec:
    kind: str = "cosine"
    steps: int = 30

    def __post_init__(self):
        if self.kind not in TIME_KINDS:
            raise ConfigError(f"schedule.kind must be one of {TIME_KINDS}, got {self.kind!r}")
        if self.steps < 1:
            raise ConfigError("schedule.steps must be >= 1")


@dataclass(frozen=True)
class FlipSpec:
    kind: str = "linear"
    total: int | None = None       # None: defaults to the data dimension d

    def __post_init__(self):
        if self.kind not in FLIP_KINDS:
            raise ConfigError(f"flips.kind must be one of {FLIP_KINDS}, got {self.kind!r}")


@dataclass(frozen=True)
class BoundsSpec:
    """Knobs for the bound-validation sweep."""

    dims: tuple = (2, 3, 4)
    n_instances: int = 20
    k_values: tuple = (25, 100, 400)
    t_f: float = 4.0
    eta_points: int = 20
    eta_max: float = 0.5
    tv_dims: tuple = (2, 4, 6)

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(v) for v in self.dims))
        object.__setattr__(self, "k_values", tuple(int(v) for v in self.k_values))
        object.__setattr__(self, "tv_dims", tuple(int(v) for v in self.tv_dims))


@dataclass(frozen=True)
class RunConfig:
    d: int = 8
    lam: float = 1.0
    t_f: float = 3.0
    seed: int = 0
    out_dir: str = "runs/out"
    sampler: str = "discrete"
    n_samples: int = 20000
    dataset: DatasetSpec = field(default_factory=DatasetSpec)
    model: ModelConfig | None = None
    loss: LossSpec = field(default_factory=lambda: LossSpec(1.0, 0.0, 0.0, w_scaled=True))
    training: TrainSettings = field(default_factory=TrainSettings)
    schedule: ScheduleSpec = field(default_factory=ScheduleSpec)
    flips: FlipSpec = field(default_factory=FlipSpec)
    bounds: BoundsSpec = field(default_factory=BoundsSpec)

    def __post_init__(self):
        if self.d < 1:
            raise ConfigError("d must be >= 1")
        if self.t_f <= 0 or self.lam <= 0:
            raise ConfigError("lam and t_f must be > 0")
        if self.sampler not in SAMPLER_KINDS:
            raise ConfigError(f"sampler must be one of {SAMPLER_KINDS}, got {self.sampler!r}")
        if self.model is None:
            object.__setattr__(self, "model", ModelConfig(d=self.d, seed=self.seed))
        elif self.model.d != self.d:
            raise ConfigError(f"model.d={self.model.d} disagrees with top-level d={self.d}")
        if self.dataset.probs is not None and self.dataset.kind == "product" \
                and len(self.dataset.probs) != self.d:
            raise ConfigError("dataset.probs length must equal d")

    @property
    def flip_total(self) -> int:
        return self.flips.total if self.flips.total is not None else self.d

    def to_dict(self) -> dict:
        out = asdict(self)
        return out

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]

    def dataset_hash(self) -> str:
        """Hash of the fields that determine the reference data (the lineage
        key checked by eval); sampler/training knobs do not affect it."""
        payload = json.dumps({"d": self.d, "seed": self.seed,
                              "dataset": asdict(self.dataset)},
                             sort_keys=True, default=str)
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


_SECTION_TYPES = {
    "dataset": DatasetSpec,
    "model": ModelConfig,
    "loss": LossSpec,
    "training": TrainSettings,
    "schedule": ScheduleSpec,
    "flips": FlipSpec,
    "bounds": BoundsSpec,
}


def _build_section(name: str, cls, payload: dict, top: dict):
    allowed = {f.name for f in fields(cls)}
    extra = {"preset"} if name == "loss" else set()
    unknown = set(payload) - allowed - extra
    if unknown:
        raise ConfigError(f"unknown keys in section {name!r}: {sorted(unknown)}")
    payload = dict(payload)
    if name == "loss" and "preset" in payload:
        preset = payload.pop("preset")
        if preset is not None:
            if preset not in PRESETS:
                raise ConfigError(f"unknown loss preset {preset!r}; "
                                  f"choose from {sorted(PRESETS)}")
            base = PRESETS[preset]
            payload = {"w1": base.w1, "w2": base.w2, "w3": base.w3, **payload}
    if name == "model":
        payload.setdefault("d", top.get("d", RunConfig.d))
    for key in ("probs", "dims", "k_values", "tv_dims"):
        if key in payload and payload[key] is not None:
            payload[key] = tuple(payload[key])
    try:
        return cls(**payload)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid section {name!r}: {exc}") from exc


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    top_fields = {f.name for f in fields(RunConfig)}
    unknown = set(raw) - top_fields
    if unknown:
        raise ConfigError(f"unknown top-level keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in _SECTION_TYPES:
            if not isinstance(value, dict):
                raise ConfigError(f"section {key!r} must be a mapping")
            kwargs[key] = _build_section(key, _SECTION_TYPES[key], value, raw)
        else:
            kwargs[key] = value
    try:
        return RunConfig(**kwargs)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid config: {exc}") from exc


def load_config(path) -> RunConfig:
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    return config_from_dict(raw)


def save_config(config: RunConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config.to_dict(), fh, sort_keys=True)


def substream(master_seed: int, name: str) -> np.random.Generator:
    """Named deterministic RNG substream derived from the master seed."""
    digest = hashlib.sha256(name.encode()).digest()
    words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
    return np.random.default_rng(np.random.SeedSequence([master_seed, *words]))
