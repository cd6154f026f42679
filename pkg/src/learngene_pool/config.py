"""Run configuration: YAML file + flag overrides, validated before any stage runs."""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any

import yaml

from .profiles import PROFILES


class ConfigError(ValueError):
    """Bad key, type or value; ``key`` names the offending field."""

    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    profile: str = "mini"
    seed: int = 0
    workdir: str = "runs/mini"

    # model dims; None means "take the profile value"
    ancestry_dim: int | None = None
    ancestry_depth: int | None = None
    ancestry_heads: int | None = None
    low_dim: int | None = None
    low_heads: int | None = None
    aux_depth: int | None = None

    # data
    data_path: str | None = None
    num_classes: int = 10
    samples_per_class: int = 20
    data_seed: int = 0

    # distillation objective
    alpha: float = 0.5
    tau: float = 1.0
    plan: str = "dense"
    weight_decay: float = 0.0

    # per-stage optimisation
    ancestry_lr: float = 2e-3
    ancestry_epochs: int = 10
    ancestry_batch: int = 16
    distill_lr: float = 5e-3
    distill_epochs: int = 5
    distill_batch: int = 8
    finetune_lr: float = 5e-4
    finetune_epochs: int = 12
    finetune_batch: int = 8
    finetune_steps: int | None = None

    # pool
    stitch_init: str = "tm"
    tm_orientation: str = "transpose"
    calib_batch: int = 64
    path_mode: str = "table"
    teacher: bool = False
    freeze_instances: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def with_overrides(self, **kw) -> "RunConfig":
        return build_config({**self.to_dict(), **kw})

    # resolved architecture
    def profile_obj(self):
        base = PROFILES[self.profile]
        over = {
            "ancestry_dim": self.ancestry_dim, "ancestry_depth": self.ancestry_depth,
            "ancestry_heads": self.ancestry_heads, "low_dim": self.low_dim, "low_heads": self.low_heads,
            "aux_depth": self.aux_depth,
        }
        over = {k: v for k, v in over.items() if v is not None}
        if self.profile == "mini":
            over["num_classes"] = self.num_classes
        return dataclasses.replace(base, **over)


_CHOICES = {
    "profile": tuple(PROFILES),
    "plan": ("dense", "last"),
    "stitch_init": ("tm", "ls", "random"),
    "tm_orientation": ("transpose", "pinv"),
    "path_mode": ("table", "general"),
}
_POSITIVE = {
    "ancestry_dim", "ancestry_depth", "ancestry_heads", "low_dim", "low_heads", "aux_depth",
    "num_classes", "samples_per_class", "tau", "ancestry_lr", "ancestry_batch", "distill_lr", "distill_batch",
    "finetune_lr", "finetune_batch", "calib_batch",
}
_NON_NEGATIVE = {"seed", "data_seed", "weight_decay", "ancestry_epochs", "distill_epochs", "finetune_epochs",
                 "finetune_steps"}
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _base_type(annotation: str) -> tuple[type, bool]:
    optional = "None" in annotation
    name = annotation.replace("| None", "").strip()
    return {"int": int, "float": float, "str": str, "bool": bool}[name], optional


def _coerce(key: str, value: Any):
    typ, optional = _base_type(_FIELD_TYPES[key])
    if value is None:
        if optional:
            return None
        raise ConfigError(key, "may not be null")
    if typ is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(key, f"expected a boolean, got {value!r}")
    if isinstance(value, bool):
        raise ConfigError(key, f"expected {typ.__name__}, got a boolean")
    if typ is int:
        if isinstance(value, int):
            return value
        raise ConfigError(key, f"expected an integer, got {value!r}")
    if typ is float:
        if isinstance(value, (int, float)):
            return float(value)
        raise ConfigError(key, f"expected a number, got {value!r}")
    if not isinstance(value, str):
        raise ConfigError(key, f"expected a string, got {value!r}")
    return value


def build_config(values: dict) -> RunConfig:
    """Validate a flat mapping into a RunConfig; unknown keys are rejected."""
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(unknown[0], "unknown configuration key")
    clean = {k: _coerce(k, v) for k, v in values.items()}
    for key, choices in _CHOICES.items():
        if key in clean and clean[key] not in choices:
            raise ConfigError(key, f"must be one of {list(choices)}, got {clean[key]!r}")
    for key in _POSITIVE:
        v = clean.get(key)
        if v is not None and v <= 0:
            raise ConfigError(key, f"must be positive, got {v}")
    for key in _NON_NEGATIVE:
        v = clean.get(key)
        if v is not None and v < 0:
            raise ConfigError(key, f"must be non-negative, got {v}")
    if "alpha" in clean and not 0.0 <= clean["alpha"] <= 1.0:
        raise ConfigError("alpha", f"must lie in [0, 1], got {clean['alpha']}")
    cfg = RunConfig(**clean)
    prof = cfg.profile_obj()
    for dim_key, head_key, dim, heads in (("ancestry_dim", "ancestry_heads", prof.ancestry_dim, prof.ancestry_heads),
                                          ("low_dim", "low_heads", prof.low_dim, prof.low_heads)):
        if dim % heads:
            raise ConfigError(head_key, f"{dim_key}={dim} is not divisible by {heads} heads")
    if prof.low_dim > prof.ancestry_dim:
        raise ConfigError("low_dim", f"low row ({prof.low_dim}) may not be wider than the high row "
                                     f"({prof.ancestry_dim})")
    if prof.aux_depth > prof.ancestry_depth:
        raise ConfigError("aux_depth", f"auxiliary depth {prof.aux_depth} exceeds ancestry depth "
                                       f"{prof.ancestry_depth}")
    return cfg


def load_config(path: str | Path | None, overrides: dict | None = None) -> RunConfig:
    """File values first, then ``overrides`` (flags); a missing path is an error, ``None`` means defaults."""
    values: dict = {}
    if path is not None:
        p = Path(path)
        if not p.is_file():
            raise FileNotFoundError(f"config file not found: {p}")
        try:
            loaded = yaml.safe_load(p.read_text())
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from None
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("<file>", "top level must be a mapping")
        values.update(loaded)
    values.update({k: v for k, v in (overrides or {}).items()})
    return build_config(values)


def dump_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=True)
