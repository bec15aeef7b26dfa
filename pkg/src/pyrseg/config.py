"""Model/run configuration: JSON round-trip with fail-closed validation."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass

from .errors import ConfigError

STEP_PARITIES = ("boundary-odd", "seg-odd")
DUALITY_REDUCTIONS = ("sum", "mean")
BETA_SCOPES = ("per-class-per-batch", "global-per-batch")


@dataclass(frozen=True)
class ModelConfig:
    classes: int = 4
    channels: int = 16
    steps: int = 4
    grids: tuple = (1, 3, 5, 7)
    spatial_gradient_k: int = 3
    lambda1: float = 1.0
    lambda2: float = 1000.0
    base_lr: float = 0.001
    power: float = 0.9
    momentum: float = 0.9
    weight_decay: float = 0.0001
    epochs: int = 60
    batch_size: int = 4
    seed: int = 0
    image_size: int = 64
    step_parity: str = "boundary-odd"
    duality_reduction: str = "mean"
    beta_scope: str = "per-class-per-batch"
    eval_nms: bool = True
    tolerance_fraction: float = 0.00375

    def validate(self):
        def require(ok, field, why):
            if not ok:
                raise ConfigError(f"config field '{field}' invalid: {why}")

        require(self.classes >= 2, "classes", f"{self.classes} < 2")
        require(self.channels >= 1, "channels", f"{self.channels} < 1")
        require(1 <= self.steps <= 8, "steps", f"{self.steps} not in [1, 8]")
        require(
            len(self.grids) >= 1 and all(int(g) >= 1 for g in self.grids),
            "grids", f"{self.grids} must be >= 1 each",
        )
        require(
            self.spatial_gradient_k >= 1 and self.spatial_gradient_k % 2 == 1,
            "spatial_gradient_k", f"{self.spatial_gradient_k} must be odd",
        )
        require(self.lambda1 >= 0, "lambda1", "must be >= 0")
        require(self.lambda2 >= 0, "lambda2", "must be >= 0")
        require(self.base_lr >= 0, "base_lr", "must be >= 0")
        require(self.epochs >= 1, "epochs", "must be >= 1")
        require(self.batch_size >= 1, "batch_size", "must be >= 1")
        require(
            self.image_size >= 16 and self.image_size % 16 == 0,
            "image_size", f"{self.image_size} must be a positive multiple of 16",
        )
        require(
            self.step_parity in STEP_PARITIES,
            "step_parity", f"{self.step_parity!r} not in {STEP_PARITIES}",
        )
        require(
            self.duality_reduction in DUALITY_REDUCTIONS,
            "duality_reduction",
            f"{self.duality_reduction!r} not in {DUALITY_REDUCTIONS}",
        )
        require(
            self.beta_scope in BETA_SCOPES,
            "beta_scope", f"{self.beta_scope!r} not in {BETA_SCOPES}",
        )
        require(
            self.tolerance_fraction > 0 or self.tolerance_fraction == 0,
            "tolerance_fraction", "must be >= 0",
        )
        return self

    def to_dict(self):
        d = dataclasses.asdict(self)
        d["grids"] = list(self.grids)
        return d

    @classmethod
    def from_dict(cls, raw):
        if not isinstance(raw, dict):
            raise ConfigError(f"config must be a JSON object, got {type(raw).__name__}")
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise ConfigError(f"unknown config keys rejected: {', '.join(unknown)}")
        values = dict(raw)
        if "grids" in values:
            values["grids"] = tuple(int(g) for g in values["grids"])
        try:
            cfg = cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        return cfg.validate()

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1, sort_keys=True)
            fh.write("\n")

    @classmethod
    def from_json(cls, path):
        with open(path) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"config file {path} is not valid JSON: {exc}")
        return cls.from_dict(raw)


CONFIG_SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "classes": {"type": "integer", "minimum": 2},
        "channels": {"type": "integer", "minimum": 1},
        "steps": {"type": "integer", "minimum": 1, "maximum": 8},
        "grids": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "spatial_gradient_k": {"type": "integer", "minimum": 1},
        "lambda1": {"type": "number", "minimum": 0},
        "lambda2": {"type": "number", "minimum": 0},
        "base_lr": {"type": "number", "minimum": 0},
        "power": {"type": "number"},
        "momentum": {"type": "number"},
        "weight_decay": {"type": "number"},
        "epochs": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer"},
        "image_size": {"type": "integer", "minimum": 16, "multipleOf": 16},
        "step_parity": {"enum": list(STEP_PARITIES)},
        "duality_reduction": {"enum": list(DUALITY_REDUCTIONS)},
        "beta_scope": {"enum": list(BETA_SCOPES)},
        "eval_nms": {"type": "boolean"},
        "tolerance_fraction": {"type": "number", "minimum": 0},
    },
}
