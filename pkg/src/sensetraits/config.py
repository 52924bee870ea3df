"""Pipeline configuration (YAML file, overridable from the command line)."""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import yaml

from .ensemble import GBTParams, RFParams
from .featurize import DEFAULT_NIGHT
from .ingest import DEFAULT_MIN_DAYS, DEFAULT_TZ
from .targets import TRAITS

DEFAULT_SPACES = {
    "rf": {
        "n_trees": ["int", 50, 500],
        "max_depth": ["int", 2, 16],
        "min_samples_leaf": ["int", 1, 10],
        "feature_fraction": ["real", 0.1, 1.0],
    },
    "gbt": {
        "n_rounds": ["int", 50, 500],
        "learning_rate": ["real-log", 0.01, 0.3],
        "max_depth": ["int", 2, 8],
        "lambda_l2": ["real-log", 1e-3, 10.0],
        "min_split_gain": ["real", 0.0, 5.0],
        "subsample": ["real", 0.5, 1.0],
        "feature_fraction": ["real", 0.5, 1.0],
    },
}
DEFAULT_BASE_PARAMS = {"rf": RFParams().to_dict(), "gbt": GBTParams().to_dict()}


class ConfigError(ValueError):
    pass


@dataclass
class Inputs:
    events: str | None = None
    metrics: str | None = None
    bfi: str | None = None
    events_format: str = "csv"
    key: str | None = None  # questionnaire scoring key; shipped key when unset
    reference: str | None = None  # reference population stats; shipped file when unset


@dataclass
class RFEConfig:
    mode: str = "nested"  # nested | paper
    step: float = 0.1


@dataclass
class BOConfig:
    budget: int = 40
    init_points: int = 10
    n_candidates: int = 1024
    n_restarts: int = 32


@dataclass
class PipelineConfig:
    seed: int
    inputs: Inputs = field(default_factory=Inputs)
    output_dir: str = "out"
    tz: str = DEFAULT_TZ
    min_days: int = DEFAULT_MIN_DAYS
    night: tuple[float, float] = DEFAULT_NIGHT
    max_missing: float = 0.5
    traits: list[str] = field(default_factory=lambda: list(TRAITS))
    schemes: list[str] = field(default_factory=lambda: ["binary", "ternary"])
    models: list[str] = field(default_factory=lambda: ["rf", "gbt"])
    folds: int = 5
    f1: str = "macro"
    fold_local_thresholds: bool = False
    rfe: RFEConfig = field(default_factory=RFEConfig)
    bo: BOConfig = field(default_factory=BOConfig)
    spaces: dict[str, dict[str, list]] = field(default_factory=lambda: copy.deepcopy(DEFAULT_SPACES))
    base_params: dict[str, dict[str, Any]] = field(default_factory=lambda: copy.deepcopy(DEFAULT_BASE_PARAMS))
    report_formats: list[str] = field(default_factory=lambda: ["csv", "json", "md"])

    def __post_init__(self):
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        self.seed = int(self.seed)
        self.night = tuple(float(h) for h in self.night)
        for t in self.traits:
            if t not in TRAITS:
                raise ConfigError(f"unknown trait {t}")
        for s in self.schemes:
            if s not in ("binary", "ternary"):
                raise ConfigError(f"unknown scheme {s}")
        for m in self.models:
            if m not in ("rf", "gbt"):
                raise ConfigError(f"unknown model {m}")
        if self.f1 not in ("macro", "positive", "weighted"):
            raise ConfigError(f"unknown f1 averaging {self.f1}")
        if self.f1 == "positive" and "ternary" in self.schemes:
            raise ConfigError("positive-class F1 is only defined for the binary scheme")
        if self.rfe.mode not in ("nested", "paper"):
            raise ConfigError(f"unknown rfe mode {self.rfe.mode}")
        if self.folds < 2:
            raise ConfigError("folds must be >= 2")
        for fmt in self.report_formats:
            if fmt not in ("csv", "json", "md"):
                raise ConfigError(f"unknown report format {fmt}")

    @classmethod
    def from_dict(cls, d: dict[str, Any], base_dir: Path | None = None) -> "PipelineConfig":
        d = copy.deepcopy(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        if "seed" not in d:
            raise ConfigError("seed is mandatory")
        try:
            inputs = Inputs(**d.pop("inputs", {}) or {})
            rfe = RFEConfig(**d.pop("rfe", {}) or {})
            bo = BOConfig(**d.pop("bo", {}) or {})
        except TypeError as exc:
            raise ConfigError(f"bad config section: {exc}") from None
        if base_dir is not None:
            for f in ("events", "metrics", "bfi", "key", "reference"):
                v = getattr(inputs, f)
                if v and not Path(v).is_absolute():
                    setattr(inputs, f, str(base_dir / v))
            if "output_dir" in d and not Path(d["output_dir"]).is_absolute():
                d["output_dir"] = str(base_dir / d["output_dir"])
        spaces = copy.deepcopy(DEFAULT_SPACES)
        for k, v in (d.pop("spaces", {}) or {}).items():
            spaces[k] = v
        base = copy.deepcopy(DEFAULT_BASE_PARAMS)
        for k, v in (d.pop("base_params", {}) or {}).items():
            base[k] = {**base.get(k, {}), **v}
        return cls(inputs=inputs, rfe=rfe, bo=bo, spaces=spaces, base_params=base, **d)

    @classmethod
    def load(cls, path) -> "PipelineConfig":
        path = Path(path)
        with open(path) as fh:
            d = yaml.safe_load(fh) or {}
        return cls.from_dict(d, base_dir=path.parent)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        d["night"] = list(self.night)
        return d

    def digest(self) -> str:
        """Hash of the run-relevant settings (output location excluded)."""
        d = self.to_dict()
        d.pop("output_dir")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()
