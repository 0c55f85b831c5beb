"""JSON experiment configuration, loaded strictly into dataclasses."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from .constants import DEFAULT_PERMUTATIONS
from .datagen import PropertyConfig, SynthConfig, synth_config_to_dict
from .errors import ConfigError, InvalidConfig
from .fedsim import FLConfig
from .leak_metrics import NORMS, normalize_norm
from .pia import AttackConfig
from .predictors import FeatureReducer, PredictiveFamily, parse_family
from .zoo import PRESETS


@dataclass
class CsvSource:
    path: str = ""
    label_column: str = "label"
    property_columns: List[str] = field(default_factory=list)
    feature_columns: Optional[List[str]] = None


@dataclass
class MetricsConfig:
    family: PredictiveFamily = field(default_factory=PredictiveFamily)
    eval_split: float = 0.3
    evaluation: str = "heldout"
    clamp_zero: bool = False
    vinfo_batches: int = 200  # property-pure batches on the final snapshot per property
    sensitivity_samples: int = 32
    norms: List[str] = field(default_factory=lambda: list(NORMS))
    output_side: str = "logits"
    loss_scale: float = 1.0
    num_permutations: int = DEFAULT_PERMUTATIONS

    def validate(self) -> None:
        self.family.validate()
        if not 0.0 < self.eval_split < 1.0:
            raise InvalidConfig("metrics.eval_split must lie in (0, 1)")
        if self.evaluation not in ("heldout", "in_sample"):
            raise InvalidConfig("metrics.evaluation must be heldout or in_sample")
        if self.vinfo_batches < 20:
            raise InvalidConfig("metrics.vinfo_batches must be >= 20")
        if self.sensitivity_samples < 1:
            raise InvalidConfig("metrics.sensitivity_samples must be >= 1")
        if self.output_side not in ("logits", "probs"):
            raise InvalidConfig("metrics.output_side must be logits or probs")
        if not self.loss_scale > 0:
            raise InvalidConfig("metrics.loss_scale must be > 0")
        if self.num_permutations < 1000:
            raise InvalidConfig("metrics.num_permutations must be >= 1000")
        self.norms = [normalize_norm(n) for n in self.norms]


@dataclass
class ExperimentConfig:
    name: str = "experiment"
    seed: int = 0
    trials: int = 1
    model: str = "fcnet"
    data: SynthConfig = field(default_factory=SynthConfig)
    csv: Optional[CsvSource] = None  # replaces synthetic data when set
    fl: FLConfig = field(default_factory=FLConfig)
    metrics: MetricsConfig = field(default_factory=MetricsConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    properties: Optional[List[str]] = None  # None: every property of the dataset
    baseline_property: Optional[str] = None  # None: first property
    reducer: Optional[str] = "auto"  # overrides both families' reducers unless null
    save_snapshots: bool = False
    max_workers: int = 1  # trials in parallel

    def validate(self) -> None:
        if self.trials < 1:
            raise InvalidConfig("trials must be >= 1")
        if self.model not in PRESETS:
            raise InvalidConfig(f"model must be one of {sorted(PRESETS)}, got {self.model!r}")
        if self.csv is None:
            self.data.validate()
        elif not self.csv.path or not self.csv.property_columns:
            raise InvalidConfig("csv needs a path and at least one property column")
        self.fl.validate()
        self.metrics.validate()
        self.attack.validate()
        if self.reducer is not None and self.reducer != "auto":
            FeatureReducer.parse(self.reducer)
        if self.properties is not None and not self.properties:
            raise InvalidConfig("properties must be null or a non-empty list")
        if self.properties and self.baseline_property and self.baseline_property not in self.properties:
            raise InvalidConfig(f"baseline_property {self.baseline_property!r} is not among properties")

    def to_dict(self) -> Dict[str, Any]:
        d = asdict(self)
        d["data"] = synth_config_to_dict(self.data)
        return d


# dataclass field -> nested dataclass type (lists hold the element type)
_NESTED: Dict[type, Dict[str, type]] = {
    ExperimentConfig: {"data": SynthConfig, "csv": CsvSource, "fl": FLConfig, "metrics": MetricsConfig, "attack": AttackConfig},
    SynthConfig: {"properties": PropertyConfig},
    MetricsConfig: {"family": PredictiveFamily},
    AttackConfig: {"family": PredictiveFamily},
    PredictiveFamily: {"reducer": FeatureReducer},
}


def _check_scalar(value: Any, default: Any, path: str) -> Any:
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise InvalidConfig(f"{path}: expected true/false, got {value!r}")
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise InvalidConfig(f"{path}: expected an integer, got {value!r}")
    elif isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise InvalidConfig(f"{path}: expected a number, got {value!r}")
        return float(value)
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise InvalidConfig(f"{path}: expected a string, got {value!r}")
    return value


def _build(cls: type, data: Any, path: str) -> Any:
    if cls is PredictiveFamily and isinstance(data, str):
        return parse_family(data)
    if cls is FeatureReducer and isinstance(data, str):
        return FeatureReducer.parse(data)
    if not isinstance(data, dict):
        raise InvalidConfig(f"{path or 'config'}: expected an object, got {type(data).__name__}")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        where = f"{path}." if path else ""
        raise ConfigError(f"unknown config key(s): {', '.join(where + k for k in unknown)}")
    defaults = cls()
    nested = _NESTED.get(cls, {})
    kwargs: Dict[str, Any] = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else key
        default = getattr(defaults, key)
        if value is None:
            kwargs[key] = None
        elif key in nested and isinstance(default, list):
            if not isinstance(value, list):
                raise InvalidConfig(f"{sub}: expected a list")
            kwargs[key] = [_build(nested[key], item, f"{sub}[{i}]") for i, item in enumerate(value)]
        elif key in nested:
            kwargs[key] = _build(nested[key], value, sub)
        elif isinstance(default, (list, tuple)) or (default is None and isinstance(value, list)):
            if not isinstance(value, list):
                raise InvalidConfig(f"{sub}: expected a list")
            kwargs[key] = tuple(value) if key == "image_shape" else list(value)
        else:
            kwargs[key] = _check_scalar(value, default, sub)
    return cls(**kwargs)


def config_from_dict(data: Dict[str, Any]) -> ExperimentConfig:
    config = _build(ExperimentConfig, data, "")
    config.validate()
    return config


def load_config(path: Path) -> ExperimentConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: invalid JSON at line {e.lineno}: {e.msg}") from None
    return config_from_dict(data)


def config_to_json(config: ExperimentConfig) -> str:
    return json.dumps(config.to_dict(), indent=2, ensure_ascii=False, sort_keys=True)
