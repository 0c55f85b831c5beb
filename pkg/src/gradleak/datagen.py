"""Synthetic planted-property datasets, CSV ingestion and dataset containers."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .constants import DATASET_MAGIC
from .diagnostics import log_info
from .errors import BadFractions, ContainerFormatError, InvalidConfig, MissingColumn, NonBinaryProperty, ParseError
from .models import LabeledDataset
from .snapshot import read_container, take_array, write_container


@dataclass
class PropertyConfig:
    name: str = "property"
    signal_strength: float = 1.0
    correlation_with_main: float = 0.0
    positive_rate: float = 0.5


@dataclass
class SynthConfig:
    num_samples: int = 2000
    feature_dim: int = 64
    image_shape: Optional[Tuple[int, int, int]] = None
    num_classes: int = 2
    class_strength: float = 1.0
    properties: List[PropertyConfig] = field(default_factory=lambda: [PropertyConfig()])
    noise_std: float = 1.0
    pattern_block: int = 4  # image mode: side of the constant blocks the patterns are drawn from
    seed: int = 0

    @property
    def sample_shape(self) -> Tuple[int, ...]:
        return tuple(self.image_shape) if self.image_shape else (self.feature_dim,)

    def validate(self) -> None:
        if self.num_samples < 1:
            raise InvalidConfig("num_samples must be >= 1")
        if self.num_classes < 2:
            raise InvalidConfig("num_classes must be >= 2")
        if self.noise_std < 0 or self.class_strength < 0:
            raise InvalidConfig("noise_std and class_strength must be >= 0")
        names = [p.name for p in self.properties]
        if len(set(names)) != len(names):
            raise InvalidConfig(f"duplicate property names: {names}")
        for p in self.properties:
            if p.signal_strength < 0:
                raise InvalidConfig(f"property {p.name!r}: signal_strength must be >= 0")
            if not -1.0 <= p.correlation_with_main <= 1.0:
                raise InvalidConfig(f"property {p.name!r}: correlation_with_main must lie in [-1, 1]")
            if not 0.0 < p.positive_rate < 1.0:
                raise InvalidConfig(f"property {p.name!r}: positive_rate must lie in (0, 1)")
        if self.image_shape is not None:
            if len(self.image_shape) != 3 or min(self.image_shape) < 1:
                raise InvalidConfig(f"image_shape must be (C, H, W), got {self.image_shape}")
            c, h, w = self.image_shape
            if self.pattern_block < 1 or h % self.pattern_block or w % self.pattern_block:
                raise InvalidConfig(f"pattern_block {self.pattern_block} must divide the image size {h}x{w}")
            dims = c * (h // self.pattern_block) * (w // self.pattern_block)
        else:
            if self.feature_dim < 1:
                raise InvalidConfig("feature_dim must be >= 1")
            dims = self.feature_dim
        needed = self.num_classes + len(self.properties)
        if dims < needed:
            raise InvalidConfig(f"{needed} orthogonal directions do not fit in {dims} dimensions")


def planted_directions(config: SynthConfig, rng: Optional[np.random.Generator] = None) -> np.ndarray:
    """Orthonormal rows: one per class, then one per property, flattened to the sample size."""
    rng = rng if rng is not None else np.random.default_rng(config.seed)
    m = config.num_classes + len(config.properties)
    if config.image_shape is None:
        raw = rng.standard_normal((config.feature_dim, m))
        q, _ = np.linalg.qr(raw)
        return q.T.copy()
    c, h, w = config.image_shape
    b = config.pattern_block
    coarse = rng.standard_normal((c * (h // b) * (w // b), m))
    q, _ = np.linalg.qr(coarse)
    # kron of an orthonormal set with a constant block stays orthogonal; rescale to unit norm
    patterns = [
        np.kron(col.reshape(c, h // b, w // b), np.ones((1, b, b))).ravel() / b
        for col in q.T
    ]
    return np.stack(patterns)


def _draw_property(rng: np.random.Generator, labels: np.ndarray, prop: PropertyConfig) -> np.ndarray:
    k = labels.shape[0]
    base = (rng.random(k) < prop.positive_rate).astype(np.int64)
    rho = prop.correlation_with_main
    tied = rng.random(k) < abs(rho)
    follow = (labels % 2 == 1).astype(np.int64)
    if rho < 0:
        follow = 1 - follow
    return np.where(tied, follow, base)


def generate(config: SynthConfig) -> LabeledDataset:
    config.validate()
    rng = np.random.default_rng(config.seed)
    dirs = planted_directions(config, rng)
    k = config.num_samples
    labels = rng.integers(0, config.num_classes, size=k)
    properties = {}
    for prop in config.properties:
        properties[prop.name] = _draw_property(rng, labels, prop)

    x = config.class_strength * dirs[labels]
    for j, prop in enumerate(config.properties):
        sign = 2.0 * properties[prop.name] - 1.0
        x = x + prop.signal_strength * sign[:, None] * dirs[config.num_classes + j][None, :]
    x = x + rng.normal(0.0, config.noise_std, size=x.shape)
    log_info(
        "generate samples=%s shape=%s classes=%s properties=%s seed=%s",
        k,
        config.sample_shape,
        config.num_classes,
        [p.name for p in config.properties],
        config.seed,
    )
    return LabeledDataset(
        inputs=x.reshape((k,) + config.sample_shape),
        labels=labels.astype(np.int64),
        properties=properties,
        num_classes=config.num_classes,
    )


def _category_codes(column: pd.Series) -> Tuple[np.ndarray, List[Any]]:
    """Integer codes of a text column: numeric order when every value is a number, text order otherwise."""
    values = column.str.strip()
    numeric = pd.to_numeric(values, errors="coerce")
    keys = numeric if numeric.notna().all() else values
    order = sorted(keys.unique())
    codes = keys.map({v: i for i, v in enumerate(order)}).to_numpy(dtype=np.int64)
    return codes, order


def load_csv(
    path: Path,
    main_label_column: str,
    property_columns: Sequence[str],
    feature_columns: Optional[Sequence[str]] = None,
) -> LabeledDataset:
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False, encoding="utf-8")
    except pd.errors.EmptyDataError:
        raise ParseError(f"{path} is empty", row=1) from None
    except pd.errors.ParserError as e:
        raise ParseError(f"{path}: {e}") from None

    wanted = [main_label_column, *property_columns]
    if feature_columns is None:
        feature_columns = [c for c in df.columns if c not in wanted]
    for col in [*wanted, *feature_columns]:
        if col not in df.columns:
            raise MissingColumn(f"column {col!r} not found in {path}")
    if df.empty:
        raise ParseError(f"{path} has a header but no data rows", row=2)
    if not feature_columns:
        raise MissingColumn(f"{path} has no feature columns")

    features = np.empty((len(df), len(feature_columns)))
    for j, col in enumerate(feature_columns):
        values = pd.to_numeric(df[col].str.strip(), errors="coerce")
        bad = np.flatnonzero(values.isna().to_numpy())
        if bad.size:
            # +2: one for the header, one for 1-based rows
            raise ParseError(f"cannot parse {df[col].iloc[bad[0]]!r} as a number", row=int(bad[0]) + 2, column=col)
        features[:, j] = values.to_numpy(dtype=np.float64)

    labels, classes = _category_codes(df[main_label_column])
    properties = {}
    for col in property_columns:
        codes, values = _category_codes(df[col])
        if len(values) != 2:
            shown = [str(v) for v in values[:5]]
            raise NonBinaryProperty(f"property column {col!r} needs exactly 2 distinct values, found {len(values)}: {shown}")
        properties[col] = codes
    log_info("load_csv path=%s rows=%s features=%s properties=%s", path, len(df), len(feature_columns), list(property_columns))
    return LabeledDataset(inputs=features, labels=labels, properties=properties, num_classes=max(2, len(classes)))


def _check_fractions(fractions: Sequence[float]) -> np.ndarray:
    fr = np.asarray(fractions, dtype=np.float64)
    if fr.ndim != 1 or fr.size == 0 or np.any(fr <= 0) or abs(fr.sum() - 1.0) > 1e-9:
        raise BadFractions(f"fractions must be positive and sum to 1, got {list(fractions)}")
    return fr


def _cut(indices: np.ndarray, fr: np.ndarray) -> List[np.ndarray]:
    bounds = np.rint(np.cumsum(fr) * indices.size).astype(np.int64)
    bounds[-1] = indices.size
    return np.split(indices, bounds[:-1])


def split(
    dataset: LabeledDataset,
    fractions: Sequence[float],
    seed: int,
    *,
    stratify: Optional[str] = None,
) -> List[LabeledDataset]:
    """Seeded shuffle then contiguous slicing; with ``stratify`` each property class is cut separately."""
    fr = _check_fractions(fractions)
    rng = np.random.default_rng(seed)
    if stratify is None:
        parts = _cut(rng.permutation(len(dataset)), fr)
    else:
        if stratify not in dataset.properties:
            raise MissingColumn(f"unknown property {stratify!r}")
        groups = [np.flatnonzero(dataset.properties[stratify] == v) for v in (0, 1)]
        pieces = [_cut(rng.permutation(g), fr) for g in groups]
        parts = [rng.permutation(np.concatenate([p[i] for p in pieces])) for i in range(fr.size)]
    return [dataset.subset(p) for p in parts]


def save_dataset(path: Path, dataset: LabeledDataset, meta: Optional[dict] = None) -> Path:
    names = list(dataset.properties)
    header = {
        "num_samples": len(dataset),
        "feature_shape": list(dataset.feature_shape),
        "num_classes": dataset.num_classes,
        "properties": names,
        "meta": meta or {},
    }
    arrays = [dataset.inputs, dataset.labels] + [dataset.properties[n] for n in names]
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        write_container(fh, DATASET_MAGIC, header, arrays)
    return path


def load_dataset(path: Path) -> LabeledDataset:
    header, payload = read_container(path.read_bytes(), DATASET_MAGIC, "dataset")
    try:
        k = int(header["num_samples"])
        shape = (k, *header["feature_shape"])
        inputs, offset = take_array(payload, 0, shape)
        labels, offset = take_array(payload, offset, (k,))
        properties = {}
        for name in header["properties"]:
            values, offset = take_array(payload, offset, (k,))
            properties[name] = values.astype(np.int64)
    except (KeyError, TypeError, ValueError) as e:
        raise ContainerFormatError(f"invalid dataset header in {path}: {e}") from None
    return LabeledDataset(inputs=inputs, labels=labels.astype(np.int64), properties=properties, num_classes=int(header["num_classes"]))


def synth_config_to_dict(config: SynthConfig) -> dict:
    d = asdict(config)
    if d["image_shape"] is not None:
        d["image_shape"] = list(d["image_shape"])
    return d
