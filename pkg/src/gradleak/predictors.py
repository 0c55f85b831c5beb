"""Predictive families for the property adversary: constant, logistic and MLP predictors."""
from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from .constants import PROB_CLAMP
from .diagnostics import log_info
from .errors import DimensionMismatch, EmptyInput, InvalidConfig, SingleClass
from .models import GradientRecord, LayerGradient, LayerSpec, Model, PropertySample
from .tensor_nn import build_model, forward, loss_gradients, sgd_step

FAMILY_KINDS = ("constant", "logistic", "mlp")
REDUCER_KINDS = ("none", "pool_mean", "pool_max", "random_projection")
_REDUCER_RE = re.compile(r"^\s*(none|pool_mean|pool_max|random_projection)\s*(?:\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\))?\s*$")


@dataclass
class FeatureReducer:
    kind: str = "none"
    size: int = 16
    seed: int = 0

    @classmethod
    def parse(cls, text: str) -> "FeatureReducer":
        """Parse ``none``, ``pool_mean(k)``, ``pool_max(k)`` or ``random_projection(d[, seed])``."""
        m = _REDUCER_RE.match(text)
        if not m:
            raise InvalidConfig(f"cannot parse feature reducer {text!r}")
        kind, size, seed = m.groups()
        if kind != "none" and size is None:
            raise InvalidConfig(f"reducer {kind} needs a size, e.g. {kind}(16)")
        return cls(kind=kind, size=int(size or 16), seed=int(seed or 0))

    def describe(self) -> str:
        if self.kind == "none":
            return "none"
        if self.kind == "random_projection":
            return f"random_projection({self.size},{self.seed})"
        return f"{self.kind}({self.size})"

    def validate(self) -> None:
        if self.kind not in REDUCER_KINDS:
            raise InvalidConfig(f"reducer kind must be one of {REDUCER_KINDS}, got {self.kind!r}")
        if self.size < 1:
            raise InvalidConfig("reducer size must be >= 1")

    def apply(self, x: np.ndarray) -> np.ndarray:
        if self.kind == "none":
            return x
        n, d = x.shape
        if self.kind == "random_projection":
            proj = np.random.default_rng(self.seed).standard_normal((d, self.size)) / np.sqrt(self.size)
            return x @ proj
        k = self.size
        full = d // k
        reduce = np.max if self.kind == "pool_max" else np.mean
        parts = []
        if full:
            parts.append(reduce(x[:, : full * k].reshape(n, full, k), axis=2))
        if d % k:
            parts.append(reduce(x[:, full * k :], axis=1, keepdims=True))
        return np.concatenate(parts, axis=1)


@dataclass
class PredictiveFamily:
    kind: str = "logistic"
    hidden_width: int = 32
    depth: int = 1
    lr: float = 0.5
    epochs: int = 500
    l2: float = 0.0
    seed: int = 0
    reducer: FeatureReducer = field(default_factory=FeatureReducer)

    def validate(self) -> None:
        if self.kind not in FAMILY_KINDS:
            raise InvalidConfig(f"family kind must be one of {FAMILY_KINDS}, got {self.kind!r}")
        if self.hidden_width < 1 or self.depth < 1:
            raise InvalidConfig("mlp hidden_width and depth must be >= 1")
        if not self.lr > 0 or self.epochs < 0 or self.l2 < 0:
            raise InvalidConfig("family needs lr > 0, epochs >= 0, l2 >= 0")
        self.reducer.validate()

    def describe(self) -> str:
        name = f"mlp({self.hidden_width}x{self.depth})" if self.kind == "mlp" else self.kind
        if self.reducer.kind != "none":
            name += f"+{self.reducer.describe()}"
        return name

    def to_dict(self) -> dict:
        return asdict(self)


def clamp_probs(p: np.ndarray) -> np.ndarray:
    return np.clip(p, PROB_CLAMP, 1.0 - PROB_CLAMP)


def cross_entropy(p_positive: np.ndarray, labels: np.ndarray) -> float:
    """Mean binary cross-entropy in nats with clamped probabilities."""
    p = clamp_probs(np.asarray(p_positive, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64)
    return float(np.mean(-(y * np.log(p) + (1.0 - y) * np.log1p(-p))))


class ConstantPredictor:
    kind = "constant"

    def __init__(self, q: float):
        self.q = float(q)

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return clamp_probs(np.full(x.shape[0], self.q))


class _Standardized:
    def __init__(self, reducer: FeatureReducer, mean: np.ndarray, scale: np.ndarray):
        self.reducer = reducer
        self.mean = mean
        self.scale = scale

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (self.reducer.apply(x) - self.mean) / self.scale


class LogisticPredictor(_Standardized):
    kind = "logistic"

    def __init__(self, reducer, mean, scale, w: np.ndarray, b: float):
        super().__init__(reducer, mean, scale)
        self.w = w
        self.b = b

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return clamp_probs(expit(self.transform(x) @ self.w + self.b))


class MLPPredictor(_Standardized):
    kind = "mlp"

    def __init__(self, reducer, mean, scale, model: Model):
        super().__init__(reducer, mean, scale)
        self.model = model

    def predict_proba(self, x: np.ndarray) -> np.ndarray:
        return clamp_probs(forward(self.model, self.transform(x)).probs[:, 1])


FittedPredictor = Union[ConstantPredictor, LogisticPredictor, MLPPredictor]


def stack_samples(samples: Sequence[PropertySample]) -> Tuple[np.ndarray, np.ndarray]:
    if not samples:
        raise EmptyInput("no property samples")
    width = samples[0].features.size
    if any(s.features.size != width for s in samples):
        raise DimensionMismatch("property samples have different feature lengths")
    x = np.stack([np.ravel(s.features) for s in samples]).astype(np.float64)
    y = np.array([s.property for s in samples], dtype=np.int64)
    return x, y


def _fit_logistic(z: np.ndarray, y: np.ndarray, family: PredictiveFamily) -> Tuple[np.ndarray, float]:
    n, d = z.shape
    q = np.clip(y.mean(), PROB_CLAMP, 1.0 - PROB_CLAMP)
    w = np.zeros(d)
    b = float(np.log(q / (1.0 - q)))
    for _ in range(family.epochs):
        err = expit(z @ w + b) - y
        w = w - family.lr * (z.T @ err / n + family.l2 * w)
        b = b - family.lr * float(err.mean())
    return w, b


def _fit_mlp(z: np.ndarray, y: np.ndarray, family: PredictiveFamily) -> Model:
    layers: List[LayerSpec] = []
    width = z.shape[1]
    for _ in range(family.depth):
        layers += [LayerSpec.dense(width, family.hidden_width), LayerSpec.relu()]
        width = family.hidden_width
    layers.append(LayerSpec.dense(width, 2))
    model = build_model(layers, family.seed)
    for _ in range(family.epochs):
        _, grads = loss_gradients(model, z, y)
        if family.l2:
            grads = GradientRecord(
                layers=tuple(
                    LayerGradient(g.weight + family.l2 * p.weight, g.bias) for g, p in zip(grads.layers, model.params)
                ),
                batch_size=grads.batch_size,
            )
        model = sgd_step(model, grads, family.lr)
    return model


def fit_arrays(x: np.ndarray, y: np.ndarray, family: PredictiveFamily) -> FittedPredictor:
    family.validate()
    if x.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"features {x.shape} do not match {y.shape[0]} labels")
    if x.shape[0] < 2:
        raise EmptyInput("a predictor needs at least 2 samples")
    constant = ConstantPredictor(y.mean())
    if family.kind == "constant":
        return constant
    if np.unique(y).size < 2:
        raise SingleClass("both property values must be present to fit a non-constant predictor")

    reduced = family.reducer.apply(x)
    mean = reduced.mean(axis=0)
    scale = reduced.std(axis=0)
    scale[scale == 0] = 1.0
    z = (reduced - mean) / scale
    fitted: FittedPredictor
    if family.kind == "logistic":
        w, b = _fit_logistic(z, y, family)
        fitted = LogisticPredictor(family.reducer, mean, scale, w, b)
    else:
        fitted = MLPPredictor(family.reducer, mean, scale, _fit_mlp(z, y, family))

    # the constant predictor belongs to every family; keep it when it fits the train split better
    ce_fit = cross_entropy(fitted.predict_proba(x), y)
    ce_const = cross_entropy(constant.predict_proba(x), y)
    if ce_const < ce_fit:
        log_info("train_predictor kept constant member ce_fit=%.6f ce_const=%.6f family=%s", ce_fit, ce_const, family.describe())
        return constant
    return fitted


def train_predictor(samples: Sequence[PropertySample], family: PredictiveFamily) -> FittedPredictor:
    x, y = stack_samples(samples)
    return fit_arrays(x, y, family)


def predict(predictor: FittedPredictor, samples: Sequence[PropertySample]) -> np.ndarray:
    x, _ = stack_samples(samples)
    return predictor.predict_proba(x)


def parse_family(text: str, **overrides) -> PredictiveFamily:
    """``logistic``, ``constant`` or ``mlp`` / ``mlp(64)`` / ``mlp(64,2)``."""
    m = re.match(r"^\s*(constant|logistic|mlp)\s*(?:\(\s*(\d+)\s*(?:,\s*(\d+)\s*)?\))?\s*$", text)
    if not m:
        raise InvalidConfig(f"cannot parse predictive family {text!r}")
    kind, width, depth = m.groups()
    family = PredictiveFamily(kind=kind, **overrides)
    if width:
        family.hidden_width = int(width)
    if depth:
        family.depth = int(depth)
    family.validate()
    return family


def reducer_for(model: Optional[Model], spec: str) -> FeatureReducer:
    """``auto`` resolves to none for dense-only models and pool_max(16) when the model has conv layers."""
    if spec != "auto":
        return FeatureReducer.parse(spec)
    if model is not None and any(layer.kind.value == "conv2d" for layer in model.layers):
        return FeatureReducer(kind="pool_max", size=16)
    return FeatureReducer()
