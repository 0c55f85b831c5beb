from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .errors import SnapshotOrderError


class LayerKind(str, Enum):
    DENSE = "dense"
    CONV2D = "conv2d"
    MAXPOOL2D = "maxpool2d"
    RELU = "relu"
    FLATTEN = "flatten"


PARAMETERIZED_KINDS = (LayerKind.DENSE, LayerKind.CONV2D)


@dataclass(frozen=True)
class LayerSpec:
    kind: LayerKind
    in_size: int = 0
    out_size: int = 0
    in_channels: int = 0
    out_channels: int = 0
    kernel_h: int = 0
    kernel_w: int = 0
    stride: int = 1
    window: int = 0

    @classmethod
    def dense(cls, in_size: int, out_size: int) -> "LayerSpec":
        return cls(LayerKind.DENSE, in_size=in_size, out_size=out_size)

    @classmethod
    def conv2d(cls, in_channels: int, out_channels: int, kernel: int | Tuple[int, int] = 3, stride: int = 1) -> "LayerSpec":
        kh, kw = (kernel, kernel) if isinstance(kernel, int) else kernel
        return cls(LayerKind.CONV2D, in_channels=in_channels, out_channels=out_channels, kernel_h=kh, kernel_w=kw, stride=stride)

    @classmethod
    def maxpool2d(cls, window: int = 2, stride: Optional[int] = None) -> "LayerSpec":
        return cls(LayerKind.MAXPOOL2D, window=window, stride=window if stride is None else stride)

    @classmethod
    def relu(cls) -> "LayerSpec":
        return cls(LayerKind.RELU)

    @classmethod
    def flatten(cls) -> "LayerSpec":
        return cls(LayerKind.FLATTEN)

    @property
    def parameterized(self) -> bool:
        return self.kind in PARAMETERIZED_KINDS

    def weight_shape(self) -> Tuple[int, ...]:
        if self.kind is LayerKind.DENSE:
            return (self.out_size, self.in_size)
        if self.kind is LayerKind.CONV2D:
            return (self.out_channels, self.in_channels, self.kernel_h, self.kernel_w)
        return ()

    def bias_shape(self) -> Tuple[int, ...]:
        if self.kind is LayerKind.DENSE:
            return (self.out_size,)
        if self.kind is LayerKind.CONV2D:
            return (self.out_channels,)
        return ()

    def to_dict(self) -> Dict[str, Any]:
        d: Dict[str, Any] = {"kind": self.kind.value}
        if self.kind is LayerKind.DENSE:
            d.update(in_size=self.in_size, out_size=self.out_size)
        elif self.kind is LayerKind.CONV2D:
            d.update(
                in_channels=self.in_channels,
                out_channels=self.out_channels,
                kernel_h=self.kernel_h,
                kernel_w=self.kernel_w,
                stride=self.stride,
            )
        elif self.kind is LayerKind.MAXPOOL2D:
            d.update(window=self.window, stride=self.stride)
        return d

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "LayerSpec":
        data = dict(d)
        kind = LayerKind(data.pop("kind"))
        return cls(kind, **data)


@dataclass(frozen=True, eq=False)
class LayerParams:
    weight: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True, eq=False)
class Model:
    """Immutable network: layer specs plus parameters of the dense/conv layers in order."""

    layers: Tuple[LayerSpec, ...]
    params: Tuple[LayerParams, ...]
    rng_seed: int
    input_shape: Tuple[int, ...]

    @property
    def param_layer_indices(self) -> Tuple[int, ...]:
        return tuple(i for i, spec in enumerate(self.layers) if spec.parameterized)

    @property
    def num_param_layers(self) -> int:
        return len(self.params)

    @property
    def num_classes(self) -> int:
        return self.layers[self.param_layer_indices[-1]].weight_shape()[0]

    def param_spec(self, layer: int) -> LayerSpec:
        """Spec of parameterized layer ``layer`` (1-based)."""
        return self.layers[self.param_layer_indices[layer - 1]]

    def num_parameters(self) -> int:
        return sum(p.weight.size + p.bias.size for p in self.params)


@dataclass(eq=False)
class ForwardTrace:
    model: Model
    activations: List[np.ndarray]  # activations[i] is the input of layers[i]; activations[-1] is the logits
    relu_masks: Dict[int, np.ndarray]
    pool_argmax: Dict[int, np.ndarray]
    probs: np.ndarray

    @property
    def logits(self) -> np.ndarray:
        return self.activations[-1]

    @property
    def batch_size(self) -> int:
        return int(self.activations[0].shape[0])


@dataclass(frozen=True, eq=False)
class LayerGradient:
    weight: np.ndarray
    bias: np.ndarray


@dataclass(frozen=True, eq=False)
class GradientRecord:
    layers: Tuple[LayerGradient, ...]
    batch_size: int = 0
    round: int = 0
    seed_kind: str = "loss"

    def layer(self, layer: int) -> LayerGradient:
        return self.layers[layer - 1]

    def flat(self, layer: int, *, include_bias: bool = True) -> np.ndarray:
        g = self.layer(layer)
        if include_bias:
            return np.concatenate([g.weight.ravel(), g.bias.ravel()])
        return g.weight.ravel().copy()

    def scaled(self, factor: float) -> "GradientRecord":
        return GradientRecord(
            layers=tuple(LayerGradient(g.weight * factor, g.bias * factor) for g in self.layers),
            batch_size=self.batch_size,
            round=self.round,
            seed_kind=self.seed_kind,
        )


@dataclass(eq=False)
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    properties: Dict[str, np.ndarray] = field(default_factory=dict)
    num_classes: int = 2

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    @property
    def feature_shape(self) -> Tuple[int, ...]:
        return tuple(int(s) for s in self.inputs.shape[1:])

    def subset(self, indices: Sequence[int] | np.ndarray) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            inputs=self.inputs[idx],
            labels=self.labels[idx],
            properties={k: v[idx] for k, v in self.properties.items()},
            num_classes=self.num_classes,
        )


@dataclass(frozen=True, eq=False)
class PropertySample:
    features: np.ndarray
    property: int
    layer: int
    round: int = 0
    batch_id: int = 0


@dataclass(frozen=True, eq=False)
class JacobianResult:
    layer: int
    jacobian: np.ndarray  # (weight count, d_y)
    grad_range: float


@dataclass(eq=False)
class SnapshotLog:
    rounds: List[int] = field(default_factory=list)
    models: List[Model] = field(default_factory=list)
    aggregates: List[GradientRecord] = field(default_factory=list)  # aggregates[t-1] produced round t

    def add(self, round_index: int, model: Model) -> None:
        if self.rounds and round_index <= self.rounds[-1]:
            raise SnapshotOrderError(f"snapshot rounds must increase: {round_index} after {self.rounds[-1]}")
        self.rounds.append(round_index)
        self.models.append(model)

    def __len__(self) -> int:
        return len(self.rounds)

    @property
    def final_model(self) -> Model:
        return self.models[-1]

    def strided(self, stride: int) -> List[Tuple[int, Model]]:
        pairs = list(zip(self.rounds, self.models))
        return pairs[:: max(1, stride)]


@dataclass(frozen=True)
class AttackLayerResult:
    layer: int
    property: str
    auc: float
    train_ce_nats: float
    n_train: int
    n_eval: int
    family: str
    seed: int
