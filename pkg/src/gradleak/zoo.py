from __future__ import annotations

from typing import Callable, Dict, List, Sequence, Tuple

from .errors import IncompatibleShapes, UnknownPreset
from .models import LayerSpec, Model
from .tensor_nn import build_model, infer_shapes

FCNET_WIDTH = 32
FCNET_HIDDEN_LAYERS = 8


def _as_shape(input_shape: int | Sequence[int]) -> Tuple[int, ...]:
    if isinstance(input_shape, int):
        return (input_shape,)
    return tuple(int(s) for s in input_shape)


def _with_head(body: List[LayerSpec], input_shape: Tuple[int, ...], widths: Sequence[int], num_classes: int) -> List[LayerSpec]:
    layers = list(body) + [LayerSpec.flatten()]
    (flat,) = infer_shapes(layers, input_shape)[-1]
    for width in widths:
        layers += [LayerSpec.dense(flat, width), LayerSpec.relu()]
        flat = width
    layers.append(LayerSpec.dense(flat, num_classes))
    return layers


def _conv_stack(in_channels: int, filters: Sequence[int], pool_after: Sequence[int]) -> List[LayerSpec]:
    layers: List[LayerSpec] = []
    c = in_channels
    for i, f in enumerate(filters):
        layers += [LayerSpec.conv2d(c, f, 3), LayerSpec.relu()]
        if i in pool_after:
            layers.append(LayerSpec.maxpool2d(2))
        c = f
    return layers


def fcnet(input_shape: Tuple[int, ...], num_classes: int) -> List[LayerSpec]:
    layers: List[LayerSpec] = []
    if len(input_shape) != 1:
        layers.append(LayerSpec.flatten())
    (width,) = infer_shapes(layers, input_shape)[-1] if layers else input_shape
    for _ in range(FCNET_HIDDEN_LAYERS):
        layers += [LayerSpec.dense(width, FCNET_WIDTH), LayerSpec.relu()]
        width = FCNET_WIDTH
    layers.append(LayerSpec.dense(width, num_classes))
    return layers


def _require_image(name: str, input_shape: Tuple[int, ...]) -> None:
    if len(input_shape) != 3:
        raise IncompatibleShapes(f"{name} needs an image input shape (C, H, W), got {input_shape}")


def alexnet_mini(input_shape: Tuple[int, ...], num_classes: int) -> List[LayerSpec]:
    _require_image("alexnet-mini", input_shape)
    body = _conv_stack(input_shape[0], (16, 32, 64), pool_after=(0, 1, 2))
    return _with_head(body, input_shape, (256,), num_classes)


def vgg11_mini(input_shape: Tuple[int, ...], num_classes: int) -> List[LayerSpec]:
    _require_image("vgg11-mini", input_shape)
    body = _conv_stack(input_shape[0], (16, 16, 16, 16, 32, 32, 64, 64), pool_after=(5, 6, 7))
    return _with_head(body, input_shape, (256, 128), num_classes)


def convnet_small(input_shape: Tuple[int, ...], num_classes: int) -> List[LayerSpec]:
    """Two conv layers and two dense layers; the desk-scale layer-ranking model."""
    _require_image("convnet-small", input_shape)
    body = _conv_stack(input_shape[0], (8, 16), pool_after=(0, 1))
    return _with_head(body, input_shape, (32,), num_classes)


PRESETS: Dict[str, Callable[[Tuple[int, ...], int], List[LayerSpec]]] = {
    "fcnet": fcnet,
    "alexnet-mini": alexnet_mini,
    "vgg11-mini": vgg11_mini,
    "convnet-small": convnet_small,
}


def model_zoo(name: str, input_shape: int | Sequence[int], num_classes: int) -> List[LayerSpec]:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise UnknownPreset(f"unknown model preset {name!r}; choose from {sorted(PRESETS)}") from None
    if num_classes < 2:
        raise IncompatibleShapes(f"num_classes must be >= 2, got {num_classes}")
    return factory(_as_shape(input_shape), num_classes)


def build_preset(name: str, input_shape: int | Sequence[int], num_classes: int, seed: int) -> Model:
    shape = _as_shape(input_shape)
    return build_model(model_zoo(name, shape, num_classes), seed, input_shape=shape)
