"""Layer-wise leakage metrics: empirical V-information and Jacobian p-norm sensitivity."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .constants import RANGE_EPS
from .diagnostics import log_info, log_warning
from .errors import AllSamplesDegenerate, DegenerateProfile, EmptyInput, InvalidConfig, NotParameterizedLayer
from .models import JacobianResult, Model, PropertySample
from .predictors import PredictiveFamily, cross_entropy, fit_arrays, stack_samples
from .tensor_nn import backward, forward, loss_softmax_ce
from .worker import ordered_map

NORMS = ("F", "1", "inf")
_NORM_ALIASES = {"F": "F", "f": "F", "fro": "F", "frobenius": "F", "1": "1", "inf": "inf", "∞": "inf", "max": "inf"}
MIN_VINFO_SAMPLES = 20


def normalize_norm(norm: str) -> str:
    try:
        return _NORM_ALIASES[str(norm)]
    except KeyError:
        raise InvalidConfig(f"unknown norm {norm!r}; use F, 1 or inf") from None


def null_entropy(labels: Sequence[int] | np.ndarray) -> float:
    """Entropy (nats) of the empirical positive rate: the best constant predictor's cross-entropy."""
    y = np.asarray(labels, dtype=np.float64)
    if y.size == 0:
        raise EmptyInput("null_entropy of an empty label set")
    q = float(y.mean())
    if q <= 0.0 or q >= 1.0:
        return 0.0
    return -q * math.log(q) - (1.0 - q) * math.log(1.0 - q)


@dataclass(frozen=True)
class VInfoResult:
    v_info_nats: float
    null_nats: float
    conditional_nats: float
    n_train: int
    n_eval: int
    family: str
    evaluation: str


def _stratified_holdout(y: np.ndarray, eval_split: float, rng: np.random.Generator) -> Tuple[np.ndarray, np.ndarray]:
    train, held = [], []
    for v in (0, 1):
        idx = rng.permutation(np.flatnonzero(y == v))
        n_eval = min(int(round(eval_split * idx.size)), max(idx.size - 1, 0))
        held.append(idx[:n_eval])
        train.append(idx[n_eval:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(held))


def v_information(
    samples: Sequence[PropertySample],
    family: PredictiveFamily,
    eval_split: float = 0.3,
    seed: int = 0,
    *,
    evaluation: str = "heldout",
    clamp_zero: bool = False,
) -> VInfoResult:
    """Null entropy minus the fitted predictor's cross-entropy, both on the evaluation part."""
    if len(samples) < MIN_VINFO_SAMPLES:
        raise EmptyInput(f"v_information needs at least {MIN_VINFO_SAMPLES} samples, got {len(samples)}")
    if not 0.0 < eval_split < 1.0:
        raise InvalidConfig(f"eval_split must lie in (0, 1), got {eval_split}")
    if evaluation not in ("heldout", "in_sample"):
        raise InvalidConfig(f"evaluation must be heldout or in_sample, got {evaluation!r}")
    x, y = stack_samples(samples)
    if np.unique(y).size < 2:
        return VInfoResult(0.0, 0.0, 0.0, len(y), len(y), family.describe(), evaluation)

    if evaluation == "in_sample":
        train_idx = eval_idx = np.arange(y.size)
    else:
        train_idx, eval_idx = _stratified_holdout(y, eval_split, np.random.default_rng(seed))
    predictor = fit_arrays(x[train_idx], y[train_idx], family)
    null = null_entropy(y[eval_idx])
    conditional = cross_entropy(predictor.predict_proba(x[eval_idx]), y[eval_idx])
    v = null - conditional
    if clamp_zero:
        v = max(v, 0.0)
    return VInfoResult(v, null, conditional, int(train_idx.size), int(eval_idx.size), family.describe(), evaluation)


def _check_layer(model: Model, layer: int) -> None:
    if not 1 <= layer <= model.num_param_layers:
        raise NotParameterizedLayer(f"layer {layer} is not a parameterized layer (model has {model.num_param_layers})")


def _as_single(model: Model, sample: np.ndarray) -> np.ndarray:
    x = np.asarray(sample, dtype=np.float64)
    if x.shape == model.input_shape:
        x = x[None]
    return x


def all_layer_jacobians(
    model: Model,
    sample: np.ndarray,
    label: int,
    *,
    output_side: str = "logits",
    loss_scale: float = 1.0,
) -> List[JacobianResult]:
    """Jacobian of every layer's weight gradient w.r.t. the output, from d_y unit-seed backward passes."""
    x = _as_single(model, sample)
    if x.shape[0] != 1:
        raise InvalidConfig(f"jacobians are per sample; got a batch of {x.shape[0]}")
    if output_side not in ("logits", "probs"):
        raise InvalidConfig(f"output_side must be logits or probs, got {output_side!r}")
    trace = forward(model, x)
    d_y = trace.logits.shape[1]
    columns: List[List[np.ndarray]] = [[] for _ in model.params]
    for j in range(d_y):
        unit = np.zeros((1, d_y))
        unit[0, j] = 1.0
        rec = backward(model, trace, unit, seed_kind=f"unit:{j}")
        for l, g in enumerate(rec.layers):
            columns[l].append(g.weight.ravel())
    _, seed = loss_softmax_ce(trace, np.array([label]))
    loss_rec = backward(model, trace, seed)

    softmax_jac = None
    if output_side == "probs":
        p = trace.probs[0]
        softmax_jac = np.diag(p) - np.outer(p, p)
    results = []
    for l, cols in enumerate(columns):
        jac = np.stack(cols, axis=1) * loss_scale
        if softmax_jac is not None:
            jac = jac @ softmax_jac
        g = loss_rec.layers[l].weight * loss_scale
        results.append(JacobianResult(layer=l + 1, jacobian=jac, grad_range=float(g.max() - g.min())))
    return results


def jacobian_of_gradients(
    model: Model,
    sample: np.ndarray,
    label: int,
    layer: int,
    *,
    output_side: str = "logits",
    loss_scale: float = 1.0,
) -> JacobianResult:
    _check_layer(model, layer)
    return all_layer_jacobians(model, sample, label, output_side=output_side, loss_scale=loss_scale)[layer - 1]


def psi(weight_count: int, norm: str) -> float:
    norm = normalize_norm(norm)
    if norm == "F":
        return math.sqrt(weight_count)
    if norm == "1":
        return float(weight_count)
    return 1.0


def matrix_norm(jac: np.ndarray, norm: str) -> float:
    norm = normalize_norm(norm)
    a = np.abs(jac).ravel()
    if norm == "F":
        return float(np.sqrt(np.sum(a * a)))
    if norm == "1":
        return float(np.sum(a))
    return float(np.max(a))


@dataclass(frozen=True)
class SensitivityResult:
    layer: int
    norm: str
    value: float  # NaN when every sample was degenerate
    num_samples: int
    skipped_degenerate: int

    @property
    def degenerate(self) -> bool:
        return self.num_samples == 0


def layer_sensitivities(
    model: Model,
    inputs: np.ndarray,
    labels: np.ndarray,
    *,
    layers: Optional[Sequence[int]] = None,
    norms: Sequence[str] = NORMS,
    output_side: str = "logits",
    loss_scale: float = 1.0,
    max_workers: int = 1,
) -> Dict[Tuple[int, str], SensitivityResult]:
    """Sensitivity for every (layer, norm) pair from one sweep of per-sample Jacobians."""
    x = np.asarray(inputs, dtype=np.float64)
    y = np.asarray(labels)
    if x.shape[0] < 1 or x.shape[0] != y.shape[0]:
        raise EmptyInput(f"need K >= 1 samples with matching labels, got {x.shape[0]} inputs and {y.shape[0]} labels")
    wanted = list(layers) if layers is not None else list(range(1, model.num_param_layers + 1))
    for layer in wanted:
        _check_layer(model, layer)
    norm_keys = list(dict.fromkeys(normalize_norm(n) for n in norms))

    def per_sample(k: int) -> List[JacobianResult]:
        return all_layer_jacobians(model, x[k : k + 1], int(y[k]), output_side=output_side, loss_scale=loss_scale)

    sweeps = ordered_map(per_sample, range(x.shape[0]), max_workers=max_workers, label="jacobians")
    out: Dict[Tuple[int, str], SensitivityResult] = {}
    for layer in wanted:
        weight_count = model.params[layer - 1].weight.size
        totals = {n: 0.0 for n in norm_keys}
        kept = skipped = 0
        for sweep in sweeps:
            res = sweep[layer - 1]
            if res.grad_range <= RANGE_EPS:
                skipped += 1
                continue
            kept += 1
            scaled = res.jacobian / res.grad_range
            for n in norm_keys:
                totals[n] += matrix_norm(scaled, n)
        if skipped:
            log_warning("sensitivity layer=%s skipped %s degenerate samples of %s", layer, skipped, len(sweeps))
        for n in norm_keys:
            value = totals[n] / (kept * psi(weight_count, n)) if kept else float("nan")
            out[(layer, n)] = SensitivityResult(layer, n, value, kept, skipped)
    log_info("layer_sensitivities samples=%s layers=%s norms=%s", x.shape[0], wanted, norm_keys)
    return out


def sensitivity(
    model: Model,
    inputs: np.ndarray,
    labels: np.ndarray,
    layer: int,
    norm: str = "F",
    *,
    output_side: str = "logits",
    loss_scale: float = 1.0,
) -> float:
    key = (layer, normalize_norm(norm))
    res = layer_sensitivities(
        model, inputs, labels, layers=[layer], norms=[norm], output_side=output_side, loss_scale=loss_scale
    )[key]
    if res.degenerate:
        raise AllSamplesDegenerate(f"layer {layer}: every sample has gradient range <= {RANGE_EPS}")
    return res.value


def normalized_sensitivity_profile(values: Sequence[float]) -> List[float]:
    """Min-max normalization of per-layer values onto [0, 1]."""
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        raise DegenerateProfile("a profile needs at least two layers")
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        raise DegenerateProfile("all layers have the same sensitivity")
    return [float(x) for x in (v - lo) / (hi - lo)]
