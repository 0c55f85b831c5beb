"""Passive property-inference adversary: gradient datasets from snapshots, per-layer attacks, AUC."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, replace
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from .constants import DEFAULT_BATCH_SIZE
from .diagnostics import log_info, log_warning
from .errors import InvalidConfig, LengthMismatch, MissingPropertyValue, SingleClass
from .models import AttackLayerResult, LabeledDataset, PropertySample, SnapshotLog
from .predictors import PredictiveFamily, cross_entropy, stack_samples, train_predictor
from .seeding import derive_seeds
from .tensor_nn import loss_gradients
from .worker import ordered_map


@dataclass
class AttackConfig:
    property: str = "property"
    layers: Optional[List[int]] = None  # None: every parameterized layer
    family: PredictiveFamily = field(default_factory=PredictiveFamily)
    batches_per_snapshot: int = 20
    eval_batches_per_snapshot: Optional[int] = None  # defaults to batches_per_snapshot
    batch_size: int = DEFAULT_BATCH_SIZE
    aux_fraction: float = 0.3
    mixing: float = 0.0  # share of each batch drawn from the other property value
    condition_on_label: bool = True  # every batch comes from a single main class
    main_label: Optional[int] = None  # None: chosen from the data
    snapshot_stride: int = 1
    include_bias: bool = True
    shuffle_labels: bool = False
    seed: int = 0
    max_workers: int = 1

    def validate(self) -> None:
        if self.batches_per_snapshot < 1 or self.batch_size < 1 or self.snapshot_stride < 1:
            raise InvalidConfig("batches_per_snapshot, batch_size and snapshot_stride must be >= 1")
        if self.eval_batches_per_snapshot is not None and self.eval_batches_per_snapshot < 1:
            raise InvalidConfig("eval_batches_per_snapshot must be >= 1")
        if not 0.0 < self.aux_fraction < 1.0:
            raise InvalidConfig("aux_fraction must lie in (0, 1)")
        if not 0.0 <= self.mixing < 0.5:
            raise InvalidConfig("mixing must lie in [0, 0.5)")
        if self.main_label is not None and (isinstance(self.main_label, bool) or not isinstance(self.main_label, int) or self.main_label < 0):
            raise InvalidConfig(f"main_label must be an integer >= 0, got {self.main_label!r}")
        self.family.validate()

    def to_dict(self) -> dict:
        return asdict(self)


def choose_main_label(pairs: Iterable[Tuple[np.ndarray, np.ndarray]]) -> Optional[int]:
    """Main class whose rarer property value is most common across every (labels, props) pair.

    Returns None when no class holds both property values in every pair.
    """
    pairs = [(np.asarray(y), np.asarray(p)) for y, p in pairs]
    if not pairs:
        return None
    best, best_count = None, 0
    for c in np.unique(np.concatenate([y for y, _ in pairs])):
        count = min(int(np.sum((y == c) & (p == v))) for y, p in pairs for v in (0, 1))
        if count > best_count:
            best, best_count = int(c), count
    return best


def resolve_label_condition(config: AttackConfig, datasets: Sequence[LabeledDataset]) -> AttackConfig:
    """Fix the main class of the attack batches once, so every dataset is sampled from the same class."""
    if not config.condition_on_label or config.main_label is not None:
        return config
    if any(config.property not in d.properties for d in datasets):
        return config
    label = choose_main_label((d.labels, d.properties[config.property]) for d in datasets)
    if label is None:
        log_warning("property=%s: no main class holds both property values; batches mix main classes", config.property)
        return replace(config, condition_on_label=False)
    log_info("property=%s: attack batches drawn from main class %s", config.property, label)
    return replace(config, main_label=label)


def _plan_batches(
    props: np.ndarray,
    rounds: Sequence[int],
    batches: int,
    config: AttackConfig,
    rng: np.random.Generator,
    eligible: Optional[np.ndarray] = None,
) -> List[Tuple[int, int, int, np.ndarray]]:
    keep = np.ones(props.shape, dtype=bool) if eligible is None else eligible
    pools = [np.flatnonzero((props == v) & keep) for v in (0, 1)]
    n_other = int(round(config.mixing * config.batch_size))
    n_main = config.batch_size - n_other
    plan = []
    counter = 0
    for snap in range(len(rounds)):
        for b in range(batches):
            value = counter % 2
            counter += 1
            main = rng.choice(pools[value], n_main, replace=pools[value].size < n_main)
            parts = [main]
            if n_other:
                other = pools[1 - value]
                parts.append(rng.choice(other, n_other, replace=other.size < n_other))
            plan.append((snap, b, value, np.concatenate(parts)))
    return plan


def _eligible_rows(data: LabeledDataset, props: np.ndarray, config: AttackConfig) -> Optional[np.ndarray]:
    if not config.condition_on_label:
        return None
    label = config.main_label
    if label is None:
        label = choose_main_label([(data.labels, props)])
        if label is None:
            log_warning("property=%s: no main class holds both property values; batches mix main classes", config.property)
            return None
    rows = data.labels == label
    for v in (0, 1):
        if not np.any(rows & (props == v)):
            raise MissingPropertyValue(f"main class {label} has no samples with {config.property}={v}")
    return rows


def collect_gradient_samples(
    snapshots: SnapshotLog,
    data: LabeledDataset,
    config: AttackConfig,
    *,
    batches_per_snapshot: Optional[int] = None,
    seed: Optional[int] = None,
) -> Dict[int, List[PropertySample]]:
    """Loss-seeded layer gradients of property-pure batches on every retained snapshot.

    With ``condition_on_label`` every batch is drawn from one main class, so the
    batches of both property values share the same label composition.
    """
    if not len(snapshots):
        raise InvalidConfig("snapshot log is empty")
    if config.property not in data.properties:
        raise MissingPropertyValue(f"dataset has no property {config.property!r}")
    props = np.asarray(data.properties[config.property])
    rng = np.random.default_rng(config.seed if seed is None else seed)
    if config.shuffle_labels:
        props = rng.permutation(props)
    if not (np.any(props == 0) and np.any(props == 1)):
        raise MissingPropertyValue(f"property {config.property!r} needs both values in the data")
    eligible = _eligible_rows(data, props, config)

    retained = snapshots.strided(config.snapshot_stride)
    model0 = retained[0][1]
    layers = config.layers or list(range(1, model0.num_param_layers + 1))
    batches = batches_per_snapshot or config.batches_per_snapshot
    plan = _plan_batches(props, [r for r, _ in retained], batches, config, rng, eligible)

    def batch_gradient(item) -> Tuple[int, int, int, List[np.ndarray]]:
        snap, b, value, idx = item
        round_index, model = retained[snap]
        _, rec = loss_gradients(model, data.inputs[idx], data.labels[idx], round_index=round_index)
        return round_index, b, value, [rec.flat(l, include_bias=config.include_bias) for l in layers]

    computed = ordered_map(batch_gradient, plan, max_workers=config.max_workers, label="attack-batches")
    out: Dict[int, List[PropertySample]] = {l: [] for l in layers}
    for round_index, b, value, feats in computed:
        for l, f in zip(layers, feats):
            out[l].append(PropertySample(features=f, property=value, layer=l, round=round_index, batch_id=b))
    log_info(
        "collect_gradient_samples property=%s snapshots=%s batches=%s layers=%s samples_per_layer=%s",
        config.property,
        len(retained),
        batches,
        layers,
        len(plan),
    )
    return out


def auc(scores: Sequence[float] | np.ndarray, labels: Sequence[int] | np.ndarray) -> float:
    """Mann-Whitney AUC: share of (positive, negative) pairs ranked correctly, ties counted half."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape:
        raise LengthMismatch(f"{s.size} scores for {y.size} labels")
    pos = y == 1
    n_pos = int(pos.sum())
    n_neg = int(y.size - n_pos)
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("AUC needs both positive and negative labels")
    ranks = rankdata(s, method="average")
    u = float(ranks[pos].sum()) - n_pos * (n_pos + 1) / 2.0
    return u / (n_pos * n_neg)


def run_attack(
    train_samples: Sequence[PropertySample],
    eval_samples: Sequence[PropertySample],
    family: PredictiveFamily,
    *,
    property_name: str = "",
    seed: int = 0,
) -> AttackLayerResult:
    _, y_train = stack_samples(train_samples)
    x_eval, y_eval = stack_samples(eval_samples)
    if np.unique(y_train).size < 2 or np.unique(y_eval).size < 2:
        raise SingleClass("attack train and eval sets must both contain two property values")
    family = replace(family, seed=seed)
    predictor = train_predictor(train_samples, family)
    x_train, _ = stack_samples(train_samples)
    train_ce = cross_entropy(predictor.predict_proba(x_train), y_train)
    score = auc(predictor.predict_proba(x_eval), y_eval)
    return AttackLayerResult(
        layer=train_samples[0].layer,
        property=property_name,
        auc=score,
        train_ce_nats=train_ce,
        n_train=len(train_samples),
        n_eval=len(eval_samples),
        family=family.describe(),
        seed=seed,
    )


def run_layer_attacks(
    snapshots: SnapshotLog,
    aux: LabeledDataset,
    victim: LabeledDataset,
    config: AttackConfig,
) -> List[AttackLayerResult]:
    """Train on auxiliary-data gradients, score on the victim's gradients, one attack per layer."""
    config.validate()
    config = resolve_label_condition(config, [aux, victim])
    collect_seed, eval_seed, attack_seed = derive_seeds(config.seed, 3, salt=7)
    train = collect_gradient_samples(snapshots, aux, config, seed=collect_seed)
    eval_config = replace(config, shuffle_labels=False)
    held = collect_gradient_samples(
        snapshots, victim, eval_config, batches_per_snapshot=config.eval_batches_per_snapshot, seed=eval_seed
    )
    layers = sorted(train)
    seeds = derive_seeds(attack_seed, len(layers))

    def attack(i: int) -> AttackLayerResult:
        return run_attack(train[layers[i]], held[layers[i]], config.family, property_name=config.property, seed=seeds[i])

    results = ordered_map(attack, range(len(layers)), max_workers=config.max_workers, label="layer-attacks")
    log_info("run_layer_attacks property=%s aucs=%s", config.property, [round(r.auc, 4) for r in results])
    return results
