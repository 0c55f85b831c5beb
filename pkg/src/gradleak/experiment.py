"""End-to-end experiment: datagen, FL training, per-layer metrics, per-layer attacks, report."""
from __future__ import annotations

import math
from contextlib import contextmanager
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, Iterator, List, Optional, Sequence

import numpy as np
import pandas as pd
import scipy

from . import __version__
from .config import ExperimentConfig, MetricsConfig
from .datagen import generate, load_csv, split
from .diagnostics import log_info, log_warning
from .errors import DegenerateProfile, InvalidConfig, MissingPropertyValue, StageError
from .fedsim import accuracy, partition, train
from .leak_metrics import layer_sensitivities, normalized_sensitivity_profile, v_information
from .models import LabeledDataset, Model, SnapshotLog
from .pia import AttackConfig, collect_gradient_samples, resolve_label_condition, run_layer_attacks
from .predictors import PredictiveFamily, reducer_for
from .report import (
    ATTACK_COLUMNS,
    METRIC_COLUMNS,
    NOT_APPLICABLE,
    LayerRiskReport,
    build_report,
    vinfo_metric,
    write_report,
)
from .seeding import derive_seed, derive_seeds
from .snapshot import save_snapshot_log
from .worker import ordered_map
from .zoo import build_preset

SEED_STREAMS = ("data", "split", "model", "fl", "metrics", "attack")
REPORT_SALT = 99


@contextmanager
def stage(name: str) -> Iterator[None]:
    """Attribute any failure inside the block to pipeline stage ``name``."""
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        raise StageError(name, e) from e


@dataclass(eq=False)
class TrialOutcome:
    trial: int
    seed: int
    seeds: Dict[str, int]
    metric_rows: List[Dict[str, Any]] = field(default_factory=list)
    attack_rows: List[Dict[str, Any]] = field(default_factory=list)
    main_task_accuracy: float = float("nan")
    snapshots: int = 0
    layer_kinds: List[str] = field(default_factory=list)

    def manifest_entry(self) -> Dict[str, Any]:
        return {
            "trial": self.trial,
            "seed": self.seed,
            "seeds": self.seeds,
            "main_task_accuracy": self.main_task_accuracy,
            "snapshots": self.snapshots,
        }


def layer_kinds(model: Model) -> List[str]:
    return [model.param_spec(l).kind.value for l in range(1, model.num_param_layers + 1)]


def load_data(config: ExperimentConfig, seed: int) -> LabeledDataset:
    if config.csv is not None:
        src = config.csv
        return load_csv(Path(src.path), src.label_column, src.property_columns, src.feature_columns)
    return generate(replace(config.data, seed=seed))


def resolve_properties(config: ExperimentConfig, dataset: LabeledDataset) -> List[str]:
    names = list(config.properties) if config.properties else list(dataset.properties)
    if not names:
        raise MissingPropertyValue("dataset carries no property columns")
    for name in names:
        if name not in dataset.properties:
            raise MissingPropertyValue(f"dataset has no property {name!r}")
    baseline = config.baseline_property
    if baseline is not None and baseline not in names:
        raise InvalidConfig(f"baseline_property {baseline!r} is not among the measured properties {names}")
    return names


def measure_sensitivity_rows(
    model: Model,
    data: LabeledDataset,
    metrics: MetricsConfig,
    seed: int,
    *,
    row_seed: Optional[int] = None,
    max_workers: int = 1,
) -> List[Dict[str, Any]]:
    """Sensitivity per layer and norm on K victim samples, plus the normalized profile rows."""
    rng = np.random.default_rng(seed)
    k = min(metrics.sensitivity_samples, len(data))
    idx = np.sort(rng.choice(len(data), size=k, replace=False))
    results = layer_sensitivities(
        model,
        data.inputs[idx],
        data.labels[idx],
        norms=metrics.norms,
        output_side=metrics.output_side,
        loss_scale=metrics.loss_scale,
        max_workers=max_workers,
    )
    kinds = layer_kinds(model)
    layers = list(range(1, model.num_param_layers + 1))
    rows: List[Dict[str, Any]] = []
    for norm in metrics.norms:
        for l in layers:
            res = results[(l, norm)]
            rows.append(
                _metric_row(l, kinds, "sensitivity", norm, res.value, res.num_samples, res.skipped_degenerate, NOT_APPLICABLE, row_seed)
            )
    for norm in metrics.norms:
        values = [results[(l, norm)].value for l in layers]
        try:
            if any(math.isnan(v) for v in values):
                raise DegenerateProfile("a layer has no non-degenerate samples")
            profile = normalized_sensitivity_profile(values)
        except DegenerateProfile as e:
            log_warning("normalized profile norm=%s unavailable: %s", norm, e)
            profile = [float("nan")] * len(layers)
        for l, v in zip(layers, profile):
            res = results[(l, norm)]
            rows.append(
                _metric_row(l, kinds, "sensitivity_normalized", norm, v, res.num_samples, res.skipped_degenerate, NOT_APPLICABLE, row_seed)
            )
    return rows


def measure_vinfo_rows(
    model: Model,
    data: LabeledDataset,
    properties: Sequence[str],
    metrics: MetricsConfig,
    family: PredictiveFamily,
    attack: AttackConfig,
    seed: int,
    *,
    round_index: int = 0,
    row_seed: Optional[int] = None,
    aux: Optional[LabeledDataset] = None,
) -> List[Dict[str, Any]]:
    """V-information from each layer's gradients to each property, on the given snapshot.

    Batches follow the attack's main-class choice; pass ``aux`` so that choice matches the attack's.
    """
    final = SnapshotLog()
    final.add(round_index, model)
    kinds = layer_kinds(model)
    rows: List[Dict[str, Any]] = []
    prop_seeds = derive_seeds(seed, len(properties))
    for name, s in zip(properties, prop_seeds):
        collect = replace(attack, property=name, layers=None, snapshot_stride=1, shuffle_labels=False, mixing=0.0)
        collect = resolve_label_condition(collect, [d for d in (aux, data) if d is not None])
        samples = collect_gradient_samples(final, data, collect, batches_per_snapshot=metrics.vinfo_batches, seed=s)
        for l in sorted(samples):
            res = v_information(
                samples[l],
                family,
                metrics.eval_split,
                seed=derive_seed(s, l),
                evaluation=metrics.evaluation,
                clamp_zero=metrics.clamp_zero,
            )
            rows.append(
                _metric_row(l, kinds, vinfo_metric(name), NOT_APPLICABLE, res.v_info_nats, len(samples[l]), 0, res.family, row_seed)
            )
    return rows


def _metric_row(layer, kinds, metric_name, norm, value, num_samples, skipped, family, seed) -> Dict[str, Any]:
    return {
        "layer_index": layer,
        "layer_kind": kinds[layer - 1],
        "metric_name": metric_name,
        "norm": norm,
        "value": float(value),
        "num_samples": int(num_samples),
        "skipped_degenerate": int(skipped),
        "family": family,
        "seed": seed,
    }


def run_trial(config: ExperimentConfig, trial: int, trial_seed: int, out_dir: Optional[Path] = None) -> TrialOutcome:
    seeds = dict(zip(SEED_STREAMS, derive_seeds(trial_seed, len(SEED_STREAMS))))
    outcome = TrialOutcome(trial=trial, seed=trial_seed, seeds=seeds)
    log_info("trial start index=%s seed=%s", trial, trial_seed)

    with stage("datagen"):
        dataset = load_data(config, seeds["data"])
        properties = resolve_properties(config, dataset)
        a = config.attack.aux_fraction
        aux, federated = split(dataset, [a, 1.0 - a], seeds["split"])

    with stage("train"):
        model = build_preset(config.model, dataset.feature_shape, dataset.num_classes, seeds["model"])
        log_info("model preset=%s parameters=%s layers=%s", config.model, model.num_parameters(), layer_kinds(model))
        fl = replace(config.fl, seed=seeds["fl"])
        log = train(fl, model, federated)
        victim = partition(federated, fl.num_clients, fl.seed)[0].data
        outcome.main_task_accuracy = accuracy(log.final_model, federated)
        outcome.snapshots = len(log)
        outcome.layer_kinds = layer_kinds(model)
        if config.save_snapshots and out_dir is not None:
            save_snapshot_log(log, out_dir / f"trial_{trial}", {"trial": trial, "seed": trial_seed, "fl": fl.to_dict()})

    metrics_family = config.metrics.family
    attack_family = config.attack.family
    if config.reducer is not None:
        reducer = reducer_for(model, config.reducer)
        metrics_family = replace(metrics_family, reducer=reducer)
        attack_family = replace(attack_family, reducer=reducer)

    with stage("measure"):
        final_round = log.rounds[-1]
        outcome.metric_rows += measure_sensitivity_rows(
            log.final_model, victim, config.metrics, seeds["metrics"], row_seed=trial_seed, max_workers=config.attack.max_workers
        )
        outcome.metric_rows += measure_vinfo_rows(
            log.final_model,
            victim,
            properties,
            config.metrics,
            metrics_family,
            config.attack,
            derive_seed(seeds["metrics"], 1),
            round_index=final_round,
            row_seed=trial_seed,
            aux=aux,
        )

    with stage("attack"):
        attack_seeds = derive_seeds(seeds["attack"], len(properties))
        for name, s in zip(properties, attack_seeds):
            attack = replace(config.attack, property=name, family=attack_family, seed=s)
            for res in run_layer_attacks(log, aux, victim, attack):
                outcome.attack_rows.append(
                    {
                        "layer_index": res.layer,
                        "property": res.property,
                        "auc": res.auc,
                        "train_ce_nats": res.train_ce_nats,
                        "n_train": res.n_train,
                        "n_eval": res.n_eval,
                        "family": res.family,
                        "seed": trial_seed,
                    }
                )
    log_info("trial finished index=%s accuracy=%.4f metric_rows=%s attack_rows=%s", trial, outcome.main_task_accuracy, len(outcome.metric_rows), len(outcome.attack_rows))
    return outcome


def report_seed(master_seed: int) -> int:
    """Seed of the permutation tests, shared by 'run' and 'report'."""
    return derive_seed(master_seed, REPORT_SALT)


def versions() -> Dict[str, str]:
    return {"gradleak": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "pandas": pd.__version__}


def run_experiment(config: ExperimentConfig, out_dir: Optional[Path] = None) -> LayerRiskReport:
    """Run every trial, aggregate them into a LayerRiskReport and write it to ``out_dir`` when given."""
    config.validate()
    trial_seeds = derive_seeds(config.seed, config.trials)
    log_info("run_experiment start name=%s trials=%s model=%s seed=%s", config.name, config.trials, config.model, config.seed)
    outcomes = ordered_map(
        lambda i: run_trial(config, i, trial_seeds[i], out_dir),
        range(config.trials),
        max_workers=config.max_workers,
        label="trials",
    )

    with stage("report"):
        metrics = pd.DataFrame([r for o in outcomes for r in o.metric_rows], columns=METRIC_COLUMNS)
        attacks = pd.DataFrame([r for o in outcomes for r in o.attack_rows], columns=ATTACK_COLUMNS)
        properties = list(dict.fromkeys(attacks["property"]))
        baseline = config.baseline_property or properties[0]
        kinds = outcomes[0].layer_kinds
        manifest = {
            "name": config.name,
            "master_seed": config.seed,
            "versions": versions(),
            "config": config.to_dict(),
            "properties": properties,
            "baseline_property": baseline,
            "layers": [{"layer_index": i + 1, "layer_kind": k} for i, k in enumerate(kinds)],
            "trials": [o.manifest_entry() for o in outcomes],
        }
        report = build_report(
            metrics,
            attacks,
            manifest,
            properties=properties,
            baseline=baseline,
            norms=config.metrics.norms,
            num_permutations=config.metrics.num_permutations,
            seed=report_seed(config.seed),
        )
        if out_dir is not None:
            write_report(report, out_dir)
    log_info("run_experiment finished name=%s trials=%s", config.name, config.trials)
    return report
