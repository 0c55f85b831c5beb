from __future__ import annotations

import argparse
import json
import logging
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import pandas as pd

from .config import ExperimentConfig, config_from_dict, load_config
from .constants import EXIT_OK
from .datagen import PropertyConfig, generate, load_csv, load_dataset, save_dataset, split, synth_config_to_dict
from .diagnostics import enable_console, log_info
from .errors import ConfigError, InvalidConfig
from .experiment import (
    layer_kinds,
    measure_sensitivity_rows,
    measure_vinfo_rows,
    report_seed,
    run_experiment,
)
from .fedsim import accuracy, partition, train
from .leak_metrics import NORMS, normalize_norm
from .pia import run_layer_attacks
from .predictors import parse_family, reducer_for
from .report import ATTACK_COLUMNS, METRIC_COLUMNS, build_report, load_run_tables, write_report
from .snapshot import load_snapshot_log, save_snapshot_log
from .state import load_last_run, save_last_run
from .zoo import PRESETS, build_preset

DEFAULT_OUT_DIR = "gradleak-out"


def _common() -> argparse.ArgumentParser:
    # defaults are suppressed so the flags work before or after the subcommand
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="Master seed (overrides the config file)")
    p.add_argument("--out-dir", type=str, default=argparse.SUPPRESS, help=f"Output directory (default: {DEFAULT_OUT_DIR})")
    p.add_argument("--config", type=str, default=argparse.SUPPRESS, help="JSON experiment config file")
    p.add_argument("--verbose", action="store_true", default=argparse.SUPPRESS, help="Mirror the session log to stderr")
    return p


def _int_list(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _layers(text: str) -> Optional[List[int]]:
    return None if text == "all" else _int_list(text)


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    p = argparse.ArgumentParser(
        prog="gradleak",
        description="Layer-wise property-leakage lab for simulated federated learning",
        parents=[common],
    )
    sub = p.add_subparsers(dest="command", required=True)

    d = sub.add_parser("datagen", parents=[common], help="Generate a planted-property dataset or convert a CSV")
    d.add_argument("--num-samples", type=int, help="Number of samples")
    d.add_argument("--feature-dim", type=int, help="Vector feature dimension")
    d.add_argument("--image-shape", type=_int_list, help="C,H,W for image-mode data")
    d.add_argument("--signal-strength", type=float, help="Planted property signal s (first property)")
    d.add_argument("--correlation", type=float, help="Property correlation with the main label (first property)")
    d.add_argument("--csv", type=str, help="Read a CSV instead of generating")
    d.add_argument("--label-column", type=str, default="label")
    d.add_argument("--property-columns", type=str, default="", help="Comma-separated binary property columns")
    d.add_argument("--out", type=str, help="Dataset file (default: <out-dir>/dataset.fldata)")

    t = sub.add_parser("train", parents=[common], help="Train under FL and save the snapshot stream")
    t.add_argument("--data", type=str, required=True, help="Dataset file from 'datagen'")
    t.add_argument("--model", choices=sorted(PRESETS), help="Model preset")
    t.add_argument("--rounds", type=int)
    t.add_argument("--clients", type=int)
    t.add_argument("--algorithm", choices=["fedsgd", "fedavg"])
    t.add_argument("--lr", type=float)
    t.add_argument("--batch-size", type=int)
    t.add_argument("--aux-fraction", type=float, help="Share held out as the adversary's auxiliary data")

    m = sub.add_parser("measure", help="Per-layer leakage metrics on the final snapshot")
    msub = m.add_subparsers(dest="metric", required=True)
    for name, helptext in (("vinfo", "Empirical V-information per layer"), ("sensitivity", "Jacobian norm sensitivity per layer")):
        mp = msub.add_parser(name, parents=[common], help=helptext)
        mp.add_argument("--snapshots", type=str, required=True, help="Run directory written by 'train'")
        mp.add_argument("--data", type=str, help="Dataset (default: <snapshots>/victim.fldata)")
        mp.add_argument("--out", type=str, help="CSV output (default: <out-dir>/<metric>.csv)")
        if name == "vinfo":
            mp.add_argument("--property", type=str, help="Property name (default: all)")
            mp.add_argument("--family", type=str, help="logistic, constant or mlp(W,D)")
            mp.add_argument("--reducer", type=str, help="auto, none, pool_max(k), pool_mean(k), random_projection(d)")
            mp.add_argument("--evaluation", choices=["heldout", "in_sample"])
            mp.add_argument("--batches", type=int, help="Property-pure batches on the final snapshot")
            mp.add_argument("--clamp-zero", action="store_true", help="Clamp negative estimates to 0")
        else:
            mp.add_argument("--samples", type=int, help="Number of samples K")
            mp.add_argument("--norm", type=str, default="all", help="F, 1, inf or all")
            mp.add_argument("--output-side", choices=["logits", "probs"])

    a = sub.add_parser("attack", parents=[common], help="Per-layer property-inference attack scored by AUC")
    a.add_argument("--snapshots", type=str, required=True, help="Run directory written by 'train'")
    a.add_argument("--data", type=str, help="Auxiliary data (default: <snapshots>/aux.fldata)")
    a.add_argument("--victim-data", type=str, help="Victim data (default: <snapshots>/victim.fldata)")
    a.add_argument("--property", type=str, required=True)
    a.add_argument("--layers", type=_layers, default=None, help="'all' or comma-separated 1-based layer ids")
    a.add_argument("--family", type=str, help="logistic, constant or mlp(W,D)")
    a.add_argument("--reducer", type=str, help="auto, none, pool_max(k), pool_mean(k), random_projection(d)")
    a.add_argument("--batches", type=int, help="Attack batches per snapshot")
    a.add_argument("--snapshot-stride", type=int)
    a.add_argument("--mixing", type=float, help="Share of each batch drawn from the other property value")
    a.add_argument("--shuffle-labels", action="store_true", help="Permute property labels (no-signal control)")
    a.add_argument("--main-label", type=int, help="Draw every attack batch from this main class (default: chosen from the data)")
    a.add_argument("--mix-labels", action="store_true", help="Let attack batches mix main classes")
    a.add_argument("--out", type=str, help="CSV output (default: <out-dir>/attack.csv)")

    r = sub.add_parser("report", parents=[common], help="Rebuild summary and correlations from a run directory")
    r.add_argument("--run-dir", type=str, help="Run directory (default: the last 'run')")

    x = sub.add_parser("run", parents=[common], help="Full pipeline: datagen, train, measure, attack, report")
    x.add_argument("--trials", type=int)
    x.add_argument("--from-manifest", type=str, help="Re-run the config recorded in a manifest.json")
    return p


def _base_config(args: argparse.Namespace) -> ExperimentConfig:
    config = load_config(Path(args.config)) if getattr(args, "config", None) else ExperimentConfig()
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    return config


def _out_dir(args: argparse.Namespace) -> Path:
    d = Path(getattr(args, "out_dir", None) or DEFAULT_OUT_DIR)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_rows(rows, columns, path: Path) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    pd.DataFrame(rows, columns=columns).to_csv(path, index=False, na_rep="nan", lineterminator="\n", encoding="utf-8")
    print(path)


def cmd_datagen(args: argparse.Namespace) -> int:
    config = _base_config(args)
    out = Path(args.out) if args.out else _out_dir(args) / "dataset.fldata"
    if args.csv:
        props = [c for c in args.property_columns.split(",") if c]
        if not props:
            raise InvalidConfig("--csv needs --property-columns")
        dataset = load_csv(Path(args.csv), args.label_column, props)
        meta = {"source": args.csv}
    else:
        synth = replace(config.data, seed=config.seed)
        if args.num_samples is not None:
            synth.num_samples = args.num_samples
        if args.feature_dim is not None:
            synth.feature_dim = args.feature_dim
        if args.image_shape is not None:
            synth.image_shape = tuple(args.image_shape)
        if args.signal_strength is not None or args.correlation is not None:
            first = synth.properties[0] if synth.properties else PropertyConfig()
            synth.properties = [
                replace(
                    first,
                    signal_strength=first.signal_strength if args.signal_strength is None else args.signal_strength,
                    correlation_with_main=first.correlation_with_main if args.correlation is None else args.correlation,
                ),
                *synth.properties[1:],
            ]
        dataset = generate(synth)
        meta = {"synth": synth_config_to_dict(synth)}
    save_dataset(out, dataset, meta)
    log_info("datagen wrote %s samples=%s", out, len(dataset))
    print(out)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    config = _base_config(args)
    out = _out_dir(args)
    fl = replace(config.fl, seed=config.seed)
    for attr, value in (
        ("rounds", args.rounds),
        ("num_clients", args.clients),
        ("algorithm", args.algorithm),
        ("lr", args.lr),
        ("batch_size", args.batch_size),
    ):
        if value is not None:
            setattr(fl, attr, value)
    aux_fraction = config.attack.aux_fraction if args.aux_fraction is None else args.aux_fraction
    preset = args.model or config.model
    dataset = load_dataset(Path(args.data))
    aux, federated = split(dataset, [aux_fraction, 1.0 - aux_fraction], config.seed)
    model = build_preset(preset, dataset.feature_shape, dataset.num_classes, config.seed)
    log = train(fl, model, federated)
    victim = partition(federated, fl.num_clients, fl.seed)[0].data
    save_dataset(out / "aux.fldata", aux, {"role": "aux"})
    save_dataset(out / "victim.fldata", victim, {"role": "victim"})
    acc = accuracy(log.final_model, federated)
    path = save_snapshot_log(
        log,
        out,
        {"model": preset, "fl": fl.to_dict(), "aux_fraction": aux_fraction, "seed": config.seed, "main_task_accuracy": acc},
    )
    print(f"{path} accuracy={acc:.4f}")
    return EXIT_OK


def _dataset_arg(value: Optional[str], run_dir: Path, default_name: str) -> Path:
    return Path(value) if value else run_dir / default_name


def cmd_measure(args: argparse.Namespace) -> int:
    config = _base_config(args)
    run_dir = Path(args.snapshots)
    log, _ = load_snapshot_log(run_dir)
    data = load_dataset(_dataset_arg(args.data, run_dir, "victim.fldata"))
    model = log.final_model
    metrics = config.metrics
    if args.metric == "sensitivity":
        if args.samples is not None:
            metrics = replace(metrics, sensitivity_samples=args.samples)
        if args.norm != "all":
            metrics = replace(metrics, norms=[normalize_norm(args.norm)])
        elif not metrics.norms:
            metrics = replace(metrics, norms=list(NORMS))
        if args.output_side:
            metrics = replace(metrics, output_side=args.output_side)
        metrics.validate()
        rows = measure_sensitivity_rows(model, data, metrics, config.seed, row_seed=config.seed)
        out = Path(args.out) if args.out else _out_dir(args) / "sensitivity.csv"
    else:
        family = parse_family(args.family) if args.family else metrics.family
        reducer_spec = args.reducer or config.reducer
        if reducer_spec is not None:
            family = replace(family, reducer=reducer_for(model, reducer_spec))
        if args.evaluation:
            metrics = replace(metrics, evaluation=args.evaluation)
        if args.batches is not None:
            metrics = replace(metrics, vinfo_batches=args.batches)
        if args.clamp_zero:
            metrics = replace(metrics, clamp_zero=True)
        metrics.validate()
        properties = [args.property] if args.property else list(data.properties)
        rows = measure_vinfo_rows(
            model, data, properties, metrics, family, config.attack, config.seed, round_index=log.rounds[-1], row_seed=config.seed
        )
        out = Path(args.out) if args.out else _out_dir(args) / "vinfo.csv"
    log_info("measure %s layers=%s rows=%s", args.metric, layer_kinds(model), len(rows))
    _write_rows(rows, METRIC_COLUMNS, out)
    return EXIT_OK


def cmd_attack(args: argparse.Namespace) -> int:
    config = _base_config(args)
    run_dir = Path(args.snapshots)
    log, _ = load_snapshot_log(run_dir)
    aux = load_dataset(_dataset_arg(args.data, run_dir, "aux.fldata"))
    victim = load_dataset(_dataset_arg(args.victim_data, run_dir, "victim.fldata"))
    attack = replace(config.attack, property=args.property, layers=args.layers, seed=config.seed)
    if args.family:
        attack.family = parse_family(args.family)
    reducer_spec = args.reducer or config.reducer
    if reducer_spec is not None:
        attack.family = replace(attack.family, reducer=reducer_for(log.final_model, reducer_spec))
    if args.batches is not None:
        attack.batches_per_snapshot = args.batches
    if args.snapshot_stride is not None:
        attack.snapshot_stride = args.snapshot_stride
    if args.mixing is not None:
        attack.mixing = args.mixing
    if args.shuffle_labels:
        attack.shuffle_labels = True
    if args.main_label is not None:
        attack.main_label = args.main_label
    if args.mix_labels:
        attack.condition_on_label = False
    results = run_layer_attacks(log, aux, victim, attack)
    rows = [
        {
            "layer_index": r.layer,
            "property": r.property,
            "auc": r.auc,
            "train_ce_nats": r.train_ce_nats,
            "n_train": r.n_train,
            "n_eval": r.n_eval,
            "family": r.family,
            "seed": config.seed,
        }
        for r in results
    ]
    _write_rows(rows, ATTACK_COLUMNS, Path(args.out) if args.out else _out_dir(args) / "attack.csv")
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    run_dir = Path(args.run_dir) if args.run_dir else None
    if run_dir is None:
        last = load_last_run()
        if not last:
            raise ConfigError("no --run-dir given and no previous run recorded")
        run_dir = Path(last["out_dir"])
    metrics, attacks, manifest = load_run_tables(run_dir)
    recorded = manifest.get("config")
    config = config_from_dict(recorded) if recorded else ExperimentConfig()
    properties = manifest.get("properties") or list(dict.fromkeys(attacks["property"]))
    report = build_report(
        metrics,
        attacks,
        manifest,
        properties=properties,
        baseline=manifest.get("baseline_property"),
        norms=config.metrics.norms,
        num_permutations=config.metrics.num_permutations,
        seed=report_seed(getattr(args, "seed", config.seed)),
    )
    out = Path(args.out_dir) if getattr(args, "out_dir", None) else run_dir
    paths = write_report(report, out)
    print(paths["report"])
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    if args.from_manifest:
        manifest = json.loads(Path(args.from_manifest).read_text(encoding="utf-8"))
        if "config" not in manifest:
            raise ConfigError(f"{args.from_manifest} has no recorded config")
        config = config_from_dict(manifest["config"])
        if getattr(args, "seed", None) is not None:
            config.seed = args.seed
    else:
        config = _base_config(args)
    if args.trials is not None:
        config.trials = args.trials
    out = _out_dir(args)
    report = run_experiment(config, out)
    save_last_run(out, {"name": config.name, "trials": config.trials, "seed": config.seed})
    print(out / "report.json")
    log_info("run finished out_dir=%s correlations=%s", out, len(report.correlations))
    return EXIT_OK


COMMANDS = {
    "datagen": cmd_datagen,
    "train": cmd_train,
    "measure": cmd_measure,
    "attack": cmd_attack,
    "report": cmd_report,
    "run": cmd_run,
}


def run_cli(args: argparse.Namespace) -> int:
    if getattr(args, "verbose", False):
        enable_console(logging.INFO)
    log_info("CLI command=%s", args.command)
    return COMMANDS[args.command](args)
