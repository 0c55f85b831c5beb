"""Per-layer risk report: CSV tables, trial summary, metric/AUC correlations and the JSON bundle."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from .diagnostics import log_info, log_warning
from .errors import ConstantVector, ContainerFormatError, LengthMismatch, MissingColumn
from .seeding import derive_seeds
from .stats import confidence_half_width, delta_r, finite_mean, pearson, pearson_pvalue

METRIC_COLUMNS = [
    "layer_index",
    "layer_kind",
    "metric_name",
    "norm",
    "value",
    "num_samples",
    "skipped_degenerate",
    "family",
    "seed",
]
ATTACK_COLUMNS = ["layer_index", "property", "auc", "train_ce_nats", "n_train", "n_eval", "family", "seed"]
SUMMARY_COLUMNS = ["layer_index", "layer_kind", "metric_name", "norm", "mean", "ci_half_width", "trials"]
CORRELATION_COLUMNS = ["property", "metric_name", "norm", "r", "p_value", "delta_r", "baseline_property", "n_layers"]
NOT_APPLICABLE = "-"
_TEXT_COLUMNS = {"layer_kind": str, "metric_name": str, "norm": str, "family": str, "property": str}


@dataclass(eq=False)
class LayerRiskReport:
    metrics: pd.DataFrame
    attacks: pd.DataFrame
    summary: pd.DataFrame
    correlations: pd.DataFrame
    manifest: Dict[str, Any]


def vinfo_metric(property_name: str) -> str:
    return f"v_info:{property_name}"


def auc_metric(property_name: str) -> str:
    return f"auc:{property_name}"


def _half_width(values: pd.Series) -> float:
    if not np.isfinite(values.to_numpy(dtype=np.float64)).any():
        return float("nan")
    return confidence_half_width(values.to_numpy(dtype=np.float64))


def summarize(metrics: pd.DataFrame, attacks: pd.DataFrame) -> pd.DataFrame:
    """Mean and 95% half-width over trials for every (layer, metric, norm), attack AUC included."""
    kinds = metrics.drop_duplicates("layer_index").set_index("layer_index")["layer_kind"]
    auc_rows = pd.DataFrame(
        {
            "layer_index": attacks["layer_index"],
            "layer_kind": attacks["layer_index"].map(kinds),
            "metric_name": [auc_metric(p) for p in attacks["property"]],
            "norm": NOT_APPLICABLE,
            "value": attacks["auc"],
        }
    )
    long = pd.concat([metrics[["layer_index", "layer_kind", "metric_name", "norm", "value"]], auc_rows], ignore_index=True)
    long["value"] = long["value"].astype(np.float64)
    summary = (
        long.groupby(["layer_index", "layer_kind", "metric_name", "norm"], sort=True)["value"]
        .agg(
            mean=lambda v: finite_mean(v.to_numpy()),
            ci_half_width=_half_width,
            trials=lambda v: int(np.isfinite(v.to_numpy(dtype=np.float64)).sum()),
        )
        .reset_index()
    )
    return summary[SUMMARY_COLUMNS]


def _layer_vector(summary: pd.DataFrame, metric_name: str, norm: str) -> pd.Series:
    rows = summary[(summary["metric_name"] == metric_name) & (summary["norm"] == norm)]
    return rows.set_index("layer_index")["mean"].sort_index()


def _correlate(xs: pd.Series, ys: pd.Series, num_permutations: int, seed: int) -> tuple[float, float, int]:
    joined = pd.concat([xs.rename("x"), ys.rename("y")], axis=1, join="inner").dropna()
    n = len(joined)
    try:
        r = pearson(joined["x"], joined["y"])
        p = pearson_pvalue(joined["x"], joined["y"], num_permutations, seed)
    except (ConstantVector, LengthMismatch) as e:
        log_warning("correlation skipped n_layers=%s: %s", n, e)
        return float("nan"), float("nan"), n
    return r, p, n


def correlations(
    summary: pd.DataFrame,
    properties: Sequence[str],
    baseline: str,
    *,
    norms: Sequence[str],
    num_permutations: int,
    seed: int,
) -> pd.DataFrame:
    """Pearson r between each per-layer metric and per-layer AUC, per property, with ΔR against the baseline."""
    keys = [("sensitivity", n) for n in norms] + [("v_info", NOT_APPLICABLE)]
    pairs = [(p, m, n) for p in properties for m, n in keys]
    seeds = derive_seeds(seed, len(pairs), salt=11)
    results: Dict[tuple, tuple] = {}
    for (prop, metric, norm), s in zip(pairs, seeds):
        name = vinfo_metric(prop) if metric == "v_info" else metric
        results[(prop, metric, norm)] = _correlate(
            _layer_vector(summary, name, norm), _layer_vector(summary, auc_metric(prop), NOT_APPLICABLE), num_permutations, s
        )
    rows = []
    for prop, metric, norm in pairs:
        r, p, n = results[(prop, metric, norm)]
        r_base = results[(baseline, metric, norm)][0]
        rows.append(
            {
                "property": prop,
                "metric_name": metric,
                "norm": norm,
                "r": r,
                "p_value": p,
                "delta_r": delta_r(r_base, r) if math.isfinite(r) and math.isfinite(r_base) else float("nan"),
                "baseline_property": baseline,
                "n_layers": n,
            }
        )
    return pd.DataFrame(rows, columns=CORRELATION_COLUMNS)


def build_report(
    metrics: pd.DataFrame,
    attacks: pd.DataFrame,
    manifest: Dict[str, Any],
    *,
    properties: Sequence[str],
    baseline: Optional[str] = None,
    norms: Sequence[str] = ("F", "1", "inf"),
    num_permutations: int = 10_000,
    seed: int = 0,
) -> LayerRiskReport:
    baseline = baseline or properties[0]
    summary = summarize(metrics, attacks)
    corr = correlations(summary, properties, baseline, norms=norms, num_permutations=num_permutations, seed=seed)
    log_info(
        "build_report metric_rows=%s attack_rows=%s summary_rows=%s correlations=%s",
        len(metrics),
        len(attacks),
        len(summary),
        len(corr),
    )
    return LayerRiskReport(metrics=metrics, attacks=attacks, summary=summary, correlations=corr, manifest=manifest)


def json_safe(value: Any) -> Any:
    """Replace non-finite floats with None so the bundle stays strict JSON."""
    if isinstance(value, dict):
        return {k: json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [json_safe(v) for v in value]
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if math.isfinite(f) else None
    if isinstance(value, np.integer):
        return int(value)
    return value


def json_dumps(data: Dict[str, Any]) -> str:
    return json.dumps(json_safe(data), indent=2, ensure_ascii=False, sort_keys=False, allow_nan=False)


def to_json(report: LayerRiskReport) -> Dict[str, Any]:
    layers: List[Dict[str, Any]] = []
    for (layer, kind), rows in report.summary.groupby(["layer_index", "layer_kind"], sort=True):
        layers.append(
            {
                "layer_index": int(layer),
                "layer_kind": kind,
                "metrics": rows.drop(columns=["layer_index", "layer_kind"]).to_dict(orient="records"),
            }
        )
    return {
        "manifest": report.manifest,
        "layers": layers,
        "correlations": report.correlations.to_dict(orient="records"),
    }


def _write_csv(df: pd.DataFrame, path: Path) -> None:
    df.to_csv(path, index=False, na_rep="nan", lineterminator="\n", encoding="utf-8")


def write_report(report: LayerRiskReport, out_dir: Path) -> Dict[str, Path]:
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "metrics": out_dir / "metrics.csv",
        "attack": out_dir / "attack.csv",
        "summary": out_dir / "summary.csv",
        "correlations": out_dir / "correlations.csv",
        "report": out_dir / "report.json",
        "manifest": out_dir / "manifest.json",
    }
    _write_csv(report.metrics[METRIC_COLUMNS], paths["metrics"])
    _write_csv(report.attacks[ATTACK_COLUMNS], paths["attack"])
    _write_csv(report.summary, paths["summary"])
    _write_csv(report.correlations, paths["correlations"])
    paths["report"].write_text(json_dumps(to_json(report)) + "\n", encoding="utf-8")
    paths["manifest"].write_text(json_dumps(report.manifest) + "\n", encoding="utf-8")
    log_info("write_report out_dir=%s files=%s", out_dir, sorted(paths))
    return paths


def read_table(path: Path, columns: Sequence[str]) -> pd.DataFrame:
    if not path.exists():
        raise ContainerFormatError(f"missing report table {path}")
    df = pd.read_csv(path, dtype=_TEXT_COLUMNS, keep_default_na=False, na_values=["nan"], float_precision="round_trip")
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise MissingColumn(f"{path} lacks columns {missing}")
    return df[list(columns)]


def load_run_tables(run_dir: Path) -> tuple[pd.DataFrame, pd.DataFrame, Dict[str, Any]]:
    metrics = read_table(run_dir / "metrics.csv", METRIC_COLUMNS)
    attacks = read_table(run_dir / "attack.csv", ATTACK_COLUMNS)
    manifest_path = run_dir / "manifest.json"
    manifest = json.loads(manifest_path.read_text(encoding="utf-8")) if manifest_path.exists() else {}
    return metrics, attacks, manifest
