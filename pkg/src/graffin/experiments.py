"""Builders for the experiment documents emitted by the command line.

Every builder returns a plain JSON-ready dict whose layout is described by
``schemas/results.schema.json``. Wall-clock timing is only included when
asked for, so that repeated runs with the same seed serialize identically.
"""

from __future__ import annotations

import dataclasses
from typing import Sequence

from .data import DatasetBundle
from .graph import class_stats
from .metrics import METRIC_NAMES, MetricsReport, aggregate, aggregate_per_class
from .model import GlobalBranch, RepeatResult, TrainConfig, repeat_runs
from .serialization import Strategy, enrichment_report, serialize

SCHEMA_VERSION = "graffin-results/1"


def dataset_summary(bundle: DatasetBundle) -> dict:
    g = bundle.graph
    stats = class_stats(g)
    return {
        "name": bundle.name,
        "provenance": bundle.provenance.value,
        "num_nodes": g.num_nodes,
        "num_features": g.num_features,
        "num_classes": g.num_classes,
        "num_edges": g.num_edges,
        "class_counts": stats.counts.tolist(),
        "head_class": stats.head_class,
        "tail_class": stats.tail_class,
        "r_imb": stats.r_imb,
        "r_imb_rounded": f"{stats.r_imb:.2f}",
        "split_sizes": [int(bundle.train_mask.size), int(bundle.val_mask.size), int(bundle.test_mask.size)],
    }


def enrichment(bundle: DatasetBundle, strategy: Strategy | str, seed: int = 0) -> dict:
    g = bundle.graph
    ser = serialize(g, strategy, seed=seed)
    out = enrichment_report(g, ser, class_stats(g)).to_dict()
    out["converged"] = ser.converged
    return out


def _aggregate_dict(result: RepeatResult) -> dict:
    return {name: md.to_dict() for name, md in result.aggregate().items()}


def _head_to_tail(bundle: DatasetBundle) -> list[int]:
    counts = class_stats(bundle.graph).counts
    return sorted(range(counts.size), key=lambda k: (-counts[k], k))


def per_class_table(bundle: DatasetBundle, arms: dict[str, RepeatResult]) -> dict:
    """Mean per-class test accuracy, classes ordered from head (largest) to tail."""
    order = _head_to_tail(bundle)
    counts = class_stats(bundle.graph).counts
    table = {"classes": order, "counts": [int(counts[k]) for k in order]}
    for arm, result in arms.items():
        acc = aggregate_per_class(result.reports)
        table[arm] = [acc[k] for k in order]
    return table


def _document(command: str, bundle: DatasetBundle, config: TrainConfig, timing: dict | None) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "dataset": dataset_summary(bundle),
        "config": config.to_dict(),
        "timing": timing,
    }


def _timing(results: Sequence[RepeatResult], enabled: bool) -> dict | None:
    if not enabled:
        return None
    secs = [r.seconds for res in results for r in res.runs]
    return {"run_seconds": secs, "total_seconds": float(sum(secs))}


def _runs(result: RepeatResult, timing: bool) -> list[dict]:
    return [r.to_dict(timing) for r in result.runs]


def stats_document(bundle: DatasetBundle, seed: int = 0,
                   strategies: Sequence[Strategy | str] = (Strategy.DEGREE, Strategy.EIGEN, Strategy.ID)) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "command": "stats",
        "dataset": dataset_summary(bundle),
        "enrichment": {Strategy.parse(s).value: enrichment(bundle, s, seed) for s in strategies},
    }


def train_document(bundle: DatasetBundle, config: TrainConfig, timing: bool = False,
                   result: RepeatResult | None = None) -> dict:
    result = result or repeat_runs(bundle, config)
    arm = "graffin" if config.graffin_enabled else "vanilla"
    doc = _document("train", bundle, config, _timing([result], timing))
    doc["runs"] = _runs(result, timing)
    doc["aggregate"] = _aggregate_dict(result)
    doc["per_class"] = per_class_table(bundle, {arm: result})
    doc["enrichment"] = enrichment(bundle, config.strategy, config.seed)
    return doc


def run_arms(bundle: DatasetBundle, config: TrainConfig,
             global_branch: GlobalBranch | None = None) -> dict[str, RepeatResult]:
    """Vanilla and plugged arms on matched seeds."""
    return {
        "vanilla": repeat_runs(bundle, dataclasses.replace(config, graffin_enabled=False)),
        "graffin": repeat_runs(bundle, dataclasses.replace(config, graffin_enabled=True),
                               global_branch=global_branch),
    }


def compare_document(bundle: DatasetBundle, config: TrainConfig, timing: bool = False,
                     arms: dict[str, RepeatResult] | None = None) -> dict:
    arms = arms or run_arms(bundle, config)
    doc = _document("compare", bundle, config, _timing(list(arms.values()), timing))
    doc["arms"] = {name: {"runs": _runs(res, timing), "aggregate": _aggregate_dict(res)} for name, res in arms.items()}
    deltas = {}
    for name in METRIC_NAMES:
        base, plug = arms["vanilla"].aggregate()[name].mean, arms["graffin"].aggregate()[name].mean
        deltas[name] = None if base is None or plug is None else 100.0 * (plug - base)
    doc["deltas"] = deltas
    doc["per_class"] = per_class_table(bundle, arms)
    return doc


def format_relative(delta_points: float) -> str:
    return f"{delta_points:+.2f}"


def ablate_document(bundle: DatasetBundle, config: TrainConfig,
                    strategies: Sequence[Strategy | str] = (Strategy.DEGREE, Strategy.EIGEN, Strategy.ID),
                    timing: bool = False,
                    results: dict[str, RepeatResult] | None = None) -> dict:
    """Macro-F1 per serialization strategy; degree (or the first listed) is the absolute baseline."""
    strategies = [Strategy.parse(s) for s in strategies]
    if not strategies:
        raise ValueError("no strategies to ablate")
    if results is None:
        results = {
            s.value: repeat_runs(bundle, dataclasses.replace(config, strategy=s, graffin_enabled=True))
            for s in strategies
        }
    base = Strategy.DEGREE if Strategy.DEGREE in strategies else strategies[0]
    base_f1 = 100.0 * results[base.value].aggregate()["f1_macro"].mean
    rows = []
    for s in [base] + [s for s in strategies if s is not base]:
        f1 = results[s.value].aggregate()["f1_macro"]
        mean = 100.0 * f1.mean
        row = {"strategy": s.value, "f1": mean, "f1_std": 100.0 * f1.std, "baseline": s is base}
        if s is base:
            row["relative"] = None
            row["display"] = f"{mean:.2f}"
        else:
            row["relative"] = mean - base_f1
            row["display"] = format_relative(mean - base_f1)
        rows.append(row)
    doc = _document("ablate", bundle, dataclasses.replace(config, graffin_enabled=True),
                    _timing(list(results.values()), timing))
    doc["rows"] = rows
    doc["best_strategy"] = max(rows, key=lambda r: (r["f1"], r["baseline"]))["strategy"]
    return doc


def perclass_document(bundle: DatasetBundle, config: TrainConfig, timing: bool = False,
                      arms: dict[str, RepeatResult] | None = None) -> dict:
    arms = arms or run_arms(bundle, config)
    doc = _document("perclass", bundle, config, _timing(list(arms.values()), timing))
    doc["per_class"] = per_class_table(bundle, arms)
    return doc


def perclass_csv(doc: dict) -> str:
    table = doc["per_class"]
    arms = [k for k in table if k not in ("classes", "counts")]
    lines = [",".join(["class", "count", *arms])]
    for i, k in enumerate(table["classes"]):
        vals = ["" if table[a][i] is None else repr(table[a][i]) for a in arms]
        lines.append(",".join([str(k), str(table["counts"][i]), *vals]))
    return "\n".join(lines) + "\n"


def recompute_aggregate(runs: list[dict]) -> dict:
    """Aggregate rebuilt from serialized per-seed entries (used to audit documents)."""
    reports = [MetricsReport.from_dict(r["metrics"]) for r in runs]
    return {name: md.to_dict() for name, md in aggregate(reports).items()}

