"""Command line front end.

Verbs: ``stats``, ``train``, ``compare``, ``ablate``, ``perclass`` and
``gen-synthetic``. Every flag can also be set through an environment variable
named ``GRAFFIN_`` plus the flag name in upper case with dashes turned into
underscores (``--weight-decay`` -> ``GRAFFIN_WEIGHT_DECAY``). Command line
flags win over the environment.

Exit codes: 0 success, 1 data or training failure, 2 invalid usage or config.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import tempfile
from pathlib import Path
from typing import Callable, Sequence

from .data import DatasetBundle, DatasetFormatError, SbmSpec, gen_synthetic, load_dataset, save_native
from .experiments import (
    ablate_document,
    compare_document,
    perclass_csv,
    perclass_document,
    stats_document,
    train_document,
)
from .graph import GraphInputError
from .layers import Aggregation
from .metrics import METRIC_NAMES
from .model import TrainConfig, TrainingError
from .serialization import Strategy

logger = logging.getLogger("graffin")

ENV_PREFIX = "GRAFFIN_"
METRIC_LABELS = {"all_acc": "ALL", "low_acc": "LOW", "auc_macro": "A.R.", "f1_macro": "F1"}


class UsageError(ValueError):
    pass


def _on_off(value: str) -> bool:
    v = value.strip().lower()
    if v in ("on", "true", "1", "yes"):
        return True
    if v in ("off", "false", "0", "no"):
        return False
    raise argparse.ArgumentTypeError(f"expected on|off, got {value!r}")


def _strategy(value: str) -> Strategy:
    try:
        return Strategy.parse(value)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def _strategy_list(value: str) -> list[Strategy]:
    return [_strategy(v) for v in value.split(",") if v.strip()]


def _aggregation(value: str) -> Aggregation:
    try:
        return Aggregation(value.strip().lower())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected gcn|mean, got {value!r}") from None


def env_name(flag: str) -> str:
    return ENV_PREFIX + flag.lstrip("-").replace("-", "_").upper()


def _env_default(flag: str, convert: Callable, default, environ):
    raw = environ.get(env_name(flag))
    if raw is None:
        return default
    try:
        return convert(raw)
    except (argparse.ArgumentTypeError, ValueError) as exc:
        raise UsageError(f"{env_name(flag)}={raw!r}: {exc}") from None


def build_parser(environ=None) -> argparse.ArgumentParser:
    environ = os.environ if environ is None else environ
    defaults = TrainConfig()

    def opt(parser, flag, convert, default, **kw):
        parser.add_argument(flag, type=convert, default=_env_default(flag, convert, default, environ), **kw)

    data = argparse.ArgumentParser(add_help=False)
    src = data.add_argument_group("dataset")
    opt(src, "--dataset", str, None, metavar="PATH",
        help="native TSV directory or a directory with cora.content/cora.cites")
    opt(src, "--synthetic", str, None, metavar="SPEC",
        help="SBM spec JSON file, or 'default' (used when no dataset is given)")
    opt(src, "--seed", int, defaults.seed, help="base seed for the split and the model init")

    out = argparse.ArgumentParser(add_help=False)
    opt(out, "--out", str, None, metavar="FILE", help="write the results document here")
    out.add_argument("--json", action="store_true", help="print the JSON document instead of a table")
    out.add_argument("--timing", action="store_true", help="include wall-clock timings in the document")

    train = argparse.ArgumentParser(add_help=False)
    cfg = train.add_argument_group("training")
    opt(cfg, "--strategy", _strategy, defaults.strategy, help="degree|eigen|id|random")
    opt(cfg, "--aggregation", _aggregation, defaults.aggregation, help="gcn|mean")
    opt(cfg, "--graffin", _on_off, defaults.graffin_enabled, help="on|off")
    opt(cfg, "--epochs", int, defaults.epochs)
    opt(cfg, "--lr", float, defaults.lr)
    opt(cfg, "--weight-decay", float, defaults.weight_decay)
    opt(cfg, "--hidden", int, defaults.hidden)
    opt(cfg, "--repeats", int, defaults.repeats)

    parser = argparse.ArgumentParser(prog="graffin", description="Imbalanced node classification with a serialized-graph GRU plug-in.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", parents=[data, out], help="dataset statistics and enrichment ratios")
    opt(p, "--strategies", _strategy_list, [Strategy.DEGREE, Strategy.EIGEN, Strategy.ID])
    sub.add_parser("train", parents=[data, out, train], help="repeated training runs")
    sub.add_parser("compare", parents=[data, out, train], help="vanilla vs plugged, matched seeds")
    p = sub.add_parser("ablate", parents=[data, out, train], help="macro-F1 per serialization strategy")
    opt(p, "--strategies", _strategy_list, [Strategy.DEGREE, Strategy.EIGEN, Strategy.ID])
    p = sub.add_parser("perclass", parents=[data, out, train], help="per-class accuracy, head to tail")
    opt(p, "--format", str, "json", choices=["json", "csv"])
    p = sub.add_parser("gen-synthetic", parents=[data], help="write an SBM dataset as a native directory")
    opt(p, "--out", str, None, metavar="DIR", help="output directory (required)")
    return parser


# ---------------------------------------------------------------------------
# Validation and loading
# ---------------------------------------------------------------------------

def config_from_args(args: argparse.Namespace) -> TrainConfig:
    cfg = TrainConfig(
        epochs=args.epochs, lr=args.lr, weight_decay=args.weight_decay, hidden=args.hidden,
        strategy=args.strategy, aggregation=args.aggregation, seed=args.seed,
        graffin_enabled=args.graffin, repeats=args.repeats,
    )
    try:
        return cfg.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _synthetic_spec(value: str | None) -> SbmSpec:
    if value in (None, "default"):
        spec = SbmSpec()
    else:
        path = Path(value)
        if not path.is_file():
            raise UsageError(f"synthetic spec not found: {path}")
        try:
            spec = SbmSpec.from_json(path)
        except (ValueError, TypeError) as exc:
            raise UsageError(f"{path}: {exc}") from None
    try:
        spec.validate()
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    return spec


def check_inputs(args: argparse.Namespace) -> None:
    """Cheap checks run before any dataset is loaded or model trained."""
    if args.dataset is not None and args.synthetic is not None:
        raise UsageError("give either --dataset or --synthetic, not both")
    if args.dataset is not None and not Path(args.dataset).is_dir():
        raise UsageError(f"dataset directory not found: {args.dataset}")
    if args.dataset is None:
        _synthetic_spec(args.synthetic)
    if getattr(args, "strategies", None) is not None and not args.strategies:
        raise UsageError("--strategies is empty")
    out = getattr(args, "out", None)
    if out is not None and not Path(out).resolve().parent.is_dir():
        raise UsageError(f"output directory does not exist: {Path(out).parent}")


def load_bundle(args: argparse.Namespace) -> DatasetBundle:
    if args.dataset is not None:
        return load_dataset(args.dataset, seed=args.seed)
    return gen_synthetic(_synthetic_spec(args.synthetic))


def write_atomic(path: Path | str, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.resolve().parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        Path(tmp).unlink(missing_ok=True)
        raise


def dumps(doc: dict) -> str:
    return json.dumps(doc, indent=2, allow_nan=False) + "\n"


# ---------------------------------------------------------------------------
# Human-readable tables
# ---------------------------------------------------------------------------

def _table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [max(len(str(c)) for c in col) for col in zip(header, *rows)]
    fmt = lambda r: "  ".join(str(c).rjust(w) for c, w in zip(r, widths))  # noqa: E731
    return "\n".join([fmt(header), fmt(["-" * w for w in widths]), *map(fmt, rows)])


def stats_row(summary: dict) -> str:
    """``N & D & K & R_imb`` with thousands separators, as in a LaTeX table row."""
    return (f"{summary['num_nodes']:,} & {summary['num_features']:,} & "
            f"{summary['num_classes']} & {summary['r_imb_rounded']}")


def _fmt_ratio(x) -> str:
    return "inf" if x is None else f"{x:.3f}"


def render_stats(doc: dict) -> str:
    s = doc["dataset"]
    lines = [
        f"dataset {s['name']} ({s['provenance']})",
        "N & D & K & R_imb: " + stats_row(s),
        f"edges {s['num_edges']:,}  head class {s['head_class']}  tail class {s['tail_class']}",
        f"class counts {s['class_counts']}",
        "",
    ]
    rows = [[name, _fmt_ratio(e["r_g"]), _fmt_ratio(e["r_g_approx"]), _fmt_ratio(e["r_l"]),
             _fmt_ratio(e["r_l_approx"]), str(e["converged"])]
            for name, e in doc["enrichment"].items()]
    lines.append(_table(["strategy", "R_g", "r_imb/N", "R_l", "N/r_imb", "converged"], rows))
    return "\n".join(lines)


def _metric_rows(arms: dict[str, dict]) -> list[list[str]]:
    return [[arm] + [agg[m]["formatted"] for m in METRIC_NAMES] for arm, agg in arms.items()]


def render_train(doc: dict) -> str:
    arm = "+Graffin" if doc["config"]["graffin_enabled"] else "vanilla"
    rows = _metric_rows({arm: doc["aggregate"]})
    return _table(["arm", *(METRIC_LABELS[m] for m in METRIC_NAMES)], rows)


def render_compare(doc: dict) -> str:
    rows = _metric_rows({a: v["aggregate"] for a, v in doc["arms"].items()})
    rows.append(["delta"] + ["n/a" if doc["deltas"][m] is None else f"{doc['deltas'][m]:+.1f}" for m in METRIC_NAMES])
    return _table(["arm", *(METRIC_LABELS[m] for m in METRIC_NAMES)], rows)


def render_ablate(doc: dict) -> str:
    rows = [[r["strategy"], r["display"], f"{r['f1_std']:.2f}"] for r in doc["rows"]]
    return _table(["strategy", "F1", "std"], rows) + f"\nbest: {doc['best_strategy']}"


def render_perclass(doc: dict) -> str:
    t = doc["per_class"]
    arms = [k for k in t if k not in ("classes", "counts")]
    rows = [[str(k), str(t["counts"][i])] + ["n/a" if t[a][i] is None else f"{100 * t[a][i]:.1f}" for a in arms]
            for i, k in enumerate(t["classes"])]
    return _table(["class", "count", *arms], rows)


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------

def _emit(args: argparse.Namespace, doc: dict, render: Callable[[dict], str]) -> None:
    text = dumps(doc)
    if args.out is not None:
        write_atomic(args.out, text)
    print(text if args.json else render(doc), end="" if args.json else "\n")


def cmd_stats(args) -> None:
    bundle = load_bundle(args)
    _emit(args, stats_document(bundle, seed=args.seed, strategies=args.strategies), render_stats)


def cmd_train(args) -> None:
    config = config_from_args(args)
    bundle = load_bundle(args)
    _emit(args, train_document(bundle, config, timing=args.timing), render_train)


def cmd_compare(args) -> None:
    config = config_from_args(args)
    bundle = load_bundle(args)
    _emit(args, compare_document(bundle, config, timing=args.timing), render_compare)


def cmd_ablate(args) -> None:
    config = config_from_args(args)
    bundle = load_bundle(args)
    _emit(args, ablate_document(bundle, config, args.strategies, timing=args.timing), render_ablate)


def cmd_perclass(args) -> None:
    config = config_from_args(args)
    bundle = load_bundle(args)
    doc = perclass_document(bundle, config, timing=args.timing)
    if args.format == "csv":
        text = perclass_csv(doc)
        if args.out is not None:
            write_atomic(args.out, text)
        print(text, end="")
        return
    _emit(args, doc, render_perclass)


def cmd_gen_synthetic(args) -> None:
    if args.out is None:
        raise UsageError("gen-synthetic needs --out DIR")
    if args.dataset is not None:
        raise UsageError("gen-synthetic takes --synthetic, not --dataset")
    out = Path(args.out)
    if out.exists() and any(out.iterdir()):
        raise UsageError(f"output directory is not empty: {out}")
    bundle = gen_synthetic(_synthetic_spec(args.synthetic))
    save_native(bundle, out)
    g = bundle.graph
    print(f"wrote {out}: N={g.num_nodes} D={g.num_features} K={g.num_classes} edges={g.num_edges}")


COMMANDS = {
    "stats": cmd_stats,
    "train": cmd_train,
    "compare": cmd_compare,
    "ablate": cmd_ablate,
    "perclass": cmd_perclass,
    "gen-synthetic": cmd_gen_synthetic,
}


def main(argv: Sequence[str] | None = None, environ=None) -> int:
    try:
        parser = build_parser(environ)
    except UsageError as exc:
        print(f"graffin: error: {exc}", file=sys.stderr)
        return 2
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command != "gen-synthetic":
            check_inputs(args)
            if args.command != "stats":
                config_from_args(args)
        COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"graffin: error: {exc}", file=sys.stderr)
        return 2
    except (DatasetFormatError, GraphInputError, TrainingError, ValueError, OSError) as exc:
        print(f"graffin: {args.command} failed: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
