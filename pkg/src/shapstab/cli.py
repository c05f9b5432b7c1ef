"""Command-line entry point.

Exit codes: 0 success, 1 runtime or data error, 2 usage error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import ann, data, report
from .explainer import ExplainError, explain_deep, sample_background
from .simulation import PRESETS, StabilityReport, StudyConfig, StudyError, run_study

log = logging.getLogger("shapstab")


def _count(minimum: int):
    def parse(text: str) -> int:
        try:
            value = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}") from None
        if value < minimum:
            raise argparse.ArgumentTypeError(f"must be >= {minimum}, got {value}")
        return value

    return parse


def _count_list(text: str) -> list[int]:
    try:
        values = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not values or any(v < 1 for v in values):
        raise argparse.ArgumentTypeError(f"expected positive integers, got {text!r}")
    return values


def _seed(text: str) -> int:
    value = _count(0)(text)
    if value >= 1 << 64:
        raise argparse.ArgumentTypeError("seed must fit in 64 bits")
    return value


def _positive_float(text: str) -> float:
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {value}")
    return value


def cmd_gen_data(args) -> int:
    table = data.generate_synthetic(args.rows, args.vars, args.seed)
    data.write_csv(table, args.out)
    meta = data.write_metadata(table, args.out)
    print(f"wrote {table.n_rows} rows x {table.n_vars} variables to {args.out} (metadata {meta})")
    return 0


def cmd_split(args) -> int:
    table = data.read_csv(args.data)
    dev, expl = data.split(table, data.SplitSpec(args.fraction, args.seed))
    data.write_csv(dev, args.train_out)
    data.write_csv(expl, args.explain_out)
    print(f"wrote {dev.n_rows} development rows to {args.train_out}, {expl.n_rows} explanation rows to {args.explain_out}")
    return 0


def cmd_train(args) -> int:
    table = data.read_csv(args.data)
    model = ann.train(table, args.hidden, args.epochs, args.lr, args.seed)
    ann.save_model(model, args.out)
    loss = ann.log_loss(model, table.rows, table.labels)
    print(f"final log-loss {loss:.6g}")
    return 0


def cmd_explain(args) -> int:
    model = ann.load_model(args.model)
    train = data.read_csv(args.train_data)
    instances = data.read_csv(args.data)
    bg = sample_background(train, args.m, args.seed)
    result = explain_deep(model, instances, bg)
    result.write_csv(args.out, instances.column_names)
    print(f"expectation {result.background_expectation:.6g}; wrote {len(result.predictions)} rows to {args.out}")
    return 0


def cmd_simulate(args) -> int:
    preset = PRESETS[args.preset]
    sizes = args.sizes if args.sizes is not None else list(preset["background_sizes"])
    sims = args.sims if args.sims is not None else preset["simulations_per_size"]
    model = ann.load_model(args.model)
    train = data.read_csv(args.train_data)
    explain = data.read_csv(args.explain_data)
    too_big = [m for m in sizes if m > train.n_rows]
    if too_big:
        raise ValueError(f"background size {too_big[0]} exceeds the {train.n_rows} training rows")
    config = StudyConfig(model, train, explain, sizes, sims, args.seed)
    result = run_study(config)
    result.save(args.out)
    for s in result.sizes:
        print(f"m={s.m}: mean BLEU_Q {s.mean_bleu:.6g}, mean Jaccard_Q {s.mean_jaccard:.6g}")
    return 0


def cmd_report(args) -> int:
    rep = StabilityReport.load(args.input)
    ext = "csv" if args.format == "csv" else "md"
    render = report.render_csv if args.format == "csv" else report.render_markdown
    blocks = report.tables(rep)
    if args.out_dir:
        out = Path(args.out_dir)
        out.mkdir(parents=True, exist_ok=True)
        for name, (header, rows) in blocks.items():
            (out / f"{name}.{ext}").write_text(render(header, rows))
    else:
        chunks = []
        for name, (header, rows) in blocks.items():
            title = f"# {name}" if args.format == "csv" else f"## {name}\n"
            chunks.append(title + "\n" + render(header, rows))
        sys.stdout.write("\n".join(chunks))
    if args.heatmap:
        m = args.heatmap_size if args.heatmap_size is not None else rep.sizes[0].m
        try:
            h, w = report.write_heatmap(rep, m, args.heatmap, args.heatmap_scale)
        except KeyError:
            raise ValueError(f"report has no background size {m}") from None
        print(f"heatmap m={m}: {h} simulations x {w} variables -> {args.heatmap}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shapstab", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="write a synthetic labelled dataset")
    g.add_argument("--rows", type=_count(1), required=True)
    g.add_argument("--vars", type=_count(1), default=21)
    g.add_argument("--seed", type=_seed, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen_data)

    s = sub.add_parser("split", help="random development/explanation split of a CSV")
    s.add_argument("--data", required=True)
    s.add_argument("--fraction", type=float, default=0.7)
    s.add_argument("--seed", type=_seed, default=0)
    s.add_argument("--train-out", required=True)
    s.add_argument("--explain-out", required=True)
    s.set_defaults(func=cmd_split)

    t = sub.add_parser("train", help="fit an MLP classifier")
    t.add_argument("--data", required=True)
    t.add_argument("--hidden", type=_count_list, default=list(ann.DEFAULT_HIDDEN))
    t.add_argument("--epochs", type=_count(0), default=20)
    t.add_argument("--lr", type=_positive_float, default=0.05)
    t.add_argument("--seed", type=_seed, default=0)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("explain", help="deep SHAP values for one background sample")
    e.add_argument("--model", required=True)
    e.add_argument("--train-data", required=True)
    e.add_argument("--data", required=True, help="instances to explain")
    e.add_argument("--m", type=_count(1), default=100, help="background size")
    e.add_argument("--seed", type=_seed, default=0)
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_explain)

    m = sub.add_parser("simulate", help="run the background-size stability study")
    m.add_argument("--model", required=True)
    m.add_argument("--train-data", required=True)
    m.add_argument("--explain-data", required=True)
    m.add_argument("--sizes", type=_count_list, default=None)
    m.add_argument("--sims", type=_count(2), default=None)
    m.add_argument("--seed", type=_seed, default=0)
    m.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_simulate)

    r = sub.add_parser("report", help="tables and heatmaps from a study report")
    r.add_argument("--in", dest="input", required=True)
    r.add_argument("--format", choices=("csv", "md"), default="md")
    r.add_argument("--out-dir", default=None)
    r.add_argument("--heatmap", default=None, help="PPM output path")
    r.add_argument("--heatmap-size", type=_count(1), default=None,
                   help="background size to draw (default: first in report)")
    r.add_argument("--heatmap-scale", type=_count(1), default=1)
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except (data.DataError, ann.ModelError, ExplainError, StudyError, ValueError, OSError) as exc:
        print(f"shapstab {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
