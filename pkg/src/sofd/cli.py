"""Command-line interface.

Exit codes: 0 success, 2 input or configuration error, 3 pipeline stage failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import dataio
from .config import DATA_DIR_ENV, ConfigError, config_keys, load_config
from .metrics import DiagnosisReport, read_report, write_confusion_csv, write_long_csv, write_report
from .pipeline import VARIANTS, StageError, read_labels, run

EXIT_OK, EXIT_INPUT, EXIT_PIPELINE = 0, 2, 3

log = logging.getLogger("sofd")


def _keys_epilog() -> str:
    lines = ["config keys (TOML sections; override with --set section.key=value):"]
    lines += [f"  {k} = {v!r}" for k, v in config_keys()]
    lines.append(f"\n{DATA_DIR_ENV}/data.csv is used when dataset.path is empty.")
    return "\n".join(lines)


def _load(args, extra: list[str] | None = None):
    overrides = list(args.set or [])
    if getattr(args, "seed", None) is not None:
        overrides.append(f"seed={args.seed}")
    if getattr(args, "speed", None) is not None:
        overrides.append(f"dataset.speed={args.speed}")
    if getattr(args, "out", None):
        overrides.append(f'output_dir="{Path(args.out).as_posix()}"')
    return load_config(args.config, overrides + (extra or []))


def cmd_ingest(args) -> int:
    cfg = load_config(args.config, list(args.set or []))
    schema = dataio.Schema.from_mapping(cfg.dataset.schema)
    records = dataio.load_raw(args.data, schema)
    pool = dataio.LabeledPool.from_records(records, schema)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    dropped = len(records) - len(pool)
    print(f"records: {len(records)}  labeled: {len(pool)}  unassigned: {dropped}")
    for speed in range(1, 10):
        sel = pool.speed == speed
        if not sel.any():
            continue
        path = out / f"speed_{speed}.csv"
        dataio.write_prepared(path, pool.x[sel], pool.condition[sel], pool.speed[sel])
        counts = {dataio.Condition(c).name: int(n) for c, n in zip(*np.unique(pool.condition[sel], return_counts=True))}
        print(f"speed {speed}: {int(sel.sum())} rows {counts} -> {path}")
    return EXIT_OK


def cmd_synth(args) -> int:
    cfg = _load(args, ['dataset.kind="synthetic"'])
    from .pipeline import load_pool

    pool = load_pool(cfg)
    out = Path(args.out or cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"speed_{cfg.dataset.speed}.csv"
    dataio.write_prepared(path, pool.x, pool.condition, pool.speed)
    print(path)
    return EXIT_OK


def _run(args, variant: str) -> int:
    cfg = _load(args)
    art = run(cfg, variant)
    r = art.report
    log.info("u_recall=%.4f acc=%.4f macro_f1=%.4f |D_p|=%d |D_s|=%d", r.u_recall, r.acc, r.macro_f1,
             r.n_pseudo, r.n_reliable)
    print(Path(cfg.output_dir) / "report.json")
    return EXIT_OK


def cmd_run(args) -> int:
    return _run(args, "full")


def cmd_ablate(args) -> int:
    return _run(args, args.variant)


def cmd_evaluate(args) -> int:
    pred_ids, pred = read_labels(args.pred)
    true_ids, truth = read_labels(args.truth)
    if len(pred) != len(truth):
        raise dataio.DataError(f"length mismatch: {len(pred)} predictions, {len(truth)} true labels")
    if pred_ids is not None and true_ids is not None and not np.array_equal(pred_ids, true_ids):
        raise dataio.DataError("sample ids of prediction and truth files differ")
    n_classes = args.classes or int(max(pred.max(initial=0), truth.max(initial=0))) + 1
    if n_classes < 2:
        raise dataio.DataError("need at least one known class and the unknown class")
    try:
        report = DiagnosisReport.from_predictions(truth, pred, n_classes - 1)
    except ValueError as exc:
        raise dataio.DataError(str(exc)) from None
    print(f"u_recall {report.u_recall:.4f}")
    print(f"acc {report.acc:.4f}" + (" (degenerate: no known samples)" if "no_known_samples" in report.flags else ""))
    print(f"macro_f1 {report.macro_f1:.4f}")
    if args.out:
        write_report(report, args.out)
        write_confusion_csv(report.confusion, Path(args.out).with_suffix(".confusion.csv"))
    return EXIT_OK


def cmd_report(args) -> int:
    reports = [read_report(p) for p in args.reports]
    print("speed  variant            seed  u_recall  acc     macro_f1  |D_p|  |D_s|")
    for r in reports:
        print(f"{'-' if r.speed is None else r.speed:<6} {r.variant:<18} {r.seed:<5} {r.u_recall:<9.4f} "
              f"{r.acc:<7.4f} {r.macro_f1:<9.4f} {r.n_pseudo:<6} {r.n_reliable}")
    if len(reports) > 1:
        mean = {m: float(np.mean([getattr(r, m) for r in reports])) for m in ("u_recall", "acc", "macro_f1")}
        print(f"mean   {'':<18} {'':<5} {mean['u_recall']:<9.4f} {mean['acc']:<7.4f} {mean['macro_f1']:.4f}")
    if args.long:
        write_long_csv(reports, args.long)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    fmt = argparse.RawDescriptionHelpFormatter
    p = argparse.ArgumentParser(prog="sofd", description=__doc__, epilog=_keys_epilog(), formatter_class=fmt)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp, required=False):
        sp.add_argument("--config", required=required, help="TOML config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="dotted config override")

    sp = sub.add_parser("ingest", help="label, select and split a raw CSV by speed", epilog=_keys_epilog(),
                        formatter_class=fmt)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    with_config(sp)
    sp.set_defaults(func=cmd_ingest)

    sp = sub.add_parser("synth", help="write a synthetic prepared dataset", epilog=_keys_epilog(), formatter_class=fmt)
    with_config(sp)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--speed", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_synth)

    for name, func in (("run", cmd_run), ("ablate", cmd_ablate)):
        sp = sub.add_parser(name, help=f"{name} the full pipeline" if name == "run" else "run an ablation variant",
                            epilog=_keys_epilog(), formatter_class=fmt)
        with_config(sp)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--speed", type=int)
        sp.add_argument("--out", help="output directory (overrides output_dir)")
        if name == "ablate":
            sp.add_argument("--variant", required=True, choices=[v for v in VARIANTS if v != "full"])
        sp.set_defaults(func=func)

    sp = sub.add_parser("evaluate", help="score a prediction file against a truth file")
    sp.add_argument("--pred", required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--classes", type=int, help="number of classes including unknown (default: inferred)")
    sp.add_argument("--out", help="write a report JSON here")
    sp.set_defaults(func=cmd_evaluate)

    sp = sub.add_parser("report", help="summarize report files")
    sp.add_argument("reports", nargs="+")
    sp.add_argument("--long", help="write plot-ready long-format CSV")
    sp.set_defaults(func=cmd_report)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.INFO
    logging.basicConfig(level=level, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, dataio.DataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PIPELINE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
