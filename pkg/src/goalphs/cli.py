"""Command line entry point: ``goalphs {run,grid,compare,emit}``.

Exit codes: 0 success, 2 invalid configuration, 3 every run diverged,
4 I/O failure.
"""
import argparse
import copy
import json
import sys
from pathlib import Path

from . import harness
from .errors import ConfigError, ConsistencyError, FormatError
from .optim import RunRecord

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO = 0, 2, 3, 4


def _load(args):
    cfg = harness.load_config(args.config)
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    return cfg


def cmd_run(args):
    cfg = _load(args)
    formats = (args.format,) if args.format else ("csv", "json")
    records = harness.run(cfg, out_dir=args.out, data_root=args.data_root, formats=formats)
    for r in records:
        acc = "" if r.final_accuracy is None else f" final_acc={r.final_accuracy:.4f}"
        print(f"seed={r.seed} final_loss={r.final_loss:.6g}{acc} "
              f"trigger={r.trigger_step} diverged={r.diverged}")
    return EXIT_DIVERGED if all(r.diverged for r in records) else EXIT_OK


def cmd_grid(args):
    cfg = _load(args)
    axes = cfg.get("grid") or {}
    result = harness.grid_search(cfg, axes, data_root=args.data_root)
    out = Path(args.out or cfg["output"])
    paths = result.write(out, cfg["name"])
    for p in paths:
        print(p)
    return EXIT_DIVERGED if all(r["diverged"] for r in result.rows) else EXIT_OK


def cmd_compare(args):
    base = _load(args)
    variants = base.pop("compare", None) or []
    if not variants:
        raise ConfigError("compare needs a 'compare' list of optimizer/policy variants",
                          ["compare"])
    configs = []
    for v in variants:
        c = copy.deepcopy(base)
        c["optimizer"] = v["optimizer"]
        c["policy"] = v.get("policy")
        configs.append(c)
    table, records = harness.compare(configs, seeds=base["seeds"], data_root=args.data_root)
    out = Path(args.out or base["output"])
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{base['name']}_comparison.csv").write_text(table.to_csv())
    (out / f"{base['name']}_comparison.txt").write_text(table.to_text())
    print(table.to_text(), end="")
    flat = [r for recs in records for r in recs]
    return EXIT_DIVERGED if all(r.diverged for r in flat) else EXIT_OK


def cmd_emit(args):
    record = RunRecord.from_dict(json.loads(Path(args.record).read_text()))
    out = Path(args.out or ".")
    out.mkdir(parents=True, exist_ok=True)
    stem = Path(args.record).stem
    for fmt in ((args.format,) if args.format else ("csv",)):
        print(harness.emit_history(record, fmt, out, stem=stem, debug=args.debug))
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="goalphs", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)
    for name, fn, help_ in (("run", cmd_run, "run every seed of an experiment"),
                            ("grid", cmd_grid, "mass x friction (x alpha) grid search"),
                            ("compare", cmd_compare, "SGD / PHS / goal-oriented comparison table")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--seed", type=int, help="run only this seed")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--format", choices=("csv", "json"), help="history format (default both)")
        p.add_argument("--data-root", help=f"dataset root (default ${harness.DATA_ROOT_ENV})")
        p.set_defaults(func=fn)
    p = sub.add_parser("emit", help="re-emit a saved record JSON as history CSV/JSON")
    p.add_argument("--record", required=True, help="RunRecord JSON written by 'run'")
    p.add_argument("--out", help="output directory")
    p.add_argument("--format", choices=("csv", "json"))
    p.add_argument("--debug", action="store_true", help="add the per-step friction column")
    p.set_defaults(func=cmd_emit)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, FormatError, ConsistencyError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
