"""Experiment runner: configs, seeded runs, grid search, comparisons, history files.

An experiment is described by one YAML file::

    name: fmnist-goal
    objective:
      kind: mlp                  # mlp | quadratic | double_well | rosenbrock
      dataset:
        kind: idx                # idx | cifar10 | blobs
        train: [train-images-idx3-ubyte.gz, train-labels-idx1-ubyte.gz]
        test: [t10k-images-idx3-ubyte.gz, t10k-labels-idx1-ubyte.gz]
        limit: 10000             # optional: first n training samples
      hidden_dims: [64, 32]
      activation: tanh
    optimizer: {kind: GOAL_PHS, alpha: 0.01, mass: 0.1, friction: 0.1}
    policy: {target: 0.15, factor: 5, mode: absolute_fraction, monitor: ema}
    budget: {epochs: 20}         # or {steps: N}
    batch: {size: 128, drop_last: false}
    eval: {every: null, baseline_size: 2048}
    seeds: [0, 1, 2]
    output: runs/fmnist

Relative dataset paths are resolved against the ``data_root`` argument, else
``$GOALPHS_DATA_ROOT``, else ``./data``.  Analytic objectives take ``dim``, ``curvatures``,
``offset``, ``init`` (start point) and ``noise`` (gradient noise scale).
Every default is written back into the config echo of each record.
"""
import concurrent.futures
import copy
import csv
import io
import itertools
import json
import math
import os
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from . import data as dataio
from . import models
from .errors import ConfigError, DivergenceError
from .optim import (GoalPolicy, Monitor, PhsConfig, PhsState, StepBudget, check_stability,
                    run_optimizer)

__all__ = [
    "DATA_ROOT_ENV", "HISTORY_COLUMNS", "DEFAULTS", "load_config", "validate_config",
    "build_problem", "run", "grid_search", "compare", "emit_history", "read_history_csv",
    "GridResult", "ComparisonTable", "RECORD_SCHEMA",
]

DATA_ROOT_ENV = "GOALPHS_DATA_ROOT"
OPTIMIZERS = ("SGD", "PHS", "GOAL_PHS")
HISTORY_COLUMNS = ("step", "train_loss", "ema_loss", "kinetic", "potential",
                   "total_energy", "test_accuracy", "triggered")

DEFAULTS = {
    "name": "experiment",
    "objective": {},
    "optimizer": {},
    "policy": None,
    "budget": {"epochs": 30},
    "batch": {"size": 128, "drop_last": False},
    "eval": {"every": None, "baseline_size": 2048},
    "seeds": [0],
    "output": "runs",
    "debug": False,
    "workers": 1,
    "max_cells": 64,
}


def _merge(base, override):
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path):
    text = Path(path).read_text()
    try:
        raw = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})", ["<file>"]) from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping", ["<file>"])
    return validate_config(raw)


def validate_config(raw):
    """Fill defaults and check every field; raise one error naming all problems."""
    cfg = _merge(DEFAULTS, raw)
    problems = []

    def bad(field_name, why):
        problems.append((field_name, why))

    obj = cfg["objective"]
    kind = obj.get("kind")
    if kind not in ("mlp", "quadratic", "double_well", "rosenbrock"):
        bad("objective.kind", f"unknown objective {kind!r}")
    if kind == "mlp":
        ds = obj.get("dataset") or {}
        if ds.get("kind") not in ("idx", "cifar10", "blobs"):
            bad("objective.dataset.kind", f"unknown dataset {ds.get('kind')!r}")
        obj.setdefault("hidden_dims", [64, 32])
        obj.setdefault("activation", "tanh")
        if obj["activation"] not in ("tanh", "relu"):
            bad("objective.activation", "must be tanh or relu")
    elif kind is not None:
        obj.setdefault("noise", 0.0)
        if kind == "double_well":
            obj.setdefault("offset", 0.3)
            if not abs(obj["offset"]) < models.DOUBLE_WELL_OFFSET_BOUND:
                bad("objective.offset", "outside the two-well range")
        if "init" not in obj:
            bad("objective.init", "analytic objectives need a start point")
        if not obj.get("noise", 0) >= 0:
            bad("objective.noise", "must be non-negative")

    opt = cfg["optimizer"]
    okind = opt.get("kind")
    if okind not in OPTIMIZERS:
        bad("optimizer.kind", f"must be one of {OPTIMIZERS}")
    alpha = opt.get("alpha")
    if not (isinstance(alpha, (int, float)) and alpha > 0):
        bad("optimizer.alpha", "must be a positive number")
    if okind == "SGD":
        for extra in ("mass", "friction"):
            if extra in opt:
                bad(f"optimizer.{extra}", "SGD takes no mass or friction")
        if cfg["policy"] is not None:
            bad("policy", "SGD takes no braking policy")
    elif okind in ("PHS", "GOAL_PHS"):
        opt.setdefault("mass", 1.0)
        opt.setdefault("friction", 0.1)
        if not (isinstance(opt["mass"], (int, float)) and opt["mass"] > 0):
            bad("optimizer.mass", "must be positive")
        if not (isinstance(opt["friction"], (int, float)) and opt["friction"] >= 0):
            bad("optimizer.friction", "must be non-negative")
    if okind == "GOAL_PHS":
        if not cfg["policy"]:
            bad("policy", "GOAL_PHS requires a policy")
        else:
            pol = _merge({"mode": "reduction", "monitor": "ema", "ema_decay": 0.9,
                          "eval_every": 1}, cfg["policy"])
            cfg["policy"] = pol
            try:
                _policy(pol)
            except ConfigError as exc:
                for f in exc.fields or ["policy"]:
                    bad(f"policy.{f}", str(exc))
            except (KeyError, TypeError, ValueError) as exc:
                bad("policy", str(exc))
    elif okind == "PHS" and cfg["policy"] is not None:
        bad("policy", "plain PHS takes no braking policy (use GOAL_PHS)")

    budget = cfg["budget"]
    if "steps" in (raw.get("budget") or {}):
        budget.pop("epochs", None)
    try:
        StepBudget(budget.get("steps"), budget.get("epochs"))
    except ConfigError as exc:
        bad("budget", str(exc))
    if kind != "mlp" and budget.get("steps") is None:
        bad("budget.steps", "analytic objectives need a step budget")
    if not (isinstance(cfg["batch"].get("size"), int) and cfg["batch"]["size"] > 0):
        bad("batch.size", "must be a positive integer")
    every = cfg["eval"].get("every")
    if every is not None and not (isinstance(every, int) and every > 0):
        bad("eval.every", "must be a positive integer or null")
    seeds = cfg["seeds"]
    if not (isinstance(seeds, list) and seeds and all(isinstance(s, int) for s in seeds)):
        bad("seeds", "must be a non-empty list of integers")
    if problems:
        msg = "; ".join(f"{f}: {why}" for f, why in problems)
        raise ConfigError(f"invalid experiment config: {msg}", [f for f, _ in problems])
    return cfg


def _policy(pol):
    kind = pol.get("monitor", "ema")
    monitor = Monitor(kind, decay=pol.get("ema_decay", 0.9), every=pol.get("eval_every", 1))
    return GoalPolicy(pol["target"], pol["factor"], pol.get("mode", "reduction"), monitor)


def _resolve(path, data_root):
    p = Path(path)
    if p.is_absolute():
        return p
    root = data_root or os.environ.get(DATA_ROOT_ENV, "data")
    return Path(root) / p


def _load_dataset(ds, data_root, seed):
    kind = ds["kind"]
    if kind == "blobs":
        full = dataio.synth_blobs(ds.get("n", 600), ds.get("d", 2), ds.get("q", 3),
                                  ds.get("spread", 0.5), ds.get("seed", 0))
        return dataio.split(full, ds.get("test_fraction", 0.2), ds.get("seed", 0))
    if kind == "idx":
        train = dataio.load_idx(*(_resolve(p, data_root) for p in ds["train"]), name="train")
        test = (dataio.load_idx(*(_resolve(p, data_root) for p in ds["test"]), name="test")
                if ds.get("test") else None)
    else:
        train = dataio.load_cifar10_binary([_resolve(p, data_root) for p in ds["train"]], "train")
        test = (dataio.load_cifar10_binary([_resolve(p, data_root) for p in ds["test"]], "test")
                if ds.get("test") else None)
    if ds.get("limit"):
        train = dataio.subset(train, np.arange(min(ds["limit"], len(train))))
    if test is None:
        train, test = dataio.split(train, ds.get("test_fraction", 0.2), ds.get("seed", 0))
    return train, test


@dataclass
class Problem:
    objective: object
    init: np.ndarray
    evaluate: object = None
    curvature_max: float = None


def build_problem(cfg, seed, data_root=None):
    """Objective, start point and evaluation hook for one seed."""
    obj = cfg["objective"]
    kind = obj["kind"]
    if kind == "mlp":
        train, test = _load_dataset(obj["dataset"], data_root, seed)
        spec = models.MlpSpec(train.features.shape[1], obj["hidden_dims"], train.n_classes,
                              obj["activation"])
        clf = models.MlpClassifier(spec, train)
        return Problem(clf, spec.init_params(seed), lambda th: clf.accuracy(th, test))
    init = np.asarray(obj["init"], dtype=np.float64).reshape(-1)
    if kind == "quadratic":
        curv = obj.get("curvatures", [1.0] * obj.get("dim", init.size))
        f = models.quadratic(len(curv), curv)
        lam = float(np.max(curv))
    elif kind == "double_well":
        f = models.double_well(obj["offset"], obj.get("dim", init.size))
        lam = None
    else:
        f = models.rosenbrock(obj.get("dim", init.size))
        lam = None
    if init.size != f.dim:
        init = np.full(f.dim, init[0]) if init.size == 1 else init
    if obj.get("noise"):
        f = models.NoisyGradient(f, obj["noise"])
    return Problem(f, init, None, lam)


def _run_one(cfg, seed, data_root=None):
    prob = build_problem(cfg, seed, data_root)
    opt = cfg["optimizer"]
    method = "sgd" if opt["kind"] == "SGD" else "phs"
    pc = PhsConfig(opt["alpha"], opt.get("mass", 1.0), opt.get("friction", 0.0))
    policy = _policy(cfg["policy"]) if opt["kind"] == "GOAL_PHS" else None
    budget = StepBudget(cfg["budget"].get("steps"), cfg["budget"].get("epochs"))
    plan = dataio.BatchPlan(cfg["batch"]["size"], seed, cfg["batch"].get("drop_last", False))
    if prob.curvature_max is not None:
        check_stability(pc, prob.curvature_max, method)
    try:
        rec = run_optimizer(prob.objective, PhsState(prob.init), pc, policy, budget, seed,
                            method=method, batch_plan=plan, evaluate=prob.evaluate,
                            eval_every=cfg["eval"].get("every"),
                            baseline_size=cfg["eval"].get("baseline_size", 2048))
    except DivergenceError as exc:
        rec = exc.record
    rec.method = opt["kind"]
    rec.config = _echo(cfg)
    return rec


def _echo(cfg):
    return json.loads(json.dumps({k: v for k, v in cfg.items() if k not in ("output", "workers")}))


def _run_file_stem(cfg, seed):
    return f"{cfg['name']}__{cfg['optimizer']['kind'].lower()}__seed{seed}"


def run(cfg, out_dir=None, data_root=None, persist=True, formats=("csv", "json")):
    """Run every seed of ``cfg``; persist history/record/metadata files per run."""
    cfg = validate_config(cfg)
    seeds = cfg["seeds"]
    workers = cfg.get("workers", 1)
    if workers > 1 and len(seeds) > 1:
        with concurrent.futures.ProcessPoolExecutor(workers) as pool:
            records = list(pool.map(_run_one, [cfg] * len(seeds), seeds,
                                    [data_root] * len(seeds)))
    else:
        records = [_run_one(cfg, s, data_root) for s in seeds]
    if persist:
        out = Path(out_dir or cfg["output"])
        out.mkdir(parents=True, exist_ok=True)
        for rec in records:
            stem = _run_file_stem(cfg, rec.seed)
            for fmt in formats:
                emit_history(rec, fmt, out, stem=stem, debug=cfg.get("debug", False))
            (out / f"{stem}.meta.json").write_text(json.dumps(
                {"duration_seconds": rec.duration, "digest": rec.digest()}, indent=2))
    return records


# -- history emission ---------------------------------------------------------

RECORD_SCHEMA = {
    "type": "object",
    "required": ["method", "seed", "config", "initial_loss", "losses", "ema_losses",
                 "energies", "frictions", "eval_steps", "test_accuracy", "trigger_step",
                 "diverged", "diagnostic", "digest"],
    "properties": {
        "method": {"enum": list(OPTIMIZERS) + ["sgd", "phs"]},
        "seed": {"type": "integer"},
        "config": {"type": "object"},
        "initial_loss": {"type": "number"},
        "losses": {"type": "array", "items": {"type": "number"}},
        "ema_losses": {"type": "array", "items": {"type": "number"}},
        "energies": {"type": "array", "items": {
            "type": "array", "minItems": 4, "maxItems": 4, "items": {"type": "number"}}},
        "frictions": {"type": "array", "items": {"type": "number", "minimum": 0}},
        "eval_steps": {"type": "array", "items": {"type": "integer"}},
        "test_accuracy": {"type": "array",
                          "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "trigger_step": {"type": ["integer", "null"]},
        "diverged": {"type": "boolean"},
        "diagnostic": {"type": "string"},
        "digest": {"type": "string"},
    },
}


def _history_rows(record, debug=False):
    acc = dict(zip(record.eval_steps, record.test_accuracy))
    for k, loss in enumerate(record.losses):
        e = record.energies[k]
        row = [k, repr(loss), repr(record.ema_losses[k]), repr(e.kinetic), repr(e.potential),
               repr(e.total), repr(acc[k]) if k in acc else "",
               int(record.trigger_step == k)]
        if debug:
            row.append(repr(record.frictions[k]))
        yield row


def emit_history(record, fmt, out_dir, stem=None, debug=False):
    """Write ``record`` as ``<stem>.csv`` (per-step history) or ``<stem>.json``.

    With ``debug`` the CSV gains a trailing ``friction`` column.
    """
    out_dir = Path(out_dir)
    stem = stem or f"{record.method.lower()}__seed{record.seed}"
    if fmt == "csv":
        path = out_dir / f"{stem}.csv"
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(HISTORY_COLUMNS + (("friction",) if debug else ()))
        w.writerows(_history_rows(record, debug))
        path.write_text(buf.getvalue())
    elif fmt == "json":
        path = out_dir / f"{stem}.json"
        path.write_text(json.dumps(record.to_dict(), indent=1))
    else:
        raise ConfigError(f"unknown format {fmt!r}", ["format"])
    return path


def read_history_csv(path):
    """Parse a history CSV back into column lists (blank accuracies become None)."""
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    cols = {}
    for name in rows[0].keys() if rows else HISTORY_COLUMNS:
        vals = [r[name] for r in rows]
        if name in ("step", "triggered"):
            cols[name] = [int(v) for v in vals]
        else:
            cols[name] = [float(v) if v != "" else None for v in vals]
    return cols


# -- grid search --------------------------------------------------------------

@dataclass
class GridResult:
    axes: dict
    rows: list = field(default_factory=list)

    def cell(self, **coords):
        for r in self.rows:
            if all(r[k] == v for k, v in coords.items()):
                return r
        raise KeyError(coords)

    def matrix(self, alpha, value="final_accuracy"):
        """``friction x mass`` matrix of ``value`` at one alpha (NaN where diverged)."""
        fr, ms = self.axes["friction"], self.axes["mass"]
        M = np.full((len(fr), len(ms)), np.nan)
        for r in self.rows:
            if r["alpha"] == alpha and not r["diverged"] and r[value] is not None:
                M[fr.index(r["friction"]), ms.index(r["mass"])] = r[value]
        return M

    def write(self, out_dir, name="grid"):
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        cols = ["alpha", "friction", "mass", "final_accuracy", "best_accuracy",
                "final_loss", "diverged"]
        with open(out_dir / f"{name}_cells.csv", "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(cols)
            for r in self.rows:
                w.writerow(["" if r[c] is None else r[c] for c in cols])
        paths = []
        value = "final_accuracy" if any(r["final_accuracy"] is not None for r in self.rows) \
            else "final_loss"
        for alpha in self.axes["alpha"]:
            M = self.matrix(alpha, value)
            path = out_dir / f"{name}_matrix_alpha{alpha:g}.csv"
            with open(path, "w", newline="") as f:
                w = csv.writer(f, lineterminator="\n")
                w.writerow([f"friction\\mass ({value})"] + [f"{m:g}" for m in self.axes["mass"]])
                for fr, row in zip(self.axes["friction"], M):
                    w.writerow([f"{fr:g}"] + ["nan" if math.isnan(v) else repr(float(v))
                                              for v in row])
            paths.append(path)
        return paths


def grid_search(base, axes, max_cells=None, data_root=None):
    """Run ``base`` (a PHS or GOAL_PHS config) over the product of ``axes``.

    ``axes`` maps ``alpha``/``mass``/``friction`` to value lists; missing axes
    take the base value.  Cells iterate alpha-major, then friction, then mass,
    each in the order given.  A cell is flagged diverged if any of its seeds
    diverged; its accuracies are the medians over the remaining seeds.
    """
    base = validate_config(base)
    if base["optimizer"]["kind"] == "SGD":
        raise ConfigError("grid search varies mass and friction; use a PHS config", ["optimizer"])
    unknown = set(axes) - {"alpha", "mass", "friction"}
    if unknown:
        raise ConfigError(f"unknown grid axes {sorted(unknown)}", sorted(unknown))
    full = {k: list(axes[k]) if axes.get(k) is not None else [base["optimizer"][k]]
            for k in ("alpha", "friction", "mass")}
    if any(not v for v in full.values()):
        raise ConfigError("grid axes must be non-empty", ["axes"])
    n_cells = math.prod(len(v) for v in full.values())
    limit = max_cells if max_cells is not None else base["max_cells"]
    if n_cells > limit:
        raise ConfigError(f"grid has {n_cells} cells, above the limit {limit}", ["max_cells"])

    result = GridResult(full)
    for alpha, fr, m in itertools.product(full["alpha"], full["friction"], full["mass"]):
        cfg = copy.deepcopy(base)
        cfg["optimizer"].update(alpha=alpha, friction=fr, mass=m)
        recs = run(cfg, data_root=data_root, persist=False)
        ok = [r for r in recs if not r.diverged]
        result.rows.append({
            "alpha": alpha, "friction": fr, "mass": m,
            "final_accuracy": _median([r.final_accuracy for r in ok]),
            "best_accuracy": _median([r.best_accuracy for r in ok]),
            "final_loss": _median([r.final_loss for r in ok]),
            "diverged": len(ok) < len(recs),
            "records": recs,
        })
    return result


def _median(values):
    values = [v for v in values if v is not None]
    # median_low keeps every summary equal to some record's value
    return statistics.median_low(values) if values else None


# -- comparison tables ----------------------------------------------------------

@dataclass
class ComparisonTable:
    rows: list

    COLUMNS = ("optimizer", "alpha", "friction", "mass", "policy", "median_accuracy",
               "best_accuracy", "median_final_loss", "best")

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.COLUMNS)
        for r in self.rows:
            w.writerow(["" if r[c] is None else r[c] for c in self.COLUMNS])
        return buf.getvalue()

    def to_text(self):
        def fmt(v):
            if v is None:
                return "/"
            if isinstance(v, float):
                return f"{v:.4g}"
            return str(v)
        cells = [list(self.COLUMNS[:-1])]
        for r in self.rows:
            line = [fmt(r[c]) for c in self.COLUMNS[:-1]]
            if r["best"]:
                line[0] = "*" + line[0]
            cells.append(line)
        widths = [max(len(row[i]) for row in cells) for i in range(len(cells[0]))]
        return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip()
                         for row in cells) + "\n"


def _policy_label(cfg):
    pol = cfg.get("policy")
    if cfg["optimizer"]["kind"] != "GOAL_PHS" or not pol:
        return "/"
    return f"braking at {pol['target']:g} ({pol.get('mode', 'reduction')}) x{pol['factor']:g}"


def compare(configs, seeds=None, data_root=None):
    """Run each config over the same seeds and tabulate median/best results.

    The best row per alpha (highest median accuracy, else lowest median final
    loss) is flagged.  Returns ``(table, records_per_config)``.
    """
    configs = [validate_config(c) for c in configs]
    if not configs:
        raise ConfigError("nothing to compare", ["configs"])
    ref = configs[0]
    for i, c in enumerate(configs[1:], 1):
        if c["objective"] != ref["objective"] or c["budget"] != ref["budget"]:
            raise ConfigError(f"config {i} differs from config 0 in objective or budget",
                              [f"configs[{i}]"])
    rows, all_records = [], []
    for c in configs:
        c = copy.deepcopy(c)
        if seeds is not None:
            c["seeds"] = list(seeds)
        recs = run(c, data_root=data_root, persist=False)
        all_records.append(recs)
        finals = [r.final_accuracy for r in recs if r.final_accuracy is not None]
        opt = c["optimizer"]
        rows.append({
            "optimizer": opt["kind"], "alpha": opt["alpha"],
            "friction": opt.get("friction") if opt["kind"] != "SGD" else None,
            "mass": opt.get("mass") if opt["kind"] != "SGD" else None,
            "policy": _policy_label(c),
            "median_accuracy": _median(finals),
            "best_accuracy": max(finals) if finals else None,
            "median_final_loss": _median([r.final_loss for r in recs]),
            "best": False,
        })
    for alpha in {r["alpha"] for r in rows}:
        group = [r for r in rows if r["alpha"] == alpha]
        if all(r["median_accuracy"] is not None for r in group):
            max(group, key=lambda r: r["median_accuracy"])["best"] = True
        else:
            min(group, key=lambda r: r["median_final_loss"])["best"] = True
    return ComparisonTable(rows), all_records
