"""Command-line pipeline: gen, train, attribute, fidelity, report.

Every command is driven by one RunConfig resolved from defaults, an optional
JSON config file, MOBAXAI_* environment overrides, and explicit flags (in that
order of precedence). Outputs are deterministic for a fixed (config, seed) and
every output file embeds the config digest.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import attribution as attr
from . import datagen as dg
from . import encoding as enc
from . import fidelity as fid
from . import models as md

ENV_PREFIX = "MOBAXAI_"


@dataclasses.dataclass
class RunConfig:
    task: str = "win"
    architectures: tuple = ("lstm", "transformer")
    window: int = 5
    s_grid: tuple = (5, 10, 15, 20)
    k_grid: tuple = (100, 10, 5, 1)
    steps: int = 100
    steps_grid: tuple = ()
    sigma_ratio: float = 0.15
    seed: int = 0
    games: int = 120
    signal_strength: float = 0.9
    min_length: int = 360
    max_length: int = 600
    epochs: int = 30
    batch_size: int = 64
    learning_rate: float = 1e-3
    patience: int = 5
    fidelity_methods: tuple = ("ig", "sg")
    fidelity_seeds: tuple = (0, 1, 2)
    fidelity_train_limit: int = 400
    fidelity_test_limit: int = 200
    attribution_count: int = 3
    drop_threshold: float = 0.05
    workers: int = 1
    dataset_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"

    def __post_init__(self):
        if self.task not in dg.TASKS:
            raise ValueError(f"unknown task {self.task!r}")
        for arch in self.architectures:
            if arch not in md.ARCHITECTURES:
                raise ValueError(f"unknown architecture {arch!r}")
        if not self.s_grid or not self.k_grid:
            raise ValueError("s_grid and k_grid must be non-empty")
        paths = (self.dataset_dir, self.checkpoint_dir, self.report_dir)
        if len(set(paths)) != len(paths):
            raise ValueError(f"dataset/checkpoint/report paths must be distinct: {paths}")

    def to_dict(self):
        doc = dataclasses.asdict(self)
        for key, value in doc.items():
            if isinstance(value, tuple):
                doc[key] = list(value)
        return doc

    @property
    def digest(self):
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()[:12]

    def generator_config(self):
        return dg.GeneratorConfig(min_length=self.min_length, max_length=self.max_length,
                                  signal_strength=self.signal_strength)


_FIELD_TYPES = {f.name: f for f in dataclasses.fields(RunConfig)}
_TUPLE_FIELDS = {f.name for f in dataclasses.fields(RunConfig) if f.type == "tuple"}


def _coerce(name, value):
    if name not in _FIELD_TYPES:
        raise ValueError(f"unknown config key {name!r}")
    default = getattr(RunConfig, name)
    if name in _TUPLE_FIELDS:
        if isinstance(value, str):
            value = [v for v in value.split(",") if v != ""]
        elem = str if name in ("architectures", "fidelity_methods") else int
        return tuple(elem(v) for v in value)
    if isinstance(default, bool):
        return str(value).lower() in ("1", "true", "yes") if isinstance(value, str) else bool(value)
    return type(default)(value)


def load_config(config_path=None, env=None, overrides=None):
    """defaults < JSON file < MOBAXAI_* env vars < explicit overrides."""
    values = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            for key, value in json.load(fh).items():
                values[key] = _coerce(key, value)
    env = os.environ if env is None else env
    for name in _FIELD_TYPES:
        raw = env.get(ENV_PREFIX + name.upper())
        if raw is not None:
            values[name] = _coerce(name, raw)
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = _coerce(key, value)
    return RunConfig(**values)


def _write_json(path, doc):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _write_text(path, text):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(text)


def _require_fresh(paths, force):
    clashes = [p for p in paths if os.path.exists(p)]
    if clashes and not force:
        raise FileExistsError(
            f"refusing to overwrite {clashes[0]} (pass --force to allow)"
        )


def _split_paths(cfg):
    return {name: os.path.join(cfg.dataset_dir, f"{name}.jsonl")
            for name in ("train", "val", "test")}


# ---------------------------------------------------------------------------
# gen


def cmd_gen(cfg, force=False):
    paths = _split_paths(cfg)
    _require_fresh(list(paths.values()), force)
    os.makedirs(cfg.dataset_dir, exist_ok=True)
    gen_cfg = cfg.generator_config()
    seeds = [cfg.seed * 1_000_000 + i for i in range(cfg.games)]
    records = dg.generate_games(seeds, gen_cfg)
    n_test = max(1, round(0.1 * cfg.games))
    n_val = max(1, round(0.1 * cfg.games))
    splits = {
        "train": records[: cfg.games - n_val - n_test],
        "val": records[cfg.games - n_val - n_test: cfg.games - n_test],
        "test": records[cfg.games - n_test:],
    }
    for name, recs in splits.items():
        dg.save_dataset(recs, paths[name])
    summary = {
        "config_digest": cfg.digest,
        "config": cfg.to_dict(),
        "splits": {name: {"games": len(recs), "game_ids": [r.game_id for r in recs]}
                   for name, recs in splits.items()},
    }
    _write_json(os.path.join(cfg.dataset_dir, "gen_summary.json"), summary)
    lines = [f"dataset generated (config {cfg.digest})"]
    for name in ("train", "val", "test"):
        lines.append(f"  {name:<5} {len(splits[name]):>5} games -> {paths[name]}")
    _write_text(os.path.join(cfg.dataset_dir, "gen_summary.txt"), "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


# ---------------------------------------------------------------------------
# train


def _load_splits(cfg):
    paths = _split_paths(cfg)
    return {name: dg.load_dataset(path) for name, path in paths.items()}


def _horizons(cfg):
    return [0] if cfg.task == "win" else list(cfg.s_grid)


def _checkpoint_path(cfg, arch, horizon):
    return os.path.join(cfg.checkpoint_dir, f"{cfg.task}_{arch}_S{horizon}")


def _task_data(cfg, schema, splits, horizon):
    out = {}
    for name, records in splits.items():
        windows = enc.task_windows(records, schema, cfg.task, horizon, cfg.window)
        X, y = enc.stack_windows(windows)
        out[name] = (X, y, [(w.t, w.label) for w in windows])
    return out


def cmd_train(cfg, force=False):
    splits = _load_splits(cfg)
    schema = enc.fit_normalization(splits["train"], enc.mini_schema_skeleton())
    os.makedirs(cfg.checkpoint_dir, exist_ok=True)
    os.makedirs(cfg.report_dir, exist_ok=True)

    _require_fresh([_checkpoint_path(cfg, arch, horizon)
                    for arch in cfg.architectures for horizon in _horizons(cfg)], force)
    acc_rows = []
    curve_rows = []
    for arch in cfg.architectures:
        for horizon in _horizons(cfg):
            data = _task_data(cfg, schema, splits, horizon)
            (X_tr, y_tr, _), (X_val, y_val, _) = data["train"], data["val"]
            X_te, y_te, meta_te = data["test"]
            if not len(y_tr) or not len(y_val) or not len(y_te):
                raise RuntimeError(f"no instances for task {cfg.task} at S={horizon}")
            model = md.SequenceClassifier(
                schema=schema, architecture=arch,
                config=md.default_config(arch),
                n_classes=dg.TASK_CLASSES[cfg.task],
                epochs=cfg.epochs, batch_size=cfg.batch_size,
                learning_rate=cfg.learning_rate, patience=cfg.patience, seed=cfg.seed,
            )
            model.fit(X_tr, y_tr, validation=(X_val, y_val))
            ckpt = _checkpoint_path(cfg, arch, horizon)
            md.save_checkpoint(model, ckpt)

            probs = model.predict_proba(X_te)
            preds = probs.argmax(axis=1)
            acc = float(np.mean(preds == y_te))
            acc_rows.append({"task": cfg.task, "model": arch, "S": horizon,
                             "accuracy": acc, "n_test": len(y_te),
                             "config": cfg.digest})
            pred_path = os.path.join(cfg.report_dir,
                                     f"predictions_{cfg.task}_{arch}_S{horizon}.jsonl")
            with open(pred_path, "w", encoding="utf-8") as fh:
                for (t, label), pred, p in zip(meta_te, preds, probs):
                    fh.write(json.dumps({"t": t, "label": int(label), "pred": int(pred),
                                         "probs": [round(float(v), 6) for v in p]},
                                        separators=(",", ":")) + "\n")
            if cfg.task == "win":
                times = np.array([t for t, _ in meta_te])
                for bucket in sorted(set(times.tolist())):
                    sel = times == bucket
                    curve_rows.append({
                        "task": cfg.task, "model": arch, "game_time": int(bucket),
                        "accuracy": float(np.mean(preds[sel] == y_te[sel])),
                        "n": int(sel.sum()), "config": cfg.digest,
                    })

    _write_rows(os.path.join(cfg.report_dir, "accuracy.csv"),
                ("task", "model", "S", "accuracy", "n_test", "config"), acc_rows)
    if curve_rows:
        _write_rows(os.path.join(cfg.report_dir, "win_curve.csv"),
                    ("task", "model", "game_time", "accuracy", "n", "config"), curve_rows)
    summary = {"config_digest": cfg.digest, "accuracy": acc_rows, "win_curve": curve_rows}
    _write_json(os.path.join(cfg.report_dir, f"train_summary_{cfg.task}.json"), summary)
    lines = [f"training complete (config {cfg.digest})"]
    for row in acc_rows:
        lines.append(f"  {row['task']:<7} {row['model']:<12} S={row['S']:<3} "
                     f"accuracy={row['accuracy']:.3f} (n={row['n_test']})")
    _write_text(os.path.join(cfg.report_dir, f"train_summary_{cfg.task}.txt"),
                "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def _write_rows(path, fields, rows):
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


# ---------------------------------------------------------------------------
# attribute


def _load_model(cfg, arch, horizon):
    path = _checkpoint_path(cfg, arch, horizon)
    if not os.path.isdir(path):
        raise FileNotFoundError(f"no checkpoint at {path}; run the train command first")
    return md.load_checkpoint(path)


def _explainer(cfg, model, name, steps=None):
    if name == "ig":
        return attr.IntegratedGradients(model, steps=steps or cfg.steps)
    if name == "sg":
        return attr.SmoothGrad(model, steps=steps or cfg.steps,
                               sigma_ratio=cfg.sigma_ratio, seed=cfg.seed)
    if name == "random":
        return attr.RandomAttribution(model, seed=cfg.seed)
    raise ValueError(f"unknown attribution method {name!r}")


def cmd_attribute(cfg, instances=None, force=False, fmt="text"):
    splits = _load_splits(cfg)
    horizon = _horizons(cfg)[0]
    os.makedirs(cfg.report_dir, exist_ok=True)
    dropped = 0
    produced = 0
    stdout_chunks = []
    for arch in cfg.architectures:
        model = _load_model(cfg, arch, horizon)
        windows = enc.task_windows(splits["test"], model.schema, cfg.task, horizon, cfg.window)
        if not windows:
            raise RuntimeError(f"no test instances for task {cfg.task}")
        picks = instances if instances else list(range(min(cfg.attribution_count, len(windows))))
        for idx in picks:
            if not 0 <= idx < len(windows):
                raise IndexError(f"instance {idx} out of range (0..{len(windows) - 1})")
            window = windows[idx]
            for method in ("ig", "sg"):
                amap = _explainer(cfg, model, method).attribute(window.X)
                if not np.all(np.isfinite(amap.scores)):
                    dropped += 1
                    continue
                produced += 1
                k = min(5, model.schema.d_in)
                doc = attr.report_dict(amap, k, task=cfg.task)
                doc.update({"config_digest": cfg.digest, "model": arch,
                            "instance": idx, "t": window.t, "S": horizon,
                            "true_label": int(window.label)})
                stem = f"attr_{cfg.task}_{arch}_S{horizon}_i{idx}_{method}"
                _write_json(os.path.join(cfg.report_dir, stem + ".json"), doc)
                text = (f"config {cfg.digest}  model {arch}  task {cfg.task}  "
                        f"instance {idx} (t={window.t})\n"
                        + attr.render_report(amap, k, task=cfg.task))
                _write_text(os.path.join(cfg.report_dir, stem + ".txt"), text)
                stdout_chunks.append(json.dumps(doc, sort_keys=True) if fmt == "json"
                                     else text)
    print("\n".join(stdout_chunks))
    rate = dropped / max(1, produced + dropped)
    if rate > cfg.drop_threshold:
        print(f"dropped-instance rate {rate:.3f} exceeds threshold {cfg.drop_threshold}",
              file=sys.stderr)
        return 3
    return 0


# ---------------------------------------------------------------------------
# fidelity


def _fidelity_windows(cfg, model, splits):
    horizon = _horizons(cfg)[0]
    train = enc.task_windows(splits["train"], model.schema, cfg.task, horizon, cfg.window)
    test = enc.task_windows(splits["test"], model.schema, cfg.task, horizon, cfg.window)
    X_tr, _ = enc.stack_windows(train[: cfg.fidelity_train_limit])
    X_te, _ = enc.stack_windows(test[: cfg.fidelity_test_limit])
    return X_tr, X_te


def _fidelity_unit(args):
    """One (architecture, method) unit: computes maps once, sweeps k and seeds."""
    cfg_doc, arch, method, steps = args
    cfg = RunConfig(**{k: _coerce(k, v) for k, v in cfg_doc.items()})
    splits = _load_splits(cfg)
    model = _load_model(cfg, arch, _horizons(cfg)[0])
    X_tr, X_te = _fidelity_windows(cfg, model, splits)
    ks = []
    for k in cfg.k_grid:
        clipped = min(k, model.schema.d_in)
        if clipped not in ks:
            ks.append(clipped)
    explainer = _explainer(cfg, model, method, steps=steps)
    reports = fid.fidelity_sweep(
        model, [explainer], ks, X_tr, X_te, seeds=cfg.fidelity_seeds,
        proxy_hyper={"epochs": cfg.epochs, "batch_size": cfg.batch_size,
                     "learning_rate": cfg.learning_rate, "patience": cfg.patience},
        task=cfg.task,
    )
    out = []
    for report in reports:
        doc = report.to_dict()
        doc.pop("proxy_history")
        doc["steps"] = steps if steps else cfg.steps
        out.append(doc)
    return out


def cmd_fidelity(cfg, force=False):
    os.makedirs(cfg.report_dir, exist_ok=True)
    units = [(cfg.to_dict(), arch, method, None)
             for arch in cfg.architectures for method in cfg.fidelity_methods]
    for steps in cfg.steps_grid:
        units.extend((cfg.to_dict(), arch, "ig", steps) for arch in cfg.architectures)
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            unit_reports = list(pool.map(_fidelity_unit, units))
    else:
        unit_reports = [_fidelity_unit(u) for u in units]
    rows = [doc for batch in unit_reports for doc in batch]
    rows.sort(key=lambda r: (r["task"], r["model"], r["method"], r["steps"],
                             -r["k"], r["seed"]))
    for row in rows:
        row["config"] = cfg.digest

    fields = ("task", "model", "method", "steps", "k", "seed", "fidelity",
              "n_train", "n_test", "dropped_train", "dropped_test", "config")
    _write_rows(os.path.join(cfg.report_dir, "fidelity.csv"), fields, rows)
    _write_json(os.path.join(cfg.report_dir, "fidelity_summary.json"),
                {"config_digest": cfg.digest, "rows": rows})
    text = _fidelity_table(rows, cfg)
    _write_text(os.path.join(cfg.report_dir, "fidelity_summary.txt"), text)
    print(text, end="")

    total = sum(r["n_train"] + r["n_test"] for r in rows)
    dropped = sum(r["dropped_train"] + r["dropped_test"] for r in rows)
    if total and dropped / (total + dropped) > cfg.drop_threshold:
        print(f"dropped-instance rate exceeds threshold {cfg.drop_threshold}",
              file=sys.stderr)
        return 3
    return 0


def _fidelity_table(rows, cfg):
    ks = sorted({r["k"] for r in rows}, reverse=True)
    lines = [f"fidelity by (model, method), config {cfg.digest}, task {cfg.task}"]
    header = f"{'model+method':<26}" + "".join(f"k={k:<8}" for k in ks)
    lines.append(header)
    combos = sorted({(r["model"], r["method"], r["steps"]) for r in rows})
    for model, method, steps in combos:
        cells = []
        for k in ks:
            vals = [r["fidelity"] for r in rows
                    if (r["model"], r["method"], r["steps"], r["k"]) == (model, method, steps, k)]
            cells.append(f"{np.mean(vals):<10.3f}" if vals else f"{'-':<10}")
        tag = f"{method}+{model}" + (f" s{steps}" if steps != cfg.steps else "")
        lines.append(f"{tag:<26}" + "".join(cells))
    out = "\n".join(lines) + "\n"
    steps_values = sorted({r["steps"] for r in rows})
    if len(steps_values) > 1:
        out += "\n" + _steps_table(rows, cfg, steps_values)
    return out


def _steps_table(rows, cfg, steps_values):
    """Steps sweep: one row per (model, method, k), one column per steps value."""
    lines = ["fidelity by attribution steps"]
    lines.append(f"{'model+method':<22}{'k':>5}  "
                 + "".join(f"steps{s:<8}" for s in steps_values))
    combos = sorted({(r["model"], r["method"], r["k"]) for r in rows},
                    key=lambda c: (c[0], c[1], -c[2]))
    for model, method, k in combos:
        swept = {r["steps"] for r in rows
                 if (r["model"], r["method"], r["k"]) == (model, method, k)}
        if len(swept) < 2:
            continue
        cells = []
        for steps in steps_values:
            vals = [r["fidelity"] for r in rows
                    if (r["model"], r["method"], r["k"], r["steps"]) == (model, method, k, steps)]
            cells.append(f"{np.mean(vals):<13.3f}" if vals else f"{'-':<13}")
        lines.append(f"{method + '+' + model:<22}{k:>5}  " + "".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# report


def cmd_report(cfg, fmt="text"):
    import csv

    os.makedirs(cfg.report_dir, exist_ok=True)
    doc = {"config_digest": cfg.digest}
    sections = []
    acc_path = os.path.join(cfg.report_dir, "accuracy.csv")
    if os.path.exists(acc_path):
        with open(acc_path) as fh:
            acc = list(csv.DictReader(fh))
        doc["accuracy"] = acc
        lines = ["accuracy by (task, model, S)"]
        for row in acc:
            lines.append(f"  {row['task']:<7} {row['model']:<12} S={row['S']:<3} "
                         f"{float(row['accuracy']):.3f}")
        sections.append("\n".join(lines))
    curve_path = os.path.join(cfg.report_dir, "win_curve.csv")
    if os.path.exists(curve_path):
        with open(curve_path) as fh:
            curve = list(csv.DictReader(fh))
        doc["win_curve"] = curve
        lines = ["win accuracy by game time"]
        for row in curve:
            lines.append(f"  {row['model']:<12} t={row['game_time']:>4}  "
                         f"{float(row['accuracy']):.3f} (n={row['n']})")
        sections.append("\n".join(lines))
    fid_path = os.path.join(cfg.report_dir, "fidelity.csv")
    if os.path.exists(fid_path):
        with open(fid_path) as fh:
            rows = list(csv.DictReader(fh))
        doc["fidelity"] = rows
        for row in rows:
            row["k"] = int(row["k"])
            row["steps"] = int(row["steps"])
            row["fidelity"] = float(row["fidelity"])
        sections.append(_fidelity_table(rows, cfg))
    if not sections:
        sections.append("no result tables found; run train/fidelity first")
    text = f"results summary (config {cfg.digest})\n\n" + "\n\n".join(sections) + "\n"
    _write_json(os.path.join(cfg.report_dir, "report.json"), doc)
    _write_text(os.path.join(cfg.report_dir, "report.txt"), text)
    print(json.dumps(doc, sort_keys=True) if fmt == "json" else text, end="")
    return 0


# ---------------------------------------------------------------------------
# entry point


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mobaxai",
        description="Synthetic MOBA telemetry: event prediction, attribution, fidelity.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (
        ("gen", "generate dataset splits"),
        ("train", "train models and report accuracy"),
        ("attribute", "write attribution reports for test instances"),
        ("fidelity", "run the fidelity sweep"),
        ("report", "aggregate result tables"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--workers", type=int, default=None)
        p.add_argument("--force", action="store_true",
                       help="allow overwriting existing outputs")
        p.add_argument("--format", choices=("text", "json"), default="text",
                       help="stdout format for report-like commands")
        p.add_argument("--task", default=None, choices=dg.TASKS)
        if name == "attribute":
            p.add_argument("--instances", default=None,
                           help="comma-separated test-instance indices")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    overrides = {"seed": args.seed, "workers": args.workers, "task": args.task}
    cfg = load_config(args.config, overrides=overrides)
    try:
        if args.command == "gen":
            return cmd_gen(cfg, force=args.force)
        if args.command == "train":
            return cmd_train(cfg, force=args.force)
        if args.command == "attribute":
            instances = None
            if args.instances:
                instances = [int(v) for v in args.instances.split(",")]
            return cmd_attribute(cfg, instances=instances, force=args.force,
                                 fmt=args.format)
        if args.command == "fidelity":
            return cmd_fidelity(cfg, force=args.force)
        if args.command == "report":
            return cmd_report(cfg, fmt=args.format)
    except (FileExistsError, FileNotFoundError, ValueError, RuntimeError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    raise AssertionError("unreachable")


if __name__ == "__main__":
    sys.exit(main())
