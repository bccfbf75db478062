"""Command-line entry point: ``mbodl <subcommand> [flags]``.

Every run writes a JSON manifest (arguments, seeds, content digests of
inputs and outputs, tool version, wall-clock duration) next to its primary
output, or to ``--manifest``.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from decimal import InvalidOperation
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from . import eval as ev
from . import labels as lb
from . import nn, train
from .book import BookError, replay, snapshot
from .features import (FeatureError, WindowFile, ZScore, date_split, featurize_feed, iso_days,
                       lob_columns, read_windows, sidecar_path, write_windows)
from .feed_io import FeedError, read_feed, write_feed, write_snapshots
from .synth import SynthConfig, generate

CONFIG_SCHEMA_VERSION = 1

EXIT_OK, EXIT_USAGE, EXIT_MISSING, EXIT_SCHEMA, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4, 5, 1


class CliError(Exception):
    def __init__(self, category: str, message: str, code: int):
        super().__init__(message)
        self.category = category
        self.code = code


def _schema(msg: str) -> CliError:
    return CliError("schema", msg, EXIT_SCHEMA)


def _require(path: str | Path) -> Path:
    p = Path(path)
    if not p.exists():
        raise CliError("missing-file", f"{p} does not exist", EXIT_MISSING)
    return p


def _split_parts(text: str) -> tuple[int, int, int]:
    try:
        parts = tuple(int(x) for x in text.split(","))
    except ValueError:
        parts = ()
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("expected three comma-separated integers, e.g. 6,3,3")
    return parts


# -- digests / manifest -------------------------------------------------------------

def digest(path: str | Path) -> str:
    """sha256 of a file, or of a directory's files in sorted order."""
    p = Path(path)
    h = hashlib.sha256()
    files = sorted(q for q in p.rglob("*") if q.is_file()) if p.is_dir() else [p]
    for f in files:
        if p.is_dir():
            h.update(str(f.relative_to(p)).encode())
        h.update(f.read_bytes())
    return h.hexdigest()


def _digests(paths) -> dict[str, str]:
    return {str(p): digest(p) for p in paths if p is not None and Path(p).exists()}


def write_manifest(path: Path, subcommand: str, args: dict, inputs, outputs,
                   started: float, seeds: Optional[dict] = None, results: Optional[dict] = None) -> Path:
    manifest = {
        "subcommand": subcommand,
        "args": {k: (str(v) if isinstance(v, Path) else v) for k, v in args.items()},
        "seeds": seeds or {},
        "inputs": _digests(inputs),
        "outputs": _digests(outputs),
        "tool_version": __version__,
        "duration_s": round(time.perf_counter() - started, 6),
        "results": results or {},
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return path


def _manifest_path(args, primary: Path) -> Path:
    if getattr(args, "manifest", None):
        return Path(args.manifest)
    if primary.suffix == "" and not primary.name.endswith(".json"):
        return primary.parent / f"{primary.name}.manifest.json"
    return primary.with_name(primary.name + ".manifest.json")


def _arg_dict(args) -> dict:
    return {k: v for k, v in vars(args).items() if k not in ("func",)}


# -- gen / rebuild -------------------------------------------------------------------

def synth_config(args) -> SynthConfig:
    return SynthConfig(seed=args.seed, n_messages=args.n, n_days=args.n_days,
                       tick_size=args.tick_size, initial_mid=args.initial_mid,
                       signal_strength=args.signal_strength)


def cmd_gen(args) -> dict:
    cfg = synth_config(args)
    try:
        feed = generate(cfg)
    except ValueError as exc:
        raise CliError("config", str(exc), EXIT_USAGE) from exc
    out = Path(args.out)
    write_feed(out, feed.messages)
    outputs = [out]
    if args.episodes_out:
        with open(args.episodes_out, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["direction", "burst_start", "burst_end", "drift_end"])
            for e in feed.episodes:
                w.writerow([e.direction, e.burst_start, e.burst_end, e.drift_end])
        outputs.append(Path(args.episodes_out))
    return {"outputs": outputs, "inputs": [], "seeds": {"gen": args.seed},
            "results": {"messages": len(feed.messages), "episodes": len(feed.episodes)}}


def cmd_rebuild(args) -> dict:
    feed = _require(args.feed)
    out = Path(args.out)
    skipped = 0

    def snaps():
        nonlocal skipped
        for book, _, event in replay(read_feed(feed), args.tick_size, args.unknown_ids):
            if event is None:
                skipped += 1
            yield snapshot(book, args.depth)

    n = write_snapshots(out, snaps(), args.depth)
    return {"inputs": [feed], "outputs": [out], "results": {"rows": n, "ignored_unknown_ids": skipped}}


# -- featurize / label -----------------------------------------------------------------

def _mids_path(args) -> Path:
    out = Path(args.out)
    return Path(args.mids_out) if args.mids_out else out.with_name(out.stem + ".mids.csv")


def cmd_featurize(args) -> dict:
    feed = _require(args.feed)
    stream = featurize_feed(read_feed(feed), args.tick_size, args.instrument)
    if len(stream) == 0:
        raise CliError("data", f"{feed}: no retained ticks", EXIT_DATA)
    meta = {"tick_size": str(stream.tick_size), "n_messages": stream.n_messages,
            "n_filtered": stream.n_filtered, "n_skipped": stream.n_skipped}
    if args.mode == "mbo":
        rows = stream.mbo
        meta["columns"] = ["side", "action", "norm_price", "norm_size",
                           "norm_change_price", "norm_change_size"]
    else:
        train_days = date_split(stream.dates, args.split)["train"]
        stats = ZScore.fit(stream.lob[np.isin(stream.dates, train_days)], lob_columns())
        rows = stats.transform(stream.lob)
        meta["columns"] = lob_columns()
        meta["zscore"] = stats.to_dict()
    out = Path(args.out)
    write_windows(out, WindowFile(rows, stream.tick_index, stream.dates, args.lookback, args.mode,
                                  args.instrument, meta))
    mids = _mids_path(args)
    lb.write_mids(mids, stream.tick_index, stream.dates, stream.mids)
    return {"inputs": [feed], "outputs": [out, sidecar_path(out), mids],
            "results": {"ticks": len(stream), "n_features": int(rows.shape[1])}}


def cmd_label(args) -> dict:
    mids_path = _require(args.mids)
    try:
        ticks, dates, mids = lb.read_mids(mids_path)
    except lb.LabelError as exc:
        raise _schema(str(exc)) from exc
    t, l, days = lb.label_stream(mids, ticks, dates, args.k)
    results = {"k": args.k, "n": len(t)}
    if args.calibrate:
        train_days = date_split(dates, args.split)["train"]
        alpha = lb.calibrate_alpha(l[np.isin(days, train_days)])
        results["calibrated"] = True
    else:
        alpha = float(args.alpha)
    classes = lb.classify_array(l, alpha)
    results["alpha"] = alpha
    splits = date_split(dates, args.split)
    results["balance"] = {name: list(bal) for name, bal in lb.class_balance(
        {name: classes[np.isin(days, d)] for name, d in splits.items() if np.isin(days, d).any()}).items()}
    out = Path(args.out)
    lb.write_labels(out, lb.LabelSet(t, l, classes, days))
    return {"inputs": [mids_path], "outputs": [out], "results": results}


# -- train / predict -----------------------------------------------------------------------

def _windowset(windows_path: Path, labels_path: Path) -> train.WindowSet:
    try:
        wf = read_windows(windows_path)
        labels = lb.read_labels(labels_path)
    except (FeatureError, lb.LabelError, KeyError, json.JSONDecodeError) as exc:
        raise _schema(str(exc)) from exc
    return train.make_windowset(wf.rows, wf.tick_index, wf.dates, labels.tick_index,
                                labels.classes, wf.lookback)


def cmd_train(args) -> dict:
    windows, labels = _require(args.windows), _require(args.labels)
    _require(sidecar_path(windows))
    ws = _windowset(windows, labels)
    spec = nn.ModelSpec(args.arch, lookback=ws.lookback, n_features=ws.n_features,
                        layers=args.layers, units=args.units)
    cfg = train.TrainConfig(spec, lr=args.lr, batch_size=args.batch, patience=args.patience,
                            max_epochs=args.max_epochs, seed=args.seed)
    splits = train.split_windowset(ws, args.split)
    train.audit_split(splits)
    ckpt, history = train.fit(cfg, splits["train"], splits["val"])
    ckpt.meta["split_days"] = {k: iso_days(np.unique(v.dates)) for k, v in splits.items()}
    out = Path(args.out)
    nn.save_checkpoint(out, ckpt)
    return {"inputs": [windows, labels], "outputs": [out], "seeds": {"train": args.seed},
            "results": {"epochs": len(history), "best_epoch": ckpt.meta["best_epoch"],
                        "best_val_loss": ckpt.meta["best_val_loss"]}}


PROB_HEADER = ["tick_index", "date", "p_down", "p_stationary", "p_up", "class"]


def write_probs(path: Path, tick_index, dates, probs) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(PROB_HEADER)
        for t, d, p in zip(tick_index, dates, probs):
            w.writerow([int(t), str(np.datetime64(d, "D"))] + [repr(float(x)) for x in p] + [int(np.argmax(p))])


def read_probs(path: str | Path, name: Optional[str] = None) -> ev.SignalSet:
    path = Path(path)
    ticks, dates, probs = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        if next(reader, None) != PROB_HEADER:
            raise _schema(f"{path}: expected header {','.join(PROB_HEADER)}")
        for row in reader:
            ticks.append(int(row[0]))
            dates.append(row[1])
            probs.append([float(x) for x in row[2:5]])
    return ev.SignalSet(name or path.stem, np.asarray(probs).reshape(-1, 3), np.asarray(ticks),
                        np.asarray(dates, dtype="datetime64[D]"))


def cmd_predict(args) -> dict:
    ckpt_dir, windows = _require(args.ckpt), _require(args.windows)
    try:
        ckpt = nn.load_checkpoint(ckpt_dir)
        wf = read_windows(windows)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise _schema(str(exc)) from exc
    ends = wf.ends()
    if args.part != "all":
        days = date_split(wf.dates, args.split)[args.part]
        ends = ends[np.isin(wf.dates[ends], days)]
    n = len(ends)
    ws = train.WindowSet(wf.rows, ends, np.zeros(n, dtype=np.int64), wf.dates[ends],
                         wf.tick_index[ends], wf.lookback)
    try:
        probs, _ = train.predict(ckpt, ws)
    except train.TrainError as exc:
        raise _schema(str(exc)) from exc
    out = Path(args.out)
    write_probs(out, ws.tick_index, ws.dates, probs)
    return {"inputs": [ckpt_dir, windows], "outputs": [out], "results": {"rows": n}}


# -- eval / ensemble ---------------------------------------------------------------------

def _load_sets(paths: Sequence[str], names: Optional[Sequence[str]]) -> list[ev.SignalSet]:
    if names and len(names) != len(paths):
        raise CliError("usage", "--names must match --probs one to one", EXIT_USAGE)
    return [read_probs(_require(p), names[i] if names else None) for i, p in enumerate(paths)]


def _align(sets: list[ev.SignalSet], ticks: np.ndarray) -> list[ev.SignalSet]:
    out = []
    for s in sets:
        pos = np.searchsorted(s.tick_index, ticks)
        out.append(ev.SignalSet(s.name, s.probs[pos], ticks, None if s.dates is None else s.dates[pos]))
    return out


def cmd_eval(args) -> dict:
    sets = _load_sets(args.probs, args.names)
    labels_path = _require(args.labels)
    try:
        labels = lb.read_labels(labels_path)
    except lb.LabelError as exc:
        raise _schema(str(exc)) from exc
    common = labels.tick_index
    for s in sets:
        common = np.intersect1d(common, s.tick_index)
    if len(common) == 0:
        raise CliError("data", "no tick index shared by all prediction files and labels", EXIT_DATA)
    sets = _align(sets, common)
    true = labels.classes[np.searchsorted(labels.tick_index, common)]
    inputs = [Path(p) for p in args.probs] + [labels_path]
    if args.dates:
        dpath = _require(args.dates)
        ticks, days, _ = lb.read_mids(dpath)
        dates = days[np.searchsorted(ticks, common)]
        inputs.append(dpath)
    else:
        dates = sets[0].dates
    report = ev.evaluate(sets, true, dates)
    report["n_samples"] = int(len(common))
    out = Path(args.report)
    with open(out, "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    return {"inputs": inputs, "outputs": [out],
            "results": {name: m["metrics"] for name, m in report["models"].items()}}


def cmd_ensemble(args) -> dict:
    sets = _load_sets(args.probs, args.names)
    common = sets[0].tick_index
    for s in sets[1:]:
        common = np.intersect1d(common, s.tick_index)
    combined = ev.ensemble(_align(sets, common), args.name)
    out = Path(args.out)
    write_probs(out, combined.tick_index, combined.dates, combined.probs)
    return {"inputs": [Path(p) for p in args.probs], "outputs": [out],
            "results": {"rows": len(common), "members": [s.name for s in sets]}}


# -- pipeline ------------------------------------------------------------------------------

DEFAULT_PIPELINE = {
    "schema_version": CONFIG_SCHEMA_VERSION,
    "seed": 0,
    "instrument": "SYNTH",
    "gen": {"n": 20000, "n_days": 12, "tick_size": "0.01", "initial_mid": "70.00",
            "signal_strength": 0.8},
    "featurize": {"mode": "mbo", "lookback": 50},
    "label": {"k": 20, "alpha": None},
    "split": [6, 3, 3],
    "models": [
        {"name": "MBO-LM", "arch": "lm", "lr": 1e-3, "batch": 128, "max_epochs": 5},
        {"name": "MBO-MLP", "arch": "mlp", "layers": 1, "units": 64, "lr": 1e-3, "batch": 128,
         "max_epochs": 5},
    ],
}


def load_config(path: Optional[str]) -> dict:
    cfg = json.loads(json.dumps(DEFAULT_PIPELINE))
    if path is None:
        return cfg
    try:
        with open(_require(path)) as fh:
            user = json.load(fh)
    except json.JSONDecodeError as exc:
        raise _schema(f"{path}: invalid JSON ({exc})") from exc
    if user.get("schema_version") != CONFIG_SCHEMA_VERSION:
        raise _schema(f"{path}: schema_version must be {CONFIG_SCHEMA_VERSION}")
    unknown = set(user) - set(DEFAULT_PIPELINE)
    if unknown:
        raise _schema(f"{path}: unknown config keys {sorted(unknown)}")
    for key, value in user.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    return cfg


def cmd_pipeline(args) -> dict:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.n is not None:
        cfg["gen"]["n"] = args.n
    if args.k is not None:
        cfg["label"]["k"] = args.k
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seed = int(cfg["seed"])
    split = ",".join(str(x) for x in cfg["split"])
    g, f = cfg["gen"], cfg["featurize"]
    steps = [
        ["gen", "--seed", seed, "--n", g["n"], "--n-days", g["n_days"], "--tick-size", g["tick_size"],
         "--initial-mid", g["initial_mid"], "--signal-strength", g["signal_strength"],
         "--out", out / "feed.csv"],
        ["rebuild", "--feed", out / "feed.csv", "--tick-size", g["tick_size"],
         "--out", out / "snapshots.csv"],
        ["featurize", "--feed", out / "feed.csv", "--tick-size", g["tick_size"], "--mode", f["mode"],
         "--lookback", f["lookback"], "--instrument", cfg["instrument"], "--split", split,
         "--out", out / "windows.bin", "--mids-out", out / "mids.csv"],
    ]
    alpha = cfg["label"].get("alpha")
    steps.append(["label", "--mids", out / "mids.csv", "--k", cfg["label"]["k"], "--split", split,
                  "--out", out / "labels.csv"] + (["--calibrate"] if alpha is None else ["--alpha", alpha]))
    probs, names = [], []
    for m in cfg["models"]:
        ckpt = out / f"ckpt_{m['name']}"
        steps.append(["train", "--windows", out / "windows.bin", "--labels", out / "labels.csv",
                      "--arch", m["arch"], "--lr", m.get("lr", 1e-4), "--batch", m.get("batch", 128),
                      "--layers", m.get("layers", 1), "--units", m.get("units", 64),
                      "--max-epochs", m.get("max_epochs", train.MAX_EPOCHS),
                      "--patience", m.get("patience", train.PATIENCE), "--seed", seed,
                      "--split", split, "--out", ckpt])
        prob = out / f"probs_{m['name']}.csv"
        steps.append(["predict", "--ckpt", ckpt, "--windows", out / "windows.bin", "--part", "test",
                      "--split", split, "--out", prob])
        probs.append(prob)
        names.append(m["name"])
    steps.append(["eval", "--probs", *probs, "--names", *names, "--labels", out / "labels.csv",
                  "--dates", out / "mids.csv", "--report", out / "report.json"])
    with open(out / "config.json", "w") as fh:
        json.dump(cfg, fh, indent=1, sort_keys=True)
    for step in steps:
        code = main([str(x) for x in step])
        if code != EXIT_OK:
            raise CliError("pipeline", f"step {step[0]!r} failed with exit status {code}", code)
    return {"inputs": [Path(args.config)] if args.config else [],
            "outputs": [out / "report.json"] + [out / f"ckpt_{n}" for n in names],
            "seeds": {"pipeline": seed}, "results": {"steps": [s[0] for s in steps]}}


# -- parser ----------------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mbodl", description="Market-by-order deep learning pipeline.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, func, help_text, primary):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.set_defaults(func=func, primary=primary)
        sp.add_argument("--manifest", help="manifest path (default: next to the primary output)")
        return sp

    sp = add("gen", cmd_gen, "Generate a synthetic MBO feed.", "out")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--n", type=int, default=10_000, help="number of messages")
    sp.add_argument("--n-days", type=int, default=1)
    sp.add_argument("--tick-size", default="0.01")
    sp.add_argument("--initial-mid", default="70.00")
    sp.add_argument("--signal-strength", type=float, default=0.0)
    sp.add_argument("--episodes-out", help="CSV log of planted episodes")
    sp.add_argument("--out", required=True, help="feed CSV")

    sp = add("rebuild", cmd_rebuild, "Rebuild the book and write one depth snapshot per message.", "out")
    sp.add_argument("--feed", required=True)
    sp.add_argument("--tick-size", default="0.01")
    sp.add_argument("--depth", type=int, default=10)
    sp.add_argument("--unknown-ids", choices=("lenient", "error"), default="lenient",
                    help="lenient: ignore cancels and adopt updates for IDs not seen before")
    sp.add_argument("--out", required=True, help="snapshot CSV")

    sp = add("featurize", cmd_featurize, "Normalise a feed into per-tick feature rows.", "out")
    sp.add_argument("--feed", required=True)
    sp.add_argument("--tick-size", default="0.01")
    sp.add_argument("--mode", choices=("mbo", "lob"), default="mbo")
    sp.add_argument("--lookback", type=int, default=50)
    sp.add_argument("--instrument", default="SYNTH")
    sp.add_argument("--split", type=_split_parts, default=(6, 3, 3),
                    help="train,val,test day proportions (LOB statistics use train days)")
    sp.add_argument("--mids-out", help="mid-price CSV (default: <out stem>.mids.csv)")
    sp.add_argument("--out", required=True, help="windows file")

    sp = add("label", cmd_label, "Label ticks by smoothed mid-price change.", "out")
    sp.add_argument("--mids", required=True)
    sp.add_argument("--k", type=int, choices=lb.HORIZONS, required=True)
    grp = sp.add_mutually_exclusive_group(required=True)
    grp.add_argument("--alpha", type=float)
    grp.add_argument("--calibrate", action="store_true", help="fit alpha on the training days")
    sp.add_argument("--split", type=_split_parts, default=(6, 3, 3))
    sp.add_argument("--out", required=True, help="labels CSV")

    sp = add("train", cmd_train, "Train one model with early stopping.", "out")
    sp.add_argument("--windows", required=True)
    sp.add_argument("--labels", required=True)
    sp.add_argument("--arch", choices=nn.ARCHITECTURES, required=True)
    sp.add_argument("--lr", type=float, default=1e-4)
    sp.add_argument("--batch", type=int, default=128)
    sp.add_argument("--units", type=int, default=64)
    sp.add_argument("--layers", type=int, default=1)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--patience", type=int, default=train.PATIENCE)
    sp.add_argument("--max-epochs", type=int, default=train.MAX_EPOCHS)
    sp.add_argument("--split", type=_split_parts, default=(6, 3, 3))
    sp.add_argument("--out", required=True, help="checkpoint directory")

    sp = add("predict", cmd_predict, "Class probabilities for every full window.", "out")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--windows", required=True)
    sp.add_argument("--part", choices=("all", "train", "val", "test"), default="all")
    sp.add_argument("--split", type=_split_parts, default=(6, 3, 3))
    sp.add_argument("--out", required=True, help="probabilities CSV")

    sp = add("eval", cmd_eval, "Metrics, confusion, daily accuracy, correlation and KS.", "report")
    sp.add_argument("--probs", nargs="+", required=True)
    sp.add_argument("--names", nargs="+")
    sp.add_argument("--labels", required=True)
    sp.add_argument("--dates", help="CSV with tick_index,date columns (a mids file)")
    sp.add_argument("--report", required=True, help="report JSON")

    sp = add("ensemble", cmd_ensemble, "Equal-weight mean of probability files.", "out")
    sp.add_argument("--probs", nargs="+", required=True)
    sp.add_argument("--names", nargs="+")
    sp.add_argument("--name", default="ensemble")
    sp.add_argument("--out", required=True)

    sp = add("pipeline", cmd_pipeline, "gen, rebuild, featurize, label, train, predict and eval.", "out")
    sp.add_argument("--config", help="JSON config with schema_version")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--n", type=int, help="override gen.n")
    sp.add_argument("--k", type=int, choices=lb.HORIZONS, help="override label.k")
    sp.add_argument("--out", required=True, help="output directory")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    started = time.perf_counter()
    try:
        info = args.func(args)
    except CliError as exc:
        print(f"error[{exc.category}]: {exc}", file=sys.stderr)
        return exc.code
    except (FeedError, BookError, FeatureError, lb.LabelError, train.TrainError, ev.EvalError) as exc:
        print(f"error[data]: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (InvalidOperation, ValueError) as exc:
        print(f"error[invalid-value]: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_MISSING
    primary = Path(getattr(args, args.primary))
    write_manifest(_manifest_path(args, primary), args.command, _arg_dict(args),
                   info.get("inputs", []), info.get("outputs", []), started,
                   info.get("seeds"), info.get("results"))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
