"""Command-line entry point: ``cutin <command> ...``.

Commands and their outputs:

simulate    ``--out DIR``: ``<clip_id>.manifest`` + ``<clip_id>.csv`` per clip and
            ``index.csv`` (columns ``clip_id,manifest,label,class_set``).
            ``--detections K`` also writes ``detections/<clip_id>.csv`` with the
            target plus K distractor vehicles.
track       observation-table detections -> ``--out DIR/track_<id>.csv``.
featurize   ``--index`` -> CSV ``clip_id,label,step,cx,cy,w,h``.
train       ``--out DIR``: ``model.cutin``, ``history.csv``
            (``model,epoch,train_loss,val_accuracy,val_loss``), ``split.csv``.
gridsearch  ``--out DIR``: ``leaderboard.csv`` (``rank,index,seed,hidden_units,
            batch_size,optimizer,head_activation,dropout_rate,val_accuracy,error``),
            ``timing.csv`` (``index,train_seconds``), ``model.cutin`` for the best.
eval        metrics CSV ``subset,n,accuracy,precision_<c>,recall_<c>...`` and
            the confusion matrix as ``confusion,<true>,<counts...>`` rows.
classify    one line: ``<Class> p=<probs> [side=<Side>]``.
stream      observation rows on stdin -> one line per two-second window:
            ``frames=<start>-<end>\\t<decision>\\tms=<classification ms>``.

Exit status: 0 success, 1 runtime or numerical failure, 2 usage or validation error.
Timing values only appear in ``timing.csv`` and the ``ms=`` field of stream lines.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import sys
import time
from pathlib import Path

from . import harness, strategies, synthgen, trackdata, tracker
from .errors import CutinError, GenerationError, NumericalError
from .features import SEQUENCE_LENGTHS, featurize, iter_windows
from .lstm import TABLE1_POOLS, Hyperparameters, TrainConfig
from .trackdata import SceneMeta, default_safety_field

log = logging.getLogger("cutin")

EXIT_OK, EXIT_RUNTIME, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flag or config value; maps to exit status 2."""


# ---------------------------------------------------------------------------
# configuration

def _pos_float(v):
    return v > 0


def _nonneg(v):
    return v >= 0


def _pos_int(v):
    return v >= 1


def _unit_open(v):
    return 0 < v <= 1


def _ratio(v):
    return 0 <= v <= 1


SCHEMA = {
    "simulate": {
        "n": (int, _pos_int, "must be >= 1"),
        "noise_sigma": (float, _nonneg, "must be >= 0"),
        "class_set": (str, lambda v: v in ("cutin2", "cutin3"), "must be cutin2 or cutin3"),
        "distractors": (int, _nonneg, "must be >= 0"),
    },
    "tracker": {
        "iou_threshold": (float, _unit_open, "must lie in (0, 1]"),
        "min_hits": (int, _pos_int, "must be >= 1"),
        "max_age": (int, _nonneg, "must be >= 0"),
        "process_noise_scale": (float, _pos_float, "must be > 0"),
        "measurement_noise_scale": (float, _pos_float, "must be > 0"),
    },
    "model": {
        "hidden_units": (int, _pos_int, "must be >= 1"),
        "batch_size": (int, _pos_int, "must be >= 1"),
        "optimizer": (str, lambda v: v in TABLE1_POOLS["optimizer"], "must be Adam, RMSProp or AdaDelta"),
        "head_activation": (str, lambda v: v in TABLE1_POOLS["head_activation"], "must be ReLU, Sigmoid or Tanh"),
        "dropout_rate": (float, lambda v: 0 <= v < 1, "must lie in [0, 1)"),
    },
    "train": {
        "epochs": (int, _nonneg, "must be >= 0"),
        "learning_rate": (float, _pos_float, "must be > 0"),
        "early_stop_patience": (int, _nonneg, "must be >= 0"),
    },
    "split": {
        "train": (float, _ratio, "must lie in [0, 1]"),
        "val": (float, _ratio, "must lie in [0, 1]"),
        "test": (float, _ratio, "must lie in [0, 1]"),
    },
    "grid": {name: (str, lambda v: bool(v.strip()), "must be a non-empty list") for name in TABLE1_POOLS},
}


def _convert(section, key, raw):
    typ, ok, why = SCHEMA[section][key]
    try:
        value = typ(raw)
    except (TypeError, ValueError):
        raise UsageError(f"invalid value for {key}: {raw!r} ({why})") from None
    if not ok(value):
        raise UsageError(f"invalid value for {key}: {raw!r} ({why})")
    return value


def load_config(path=None) -> dict:
    """``{section: {key: value}}`` from an INI file; unknown sections or keys are rejected."""
    cfg = {section: {} for section in SCHEMA}
    if path is None:
        return cfg
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path, encoding="utf-8") as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise UsageError(f"cannot read config {path}: {exc}") from None
    for section in parser.sections():
        if section not in SCHEMA:
            raise UsageError(f"unknown config section [{section}]")
        for key, raw in parser.items(section):
            if key not in SCHEMA[section]:
                raise UsageError(f"unknown config key {section}.{key}")
            cfg[section][key] = _convert(section, key, raw)
    return cfg


def _override(cfg, section, key, value):
    if value is not None:
        cfg[section][key] = _convert(section, key, value)


def _pools(cfg, full: bool):
    pools = {}
    for name, pool in TABLE1_POOLS.items():
        raw = cfg["grid"].get(name)
        if raw is None:
            pools[name] = pool if full else (getattr(Hyperparameters(), name),)
            continue
        cast = type(pool[0])
        try:
            pools[name] = tuple(cast(v.strip()) for v in raw.split(","))
        except ValueError:
            raise UsageError(f"invalid value for {name}: {raw!r}") from None
    return pools


def _tracker_config(cfg):
    return tracker.TrackerConfig(**cfg["tracker"])


def _hyper(cfg):
    return Hyperparameters(**cfg["model"], custom=True)


def _train_config(cfg, seed):
    return TrainConfig(seed=seed, **cfg["train"])


def _ratios(cfg):
    s = cfg["split"]
    return (s.get("train", 0.6), s.get("val", 0.2), s.get("test", 0.2))


# ---------------------------------------------------------------------------
# helpers


def _write_csv(path_or_stream, header, rows):
    own = not hasattr(path_or_stream, "write")
    fh = open(path_or_stream, "w", newline="", encoding="utf-8") if own else path_or_stream
    try:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)
    finally:
        if own:
            fh.close()


def read_index(path):
    path = Path(path)
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    clips = []
    for r in rows:
        clips.append(trackdata.load_clip(path.parent / r["manifest"]))
    if not clips:
        raise UsageError(f"index {path} lists no clips")
    return clips


def _subset(clips, split, name):
    if name == "all":
        return clips
    return trackdata.select(clips, getattr(split, name))


def _float(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# commands


def cmd_simulate(args, cfg):
    _override(cfg, "simulate", "n", args.n)
    _override(cfg, "simulate", "noise_sigma", args.sigma)
    _override(cfg, "simulate", "class_set", args.class_set)
    _override(cfg, "simulate", "distractors", args.detections)
    sim = cfg["simulate"]
    n = sim.get("n", 100)
    base = synthgen.GenParams(noise_sigma=sim.get("noise_sigma", 2.0))
    clips = synthgen.generate_dataset(n, base, seed=args.seed, class_set=sim.get("class_set", "cutin2"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for c in clips:
        mpath, _ = trackdata.write_clip(c, out)
        rows.append((c.clip_id, mpath.name, c.label.value, c.class_set))
    _write_csv(out / "index.csv", ("clip_id", "manifest", "label", "class_set"), rows)
    distractors = sim.get("distractors")
    if distractors is not None:
        ddir = out / "detections"
        ddir.mkdir(exist_ok=True)
        for k, c in enumerate(clips):
            det_rows, _ = synthgen.scene_detections(c, distractors, seed=args.seed * 1_000_003 + k)
            (ddir / f"{c.clip_id}.csv").write_bytes(trackdata.serialize_observations(det_rows))
    print(f"wrote {len(clips)} clips to {out}")
    return EXIT_OK


def cmd_track(args, cfg):
    text = Path(args.detections).read_bytes()
    rows = trackdata.parse_observations(text, source=args.detections) if text.strip() else []
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    if not rows:
        log.warning("no detections in %s; no tracks written", args.detections)
        print("0 tracks")
        return EXIT_OK
    frames = tracker.group_by_frame([d for _, d in rows])
    tracks = tracker.track_sequence(frames, _tracker_config(cfg))
    for t in tracks:
        data = trackdata.serialize_observations((t.target_id, d) for d in t.observations)
        (out / f"track_{t.target_id}.csv").write_bytes(data)
    print(f"{len(tracks)} tracks")
    return EXIT_OK


def cmd_featurize(args, cfg):
    clips = read_index(args.index)
    rows = []
    for c in clips:
        seq = featurize(c, args.length)
        for k, v in enumerate(seq.values):
            rows.append((c.clip_id, c.label.value, k, *(_float(x) for x in v)))
    header = ("clip_id", "label", "step", "cx", "cy", "w", "h")
    if args.out:
        _write_csv(args.out, header, rows)
    else:
        _write_csv(sys.stdout, header, rows)
    return EXIT_OK


def _split_clips(args, cfg, clips):
    split = trackdata.split_dataset(clips, _ratios(cfg), seed=args.seed)
    return split, trackdata.select(clips, split.train), trackdata.select(clips, split.val), trackdata.select(clips, split.test)


def _write_split(path, split):
    rows = [(cid, name) for name in ("train", "val", "test") for cid in getattr(split, name)]
    _write_csv(path, ("clip_id", "subset"), rows)


def cmd_train(args, cfg):
    _override(cfg, "train", "epochs", args.epochs)
    clips = read_index(args.index)
    split, tr, va, _ = _split_clips(args, cfg, clips)
    strategy, hists = strategies.train_strategy(args.strategy, tr, va, _hyper(cfg), _train_config(cfg, args.seed), args.length)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    strategies.save_strategy(strategy, out / "model.cutin")
    rows = []
    for name, h in sorted(hists.items()):
        for e in range(len(h)):
            rows.append((name, e, _float(h.train_loss[e]), _float(h.val_accuracy[e]), _float(h.val_loss[e])))
    _write_csv(out / "history.csv", ("model", "epoch", "train_loss", "val_accuracy", "val_loss"), rows)
    _write_split(out / "split.csv", split)
    print(f"trained {args.strategy} L={args.length} -> {out / 'model.cutin'}")
    return EXIT_OK


def cmd_gridsearch(args, cfg):
    _override(cfg, "train", "epochs", args.epochs)
    clips = read_index(args.index)
    _, tr, va, _ = _split_clips(args, cfg, clips)
    pools = _pools(cfg, args.pools == "full")
    result = harness.grid_search(args.strategy, tr, va, pools, _train_config(cfg, args.seed), args.length, args.workers)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rows = []
    for rank, c in enumerate(result.leaderboard, start=1):
        hp = c.hp
        acc = "" if c.val_accuracy is None else _float(c.val_accuracy)
        rows.append((rank, c.index, c.seed, hp.hidden_units, hp.batch_size, hp.optimizer, hp.head_activation, hp.dropout_rate, acc, c.error or ""))
    header = ("rank", "index", "seed", "hidden_units", "batch_size", "optimizer", "head_activation", "dropout_rate", "val_accuracy", "error")
    _write_csv(out / "leaderboard.csv", header, rows)
    _write_csv(out / "timing.csv", ("index", "train_seconds"), [(c.index, f"{c.train_seconds:.6f}") for c in result.candidates])
    if result.best_strategy is not None:
        strategies.save_strategy(result.best_strategy, out / "model.cutin")
    print(f"{len(result.candidates)} candidates; best index {result.best_index}")
    return EXIT_OK if result.best_index is not None else EXIT_RUNTIME


def cmd_eval(args, cfg):
    strategy = strategies.load_strategy(args.model)
    clips = read_index(args.index)
    split, *_ = _split_clips(args, cfg, clips)
    subset = _subset(clips, split, args.subset)
    metrics = harness.evaluate(strategy, subset, args.metrics_class_set)
    row = metrics.row()
    header = ["subset", "n", *row]
    stream = io.StringIO()
    _write_csv(stream, header, [[args.subset, len(subset), *row.values()]])
    w = csv.writer(stream, lineterminator="\n")
    for name, counts in zip(metrics.classes, metrics.confusion):
        w.writerow(["confusion", name, *counts.tolist()])
    text = stream.getvalue()
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


def cmd_classify(args, cfg):
    strategy = strategies.load_strategy(args.model)
    clip = trackdata.load_clip(args.clip)
    decision = strategies.classify(strategy, clip.track, clip.scene)
    print(decision.format())
    return EXIT_OK


def _stream_scene(width, height, fps):
    ego = (0.0, float(width))
    return SceneMeta(width, height, fps, default_safety_field(width, height, ego), ego)


def _iter_stdin_rows(stream):
    for lineno, line in enumerate(stream, start=1):
        line = line.strip()
        if not line or line.startswith("frame_idx"):
            continue
        _, det = trackdata.parse_observation_row(line, lineno, "<stdin>")
        yield det


def cmd_stream(args, cfg):
    strategy = strategies.load_strategy(args.model)
    scene = _stream_scene(args.image_width, args.image_height, args.fps)
    out = sys.stdout
    for window in iter_windows(_iter_stdin_rows(sys.stdin), args.fps):
        track = trackdata.Track(0, window)
        start = time.perf_counter()
        decision = strategies.classify(strategy, track, scene)
        ms = (time.perf_counter() - start) * 1000.0
        out.write(f"frames={window[0].frame_idx}-{window[-1].frame_idx}\t{decision.format()}\tms={ms:.3f}\n")
        out.flush()
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser():
    p = argparse.ArgumentParser(prog="cutin", description="Cut-in / lane-pass maneuver prediction from bounding boxes.")
    p.add_argument("--config", help="INI configuration file")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed=True, length=False, strategy=False):
        sp.add_argument("--config", default=argparse.SUPPRESS, help="INI configuration file")
        if seed:
            sp.add_argument("--seed", type=int, default=0)
        if length:
            sp.add_argument("--length", type=int, choices=SEQUENCE_LENGTHS, default=30)
        if strategy:
            sp.add_argument("--strategy", choices=strategies.KINDS, default=strategies.BASELINE)

    sp = sub.add_parser("simulate", help="generate a synthetic clip dataset")
    common(sp)
    sp.add_argument("--n", help="clips per class and side")
    sp.add_argument("--sigma", help="pixel noise standard deviation")
    sp.add_argument("--class-set", dest="class_set", help="cutin2 or cutin3")
    sp.add_argument("--detections", help="also write per-frame detection files with this many distractors")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("track", help="track detections from an observation table")
    common(sp, seed=False)
    sp.add_argument("detections")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_track)

    sp = sub.add_parser("featurize", help="write normalized feature sequences")
    common(sp, seed=False, length=True)
    sp.add_argument("--index", required=True)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_featurize)

    sp = sub.add_parser("train", help="train one strategy")
    common(sp, length=True, strategy=True)
    sp.add_argument("--index", required=True)
    sp.add_argument("--epochs")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("gridsearch", help="hyperparameter grid search")
    common(sp, length=True, strategy=True)
    sp.add_argument("--index", required=True)
    sp.add_argument("--pools", choices=("full", "config"), default="config",
                    help="full: all standard pools; config: [grid] section, defaults elsewhere")
    sp.add_argument("--epochs")
    sp.add_argument("--workers", type=int, default=1)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gridsearch)

    sp = sub.add_parser("eval", help="evaluate a model on an index subset")
    common(sp)
    sp.add_argument("--index", required=True)
    sp.add_argument("--model", required=True)
    sp.add_argument("--subset", choices=("train", "val", "test", "all"), default="test")
    sp.add_argument("--metrics-class-set", dest="metrics_class_set", choices=tuple(trackdata.CLASS_SETS))
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("classify", help="classify one clip")
    common(sp, seed=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("clip", help="clip manifest path")
    sp.set_defaults(func=cmd_classify)

    sp = sub.add_parser("stream", help="classify a detection stream from stdin every two seconds")
    common(sp, seed=False)
    sp.add_argument("--model", required=True)
    sp.add_argument("--fps", type=float, required=True)
    sp.add_argument("--image-width", dest="image_width", type=float, default=1280)
    sp.add_argument("--image-height", dest="image_height", type=float, default=720)
    sp.set_defaults(func=cmd_stream)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        cfg = load_config(args.config)
        return args.func(args, cfg)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (NumericalError, GenerationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (CutinError, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
