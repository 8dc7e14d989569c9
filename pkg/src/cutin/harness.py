"""Metrics, grid search, sequence-length sweeps and per-stage timing."""

from __future__ import annotations

import itertools
import logging
import statistics
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .errors import ConfigurationError
from .features import normalize, resample, side_of
from .lstm import TABLE1_POOLS, Hyperparameters, TrainConfig
from .strategies import (
    TWO_CLASS_LR,
    Strategy,
    classify,
    decide,
    model_class_set,
    to_two_class,
    train_strategy,
)
from .trackdata import CLASS_SETS, LabeledClip, Track
from .tracker import TrackerConfig, group_by_frame, track_sequence

log = logging.getLogger(__name__)

GRID_ORDER = ("hidden_units", "batch_size", "optimizer", "head_activation", "dropout_rate")


@dataclass(frozen=True)
class Metrics:
    classes: tuple
    confusion: np.ndarray  # rows true, columns predicted
    accuracy: float
    precision: tuple  # None where the column sum is zero
    recall: tuple  # None where the row sum is zero

    def row(self):
        """Flat dict for CSV output; absent values become empty strings."""
        out = {"accuracy": f"{self.accuracy:.4f}"}
        for name, p, r in zip(self.classes, self.precision, self.recall):
            out[f"precision_{name}"] = "" if p is None else f"{p:.4f}"
            out[f"recall_{name}"] = "" if r is None else f"{r:.4f}"
        return out


def metrics_from_confusion(confusion, classes=None) -> Metrics:
    cm = np.asarray(confusion, dtype=int)
    K = cm.shape[0]
    if cm.shape != (K, K):
        raise ValueError("confusion matrix must be square")
    total = cm.sum()
    if total == 0:
        raise ConfigurationError("empty confusion matrix")
    col = cm.sum(axis=0)
    row = cm.sum(axis=1)
    diag = np.diag(cm)
    precision = tuple(float(diag[k] / col[k]) if col[k] > 0 else None for k in range(K))
    recall = tuple(float(diag[k] / row[k]) if row[k] > 0 else None for k in range(K))
    classes = tuple(classes) if classes is not None else tuple(range(K))
    return Metrics(classes, cm, float(np.trace(cm) / total), precision, recall)


def confusion_matrix(true_idx, pred_idx, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=int)
    np.add.at(cm, (np.asarray(true_idx, dtype=int), np.asarray(pred_idx, dtype=int)), 1)
    return cm


def evaluate(strategy: Strategy, test_clips: Sequence[LabeledClip], class_set: str | None = None) -> Metrics:
    """Classify every clip and score against its label.

    ``class_set="cutin2"`` scores a three-class cut-in model on two classes
    (both sided cut-ins count as CutIn).
    """
    if not test_clips:
        raise ConfigurationError("empty test set")
    for c in test_clips:
        model_class_set(strategy.kind, c.class_set)
    class_set = class_set or strategy.class_set
    classes = CLASS_SETS[class_set]
    truth, pred = [], []
    for c in test_clips:
        decision = classify(strategy, c.track, c.scene)
        t, p = c.label, decision.label
        if class_set != c.class_set:
            t = to_two_class(t)
        if class_set != strategy.class_set:
            p = to_two_class(p)
        truth.append(classes.index(t))
        pred.append(classes.index(p))
    return metrics_from_confusion(confusion_matrix(truth, pred, len(classes)), [c.value for c in classes])


# ---------------------------------------------------------------------------
# grid search


def grid_candidates(pools: dict | None = None) -> list[Hyperparameters]:
    """Cartesian product in the fixed order hidden, batch, optimizer, activation, dropout."""
    pools = {**TABLE1_POOLS, **(pools or {})}
    for name in GRID_ORDER:
        if not pools[name]:
            raise ConfigurationError(f"empty pool for {name}")
    custom = any(v not in TABLE1_POOLS[n] for n in GRID_ORDER for v in pools[n])
    return [
        Hyperparameters(*combo, custom=custom)
        for combo in itertools.product(*(pools[name] for name in GRID_ORDER))
    ]


@dataclass
class CandidateResult:
    index: int
    hp: Hyperparameters
    seed: int
    val_accuracy: float | None
    train_seconds: float
    error: str | None = None


@dataclass
class GridResult:
    candidates: list
    best_index: int | None
    best_strategy: Strategy | None = field(default=None, repr=False)

    @property
    def leaderboard(self):
        ok = [c for c in self.candidates if c.val_accuracy is not None]
        failed = [c for c in self.candidates if c.val_accuracy is None]
        return sorted(ok, key=lambda c: (-c.val_accuracy, c.index)) + failed

    @property
    def best(self):
        return None if self.best_index is None else self.candidates[self.best_index]


def _run_candidate(args):
    index, kind, train_clips, val_clips, hp, tc, length = args
    seed = tc.seed ^ index
    start = time.perf_counter()
    try:
        strategy, _ = train_strategy(kind, train_clips, val_clips, hp, replace(tc, seed=seed), length)
        acc = evaluate(strategy, val_clips).accuracy
        return CandidateResult(index, hp, seed, acc, time.perf_counter() - start), strategy
    except Exception as exc:  # a failed candidate must not abort the sweep
        log.warning("grid candidate %d failed: %s", index, exc)
        return CandidateResult(index, hp, seed, None, time.perf_counter() - start, f"{type(exc).__name__}: {exc}"), None


def grid_search(
    kind: str,
    train_clips: Sequence[LabeledClip],
    val_clips: Sequence[LabeledClip],
    pools: dict | None = None,
    tc: TrainConfig | None = None,
    length: int = 30,
    workers: int = 1,
) -> GridResult:
    """Train every candidate and keep the one with the best validation accuracy.

    Candidate ``i`` trains with seed ``tc.seed ^ i``; ties on accuracy go to
    the earlier candidate.
    """
    tc = tc or TrainConfig()
    if not val_clips:
        raise ConfigurationError("grid search needs validation clips")
    jobs = [(i, kind, train_clips, val_clips, hp, tc, length) for i, hp in enumerate(grid_candidates(pools))]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_candidate, jobs))
    else:
        outcomes = [_run_candidate(job) for job in jobs]

    results = [r for r, _ in outcomes]
    best_index, best_strategy = None, None
    for (r, strategy) in outcomes:
        if r.val_accuracy is None:
            continue
        if best_index is None or r.val_accuracy > results[best_index].val_accuracy:
            best_index, best_strategy = r.index, strategy
    return GridResult(results, best_index, best_strategy)


# ---------------------------------------------------------------------------
# sequence-length sweep


@dataclass
class SweepRow:
    length: int
    metrics: Metrics | None
    grid: GridResult | None
    excluded: int


def sweep_lengths(
    kind: str,
    train_clips: Sequence[LabeledClip],
    val_clips: Sequence[LabeledClip],
    test_clips: Sequence[LabeledClip],
    lengths: Sequence[int],
    pools: dict | None = None,
    tc: TrainConfig | None = None,
    metrics_class_set: str | None = None,
    workers: int = 1,
) -> list[SweepRow]:
    """Independent grid search and test evaluation per sequence length.

    Clips with fewer observations than a length are left out of that row.
    """
    if not lengths:
        log.warning("sweep_lengths called with no lengths")
        return []
    rows = []
    for L in lengths:
        usable = lambda clips: [c for c in clips if len(c.track) >= L]
        tr, va, te = usable(train_clips), usable(val_clips), usable(test_clips)
        excluded = len(train_clips) + len(val_clips) + len(test_clips) - len(tr) - len(va) - len(te)
        if excluded:
            log.warning("length %d: %d clips too short, excluded", L, excluded)
        if not tr or not va or not te:
            rows.append(SweepRow(L, None, None, excluded))
            continue
        grid = grid_search(kind, tr, va, pools, tc, L, workers)
        metrics = evaluate(grid.best_strategy, te, metrics_class_set) if grid.best_strategy else None
        rows.append(SweepRow(L, metrics, grid, excluded))
    return rows


# ---------------------------------------------------------------------------
# timing


@dataclass(frozen=True)
class TimingReport:
    tracking: float  # median seconds per sequence
    features: float
    classification: float
    total: float  # sum of the stage medians
    measured_total: float  # median of per-sequence end-to-end times
    noise: float  # |measured_total - total|
    sequences: int
    repetitions: int
    outputs_stable: bool


def _timed(fn, *args):
    start = time.perf_counter()
    out = fn(*args)
    return out, time.perf_counter() - start


def _pick_track(tracks: list[Track], fallback: Track) -> Track:
    return max(tracks, key=len) if tracks else fallback


def timing_report(
    strategy: Strategy,
    clips: Sequence[LabeledClip],
    repetitions: int = 3,
    tracker_config: TrackerConfig | None = None,
) -> TimingReport:
    """Median wall-clock seconds per sequence for tracking, features and classification."""
    if repetitions < 1:
        raise ConfigurationError("repetitions must be >= 1")
    stages = {"tracking": [], "features": [], "classification": []}
    totals = []
    outputs: dict = {}
    stable = True
    for _ in range(repetitions):
        for c in clips:
            frames = group_by_frame(list(c.track.observations))
            tracks, t_track = _timed(track_sequence, frames, tracker_config)
            track = _pick_track(tracks, c.track)
            if len(track) < strategy.length:
                track = c.track

            def featurize():
                seq = normalize(resample(track, strategy.length), c.scene)
                side = side_of(track, c.scene) if strategy.kind == TWO_CLASS_LR else None
                return seq, side

            (seq, side), t_feat = _timed(featurize)
            if strategy.kind == TWO_CLASS_LR:
                model = strategy.models["left" if side.value == "Left" else "right"]
            else:
                model = strategy.models["main"]
            decision, t_cls = _timed(decide, model, seq, side)

            stages["tracking"].append(t_track)
            stages["features"].append(t_feat)
            stages["classification"].append(t_cls)
            totals.append(t_track + t_feat + t_cls)
            key = c.clip_id
            probs = decision.probabilities.tobytes()
            if key in outputs and outputs[key] != probs:
                stable = False
            outputs[key] = probs
    med = {k: statistics.median(v) if v else 0.0 for k, v in stages.items()}
    total = sum(med.values())
    measured = statistics.median(totals) if totals else 0.0
    return TimingReport(
        med["tracking"],
        med["features"],
        med["classification"],
        total,
        measured,
        abs(measured - total),
        len(clips),
        repetitions,
        stable,
    )
