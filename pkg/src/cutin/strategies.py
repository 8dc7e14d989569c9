"""Baseline, three-class and side-aware two-class (left/right) strategies."""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import lstm
from .errors import ConfigurationError, InputError
from .features import Side, featurize_many, normalize, resample, side_of
from .lstm import Hyperparameters, LstmModel, TrainConfig
from .trackdata import CLASS_SETS, LabeledClip, ManeuverClass, SceneMeta, Track

log = logging.getLogger(__name__)

BASELINE = "baseline"
THREE_CLASS = "3class"
TWO_CLASS_LR = "2classlr"
KINDS = (BASELINE, THREE_CLASS, TWO_CLASS_LR)

_TO_TWO_CLASS = {
    ManeuverClass.CUT_IN: ManeuverClass.CUT_IN,
    ManeuverClass.LEFT_CUT_IN: ManeuverClass.CUT_IN,
    ManeuverClass.RIGHT_CUT_IN: ManeuverClass.CUT_IN,
    ManeuverClass.LANE_PASS: ManeuverClass.LANE_PASS,
}


def to_two_class(label: ManeuverClass) -> ManeuverClass:
    """LeftCutIn / RightCutIn collapse to CutIn."""
    return _TO_TWO_CLASS[ManeuverClass(label)]


def to_three_class(clip: LabeledClip) -> LabeledClip:
    """Side-annotate a two-class clip using the geometric side rule."""
    if clip.class_set == "cutin3":
        return clip
    if clip.class_set != "cutin2":
        raise ConfigurationError(f"cannot convert {clip.class_set} clip {clip.clip_id} to cutin3")
    label = clip.label
    if label is ManeuverClass.CUT_IN:
        left = side_of(clip.track, clip.scene) is Side.LEFT
        label = ManeuverClass.LEFT_CUT_IN if left else ManeuverClass.RIGHT_CUT_IN
    return replace(clip, label=label, class_set="cutin3")


@dataclass(frozen=True)
class Decision:
    label: ManeuverClass
    probabilities: np.ndarray
    side: Side | None = None

    def format(self) -> str:
        probs = ",".join(f"{p:.4f}" for p in self.probabilities)
        side = f" side={self.side.value}" if self.side is not None else ""
        return f"{self.label.value} p={probs}{side}"


@dataclass
class Strategy:
    kind: str
    models: dict  # "main" or "left"/"right" -> LstmModel
    length: int

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown strategy kind {self.kind!r}")
        expected = ("left", "right") if self.kind == TWO_CLASS_LR else ("main",)
        if tuple(sorted(self.models)) != expected:
            raise ConfigurationError(f"{self.kind} needs models {expected}, got {sorted(self.models)}")
        for m in self.models.values():
            if m.length != self.length:
                raise ConfigurationError("submodel sequence lengths disagree")
        if self.kind == TWO_CLASS_LR and self.models["left"].class_set != self.models["right"].class_set:
            raise ConfigurationError("left and right models must share a class set")

    @property
    def class_set(self) -> str:
        return next(iter(self.models.values())).class_set

    @property
    def classes(self):
        return CLASS_SETS[self.class_set]


def model_class_set(kind: str, clip_class_set: str) -> str:
    """Class set a strategy's model(s) use for clips labeled in ``clip_class_set``."""
    if kind == THREE_CLASS:
        if clip_class_set not in ("cutin3", "lanechange"):
            raise ConfigurationError(f"class set mismatch: {kind} needs cutin3 or lanechange labels, got {clip_class_set}")
        return clip_class_set
    if clip_class_set not in ("cutin2", "cutin3"):
        raise ConfigurationError(f"class set mismatch: {kind} needs cut-in labels, got {clip_class_set}")
    return "cutin2"


def target_labels(clips: Sequence[LabeledClip], class_set: str) -> np.ndarray:
    """Integer labels of ``clips`` in ``class_set`` (collapsing sided cut-ins if needed)."""
    classes = CLASS_SETS[class_set]
    out = []
    for c in clips:
        label = c.label if c.class_set == class_set else to_two_class(c.label)
        out.append(classes.index(label))
    return np.asarray(out, dtype=int)


def _check_clip_sets(clips):
    sets = {c.class_set for c in clips}
    if len(sets) > 1:
        raise ConfigurationError(f"clips mix class sets {sorted(sets)}")
    return sets.pop() if sets else None


def partition_by_side(clips: Sequence[LabeledClip]):
    left, right = [], []
    for c in clips:
        (left if side_of(c.track, c.scene) is Side.LEFT else right).append(c)
    return left, right


def _train_one(train_clips, val_clips, hp, tc, length, class_set):
    X = featurize_many(train_clips, length)
    y = target_labels(train_clips, class_set)
    Xv = featurize_many(val_clips, length)
    yv = target_labels(val_clips, class_set)
    return lstm.train(X, y, Xv, yv, hp, tc, class_set)


def train_strategy(
    kind: str,
    train_clips: Sequence[LabeledClip],
    val_clips: Sequence[LabeledClip],
    hp: Hyperparameters,
    tc: TrainConfig,
    length: int = 30,
):
    """Train a strategy. Returns ``(strategy, histories)`` with one history per submodel."""
    if kind not in KINDS:
        raise ConfigurationError(f"unknown strategy kind {kind!r}")
    if not train_clips:
        raise ConfigurationError("empty training set")
    clip_set = _check_clip_sets(list(train_clips) + list(val_clips))
    class_set = model_class_set(kind, clip_set)

    if kind != TWO_CLASS_LR:
        model, hist = _train_one(train_clips, val_clips, hp, tc, length, class_set)
        return Strategy(kind, {"main": model}, length), {"main": hist}

    train_l, train_r = partition_by_side(train_clips)
    val_l, val_r = partition_by_side(val_clips)
    if clip_set == "cutin3":
        off = sum(c.label is ManeuverClass.RIGHT_CUT_IN for c in train_l)
        off += sum(c.label is ManeuverClass.LEFT_CUT_IN for c in train_r)
        if off:
            log.warning("%d training cut-ins routed against their labeled side", off)
    models, hists = {}, {}
    for name, tr, va, offset in (("left", train_l, val_l, 0), ("right", train_r, val_r, 1)):
        if not tr:
            raise ConfigurationError(f"no training clips on the {name} side")
        models[name], hists[name] = _train_one(tr, va, hp, replace(tc, seed=tc.seed + offset), length, class_set)
    return Strategy(kind, models, length), hists


def classify(strategy: Strategy, track: Track, scene: SceneMeta) -> Decision:
    """Resample, normalize, route (left/right models) and predict; ties go to the lowest index."""
    if len(track) < strategy.length:
        raise InputError(f"sequence too short: {len(track)} observations for length {strategy.length}")
    seq = normalize(resample(track, strategy.length), scene)
    side = None
    if strategy.kind == TWO_CLASS_LR:
        side = side_of(track, scene)
        model = strategy.models["left" if side is Side.LEFT else "right"]
    else:
        model = strategy.models["main"]
    return decide(model, seq, side)


def decide(model: LstmModel, seq, side: Side | None = None) -> Decision:
    probs = lstm.predict(model, seq)
    label = model.classes[int(np.argmax(probs))]
    if side is None and label is ManeuverClass.LEFT_CUT_IN:
        side = Side.LEFT
    elif side is None and label is ManeuverClass.RIGHT_CUT_IN:
        side = Side.RIGHT
    return Decision(label, probs, side)


# ---------------------------------------------------------------------------
# serialization


def save_strategy(strategy: Strategy, path) -> None:
    meta = {
        "format": "cutin-strategy",
        "version": lstm.FORMAT_VERSION,
        "kind": strategy.kind,
        "length": strategy.length,
        "models": {name: lstm.model_meta(m) for name, m in sorted(strategy.models.items())},
    }
    arrays = {f"{name}/{k}": v for name, m in strategy.models.items() for k, v in m.params.items()}
    lstm.write_container(path, meta, arrays)


def load_strategy(path) -> Strategy:
    meta, arrays = lstm.read_container(path)
    if meta.get("format") != "cutin-strategy" or meta.get("version") != lstm.FORMAT_VERSION:
        raise ValueError(f"{path}: not a version {lstm.FORMAT_VERSION} strategy file")
    models = {name: lstm.model_from_meta(m, arrays, prefix=f"{name}/") for name, m in meta["models"].items()}
    return Strategy(meta["kind"], models, int(meta["length"]))
