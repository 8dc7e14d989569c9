"""Domain types, clip file formats, dataset splitting and the labeling rule.

A clip is stored as two UTF-8 text files:

* a manifest of ``key = value`` lines (``#`` starts a comment)::

      clip_id = synth-000001
      image_width = 1280
      image_height = 720
      fps = 30
      label = CutIn
      class_set = cutin2
      safety_field = 500,720 780,720 675,396 605,396
      ego_lane_x_range = 500,780

  ``safety_field`` is optional and defaults to :func:`default_safety_field`.

* an observation table with header
  ``frame_idx,timestamp_ms,target_id,cx,cy,w,h,confidence``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import shapely

from .errors import ConfigurationError, LabelingError, ParseError, ValidationError

OBSERVATION_HEADER = ("frame_idx", "timestamp_ms", "target_id", "cx", "cy", "w", "h", "confidence")
MANIFEST_KEYS = (
    "clip_id",
    "image_width",
    "image_height",
    "fps",
    "label",
    "class_set",
    "safety_field",
    "ego_lane_x_range",
)
MIN_OBSERVATIONS = 15
ACTION_WINDOW_MS = 2000


class ManeuverClass(str, Enum):
    CUT_IN = "CutIn"
    LANE_PASS = "LanePass"
    LEFT_CUT_IN = "LeftCutIn"
    RIGHT_CUT_IN = "RightCutIn"
    LEFT_LANE_CHANGE = "LeftLaneChange"
    RIGHT_LANE_CHANGE = "RightLaneChange"
    NO_LANE_CHANGE = "NoLaneChange"

    def __str__(self):
        return self.value


# Class index order is the tuple order; models emit probabilities in this order.
CLASS_SETS: dict[str, tuple[ManeuverClass, ...]] = {
    "cutin2": (ManeuverClass.CUT_IN, ManeuverClass.LANE_PASS),
    "cutin3": (ManeuverClass.LEFT_CUT_IN, ManeuverClass.RIGHT_CUT_IN, ManeuverClass.LANE_PASS),
    "lanechange": (
        ManeuverClass.LEFT_LANE_CHANGE,
        ManeuverClass.RIGHT_LANE_CHANGE,
        ManeuverClass.NO_LANE_CHANGE,
    ),
}
# Clip sets bound to the 2-second cut-in/lane-pass action window.
WINDOWED_CLASS_SETS = ("cutin2", "cutin3")


def class_index(class_set: str, label: ManeuverClass) -> int:
    return CLASS_SETS[class_set].index(label)


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box in center format, image pixels (origin top-left, y down)."""

    cx: float
    cy: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValidationError(f"box width and height must be positive, got w={self.w} h={self.h}")

    @property
    def x_min(self):
        return self.cx - self.w / 2

    @property
    def x_max(self):
        return self.cx + self.w / 2

    @property
    def y_min(self):
        return self.cy - self.h / 2

    @property
    def y_max(self):
        return self.cy + self.h / 2

    def as_array(self):
        return np.array([self.cx, self.cy, self.w, self.h], dtype=float)


@dataclass(frozen=True)
class Detection:
    frame_idx: int
    timestamp_ms: int
    box: BoundingBox
    confidence: float = 1.0

    def __post_init__(self):
        if self.frame_idx < 0 or self.timestamp_ms < 0:
            raise ValidationError("frame_idx and timestamp_ms must be non-negative")
        if not 0.0 <= self.confidence <= 1.0:
            raise ValidationError(f"confidence {self.confidence} outside [0, 1]")


@dataclass(frozen=True)
class Track:
    target_id: int
    observations: tuple[Detection, ...]

    def __post_init__(self):
        object.__setattr__(self, "observations", tuple(self.observations))
        if not self.observations:
            raise ValidationError("track must be non-empty")
        frames = [d.frame_idx for d in self.observations]
        for a, b in zip(frames, frames[1:]):
            if b <= a:
                raise ValidationError(f"non-monotonic frame index: {b} after {a}")

    def __len__(self):
        return len(self.observations)

    def boxes(self) -> np.ndarray:
        """(N, 4) array of (cx, cy, w, h)."""
        return np.array([[d.box.cx, d.box.cy, d.box.w, d.box.h] for d in self.observations], dtype=float)

    @property
    def frame_indices(self):
        return [d.frame_idx for d in self.observations]


@dataclass(frozen=True)
class SceneMeta:
    image_width: float
    image_height: float
    fps: float
    safety_field: tuple[tuple[float, float], ...]
    ego_lane_x_range: tuple[float, float]

    def __post_init__(self):
        object.__setattr__(self, "safety_field", tuple((float(x), float(y)) for x, y in self.safety_field))
        object.__setattr__(self, "ego_lane_x_range", tuple(float(v) for v in self.ego_lane_x_range))
        if not (self.image_width > 0 and self.image_height > 0):
            raise ValidationError("image dimensions must be positive")
        if not self.fps > 0:
            raise ValidationError("fps must be positive")
        if len(self.safety_field) < 3:
            raise ValidationError("safety_field needs at least 3 vertices")
        for x, y in self.safety_field:
            if not (0 <= x <= self.image_width and 0 <= y <= self.image_height):
                raise ValidationError(f"safety_field vertex ({x}, {y}) outside image bounds")
        lo, hi = self.ego_lane_x_range
        if not lo < hi:
            raise ValidationError("ego_lane_x_range needs x_min < x_max")


def default_safety_field(image_width, image_height, ego_lane_x_range):
    """Isosceles trapezoid: bottom edge spans the ego lane, top edge at 55% height.

    The top edge is a quarter of the base width, centered on the lane midline.
    """
    lo, hi = ego_lane_x_range
    mid = (lo + hi) / 2
    quarter = (hi - lo) / 8
    top = 0.55 * image_height
    return ((lo, image_height), (hi, image_height), (mid + quarter, top), (mid - quarter, top))


@dataclass(frozen=True)
class LabeledClip:
    clip_id: str
    scene: SceneMeta
    track: Track
    label: ManeuverClass
    class_set: str
    duration_ms: int = field(default=-1)

    def __post_init__(self):
        if self.class_set not in CLASS_SETS:
            raise ValidationError(f"unknown class set {self.class_set!r}")
        label = ManeuverClass(self.label)
        object.__setattr__(self, "label", label)
        if label not in CLASS_SETS[self.class_set]:
            raise ValidationError(f"label {label.value} outside declared class set {self.class_set}")
        if len(self.track) < MIN_OBSERVATIONS:
            raise ValidationError(f"fewer than {MIN_OBSERVATIONS} observations ({len(self.track)})")
        period = 1000.0 / self.scene.fps
        obs = self.track.observations
        duration = obs[-1].timestamp_ms - obs[0].timestamp_ms + period
        if self.duration_ms < 0:
            object.__setattr__(self, "duration_ms", int(round(duration)))
        for a, b in zip(obs, obs[1:]):
            if b.timestamp_ms <= a.timestamp_ms:
                raise ValidationError(f"timestamp not increasing at frame {b.frame_idx}")
        if self.class_set in WINDOWED_CLASS_SETS and abs(self.duration_ms - ACTION_WINDOW_MS) > period:
            raise ValidationError(
                f"clip covers {self.duration_ms} ms; expected {ACTION_WINDOW_MS} ms within one frame period"
            )

    @property
    def label_index(self):
        return class_index(self.class_set, self.label)


@dataclass(frozen=True)
class DatasetSplit:
    train: list[str]
    val: list[str]
    test: list[str]
    seed: int


# ---------------------------------------------------------------------------
# file formats


def _fmt(x, digits=2):
    s = f"{x:.{digits}f}"
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    if s == "-0":
        s = "0"
    return s


def _parse_pair(text, line, source):
    parts = text.split(",")
    if len(parts) != 2:
        raise ParseError(f"expected 'x,y', got {text!r}", line, source)
    try:
        return float(parts[0]), float(parts[1])
    except ValueError:
        raise ParseError(f"non-numeric pair {text!r}", line, source) from None


def parse_manifest(manifest_bytes: bytes | str, source=None) -> dict:
    text = manifest_bytes.decode("utf-8") if isinstance(manifest_bytes, bytes) else manifest_bytes
    raw = {}
    for lineno, line in enumerate(text.split("\n"), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"expected 'key = value', got {line!r}", lineno, source)
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in MANIFEST_KEYS:
            raise ParseError(f"unknown manifest key {key!r}", lineno, source)
        if key in raw:
            raise ParseError(f"duplicate manifest key {key!r}", lineno, source)
        raw[key] = (value, lineno)

    missing = [k for k in MANIFEST_KEYS if k not in raw and k != "safety_field"]
    if missing:
        raise ParseError(f"missing manifest keys: {', '.join(missing)}", None, source)

    out = {"clip_id": raw["clip_id"][0], "label": raw["label"][0], "class_set": raw["class_set"][0]}
    for key in ("image_width", "image_height", "fps"):
        value, lineno = raw[key]
        try:
            out[key] = float(value)
        except ValueError:
            raise ParseError(f"{key} is not a number: {value!r}", lineno, source) from None
    value, lineno = raw["ego_lane_x_range"]
    out["ego_lane_x_range"] = _parse_pair(value, lineno, source)
    if "safety_field" in raw:
        value, lineno = raw["safety_field"]
        out["safety_field"] = tuple(_parse_pair(v, lineno, source) for v in value.split())
    else:
        out["safety_field"] = default_safety_field(out["image_width"], out["image_height"], out["ego_lane_x_range"])
    return out


def parse_observations(observations_bytes: bytes | str, source=None):
    """Parse an observation table into ``(target_id, [Detection, ...])`` rows.

    Returns a list of ``(target_id, Detection)`` in file order.
    """
    text = observations_bytes.decode("utf-8") if isinstance(observations_bytes, bytes) else observations_bytes
    lines = text.split("\n")
    rows = []
    header_seen = False
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        cells = [c.strip() for c in line.split(",")]
        if not header_seen:
            if tuple(cells) != OBSERVATION_HEADER:
                raise ParseError(f"bad header, expected {','.join(OBSERVATION_HEADER)}", lineno, source)
            header_seen = True
            continue
        rows.append(parse_observation_row(cells, lineno, source))
    if not header_seen:
        raise ParseError("empty observation table", None, source)
    return rows


def parse_observation_row(cells, lineno=None, source=None):
    if isinstance(cells, str):
        cells = [c.strip() for c in cells.split(",")]
    if len(cells) != len(OBSERVATION_HEADER):
        raise ParseError(f"expected {len(OBSERVATION_HEADER)} columns, got {len(cells)}", lineno, source)
    try:
        frame_idx, ts, target_id = int(cells[0]), int(cells[1]), int(cells[2])
        cx, cy, w, h, conf = (float(c) for c in cells[3:])
    except ValueError:
        raise ParseError(f"non-numeric field in row {','.join(cells)!r}", lineno, source) from None
    try:
        det = Detection(frame_idx, ts, BoundingBox(cx, cy, w, h), conf)
    except ValidationError as exc:
        raise ParseError(str(exc), lineno, source) from None
    return target_id, det


def parse_clip(manifest_bytes, observations_bytes, source=None) -> LabeledClip:
    meta = parse_manifest(manifest_bytes, source)
    rows = parse_observations(observations_bytes, source)
    if not rows:
        raise ValidationError(f"fewer than {MIN_OBSERVATIONS} observations (0)")
    ids = {tid for tid, _ in rows}
    if len(ids) != 1:
        raise ValidationError(f"observation table mixes target ids {sorted(ids)}")
    for (_, a), (_, b) in zip(rows, rows[1:]):
        if b.frame_idx <= a.frame_idx:
            raise ValidationError(f"non-monotonic frame index: {b.frame_idx} after {a.frame_idx}")
    scene = SceneMeta(
        image_width=meta["image_width"],
        image_height=meta["image_height"],
        fps=meta["fps"],
        safety_field=meta["safety_field"],
        ego_lane_x_range=meta["ego_lane_x_range"],
    )
    try:
        label = ManeuverClass(meta["label"])
    except ValueError:
        raise ValidationError(f"unknown label {meta['label']!r}") from None
    return LabeledClip(
        clip_id=meta["clip_id"],
        scene=scene,
        track=Track(ids.pop(), [d for _, d in rows]),
        label=label,
        class_set=meta["class_set"],
    )


def serialize_manifest(clip: LabeledClip) -> bytes:
    s = clip.scene
    lines = [
        f"clip_id = {clip.clip_id}",
        f"image_width = {_fmt(s.image_width)}",
        f"image_height = {_fmt(s.image_height)}",
        f"fps = {_fmt(s.fps)}",
        f"label = {clip.label.value}",
        f"class_set = {clip.class_set}",
        "safety_field = " + " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in s.safety_field),
        f"ego_lane_x_range = {_fmt(s.ego_lane_x_range[0])},{_fmt(s.ego_lane_x_range[1])}",
    ]
    return ("\n".join(lines) + "\n").encode("utf-8")


def format_observation_row(target_id, det: Detection) -> str:
    b = det.box
    return (
        f"{det.frame_idx},{det.timestamp_ms},{target_id},"
        f"{_fmt(b.cx)},{_fmt(b.cy)},{_fmt(b.w)},{_fmt(b.h)},{_fmt(det.confidence, 4)}"
    )


def serialize_observations(rows: Iterable[tuple[int, Detection]]) -> bytes:
    lines = [",".join(OBSERVATION_HEADER)]
    lines.extend(format_observation_row(tid, det) for tid, det in rows)
    return ("\n".join(lines) + "\n").encode("utf-8")


def serialize_clip(clip: LabeledClip) -> tuple[bytes, bytes]:
    rows = [(clip.track.target_id, d) for d in clip.track.observations]
    return serialize_manifest(clip), serialize_observations(rows)


def observations_path_for(manifest_path):
    """Sibling observation table of a ``*.manifest`` file."""
    p = Path(manifest_path)
    return p.with_suffix(".csv")


def write_clip(clip: LabeledClip, directory) -> tuple:
    directory = Path(directory)
    manifest, table = serialize_clip(clip)
    mpath = directory / f"{clip.clip_id}.manifest"
    mpath.write_bytes(manifest)
    observations_path_for(mpath).write_bytes(table)
    return mpath, observations_path_for(mpath)


def load_clip(manifest_path) -> LabeledClip:
    mpath = Path(manifest_path)
    return parse_clip(mpath.read_bytes(), observations_path_for(mpath).read_bytes(), source=str(mpath))


# ---------------------------------------------------------------------------
# splitting


def split_dataset(clips: Sequence[LabeledClip], ratios=(0.6, 0.2, 0.2), seed: int = 0) -> DatasetSplit:
    """Stratified, seeded train/val/test partition.

    Each class is shuffled and cut independently: ``floor(n*r_train)`` to train,
    ``floor(n*r_val)`` to val, the remainder to test.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r < 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigurationError(f"split ratios must be three non-negative numbers summing to 1, got {ratios}")
    if not clips:
        raise ConfigurationError("cannot split an empty clip list")
    ids = [c.clip_id for c in clips]
    if len(set(ids)) != len(ids):
        raise ConfigurationError("duplicate clip_id in dataset")

    by_class: dict[str, list[str]] = {}
    for c in clips:
        by_class.setdefault(c.label.value, []).append(c.clip_id)

    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for label in sorted(by_class):
        members = sorted(by_class[label])
        order = rng.permutation(len(members))
        members = [members[i] for i in order]
        n = len(members)
        # epsilon guards products like 405*0.6 landing at 242.99999999999997
        n_train = math.floor(n * ratios[0] + 1e-9)
        n_val = math.floor(n * ratios[1] + 1e-9)
        train += members[:n_train]
        val += members[n_train : n_train + n_val]
        test += members[n_train + n_val :]
    return DatasetSplit(train, val, test, seed)


def select(clips: Sequence[LabeledClip], clip_ids: Iterable[str]) -> list[LabeledClip]:
    by_id = {c.clip_id: c for c in clips}
    return [by_id[i] for i in clip_ids]


# ---------------------------------------------------------------------------
# labeling


@dataclass(frozen=True)
class LabelResult:
    label: ManeuverClass
    entry_frame: int
    full_body_frame: int | None


def _intersects_field(boxes: np.ndarray, scene: SceneMeta) -> np.ndarray:
    poly = shapely.Polygon(scene.safety_field)
    rects = shapely.box(
        boxes[:, 0] - boxes[:, 2] / 2,
        boxes[:, 1] - boxes[:, 3] / 2,
        boxes[:, 0] + boxes[:, 2] / 2,
        boxes[:, 1] + boxes[:, 3] / 2,
    )
    return np.asarray(shapely.intersects(poly, rects), dtype=bool)


def inside_ego_lane(boxes: np.ndarray, scene: SceneMeta) -> np.ndarray:
    """Whole horizontal extent of each box lies within the ego lane range."""
    lo, hi = scene.ego_lane_x_range
    return (boxes[:, 0] - boxes[:, 2] / 2 >= lo) & (boxes[:, 0] + boxes[:, 2] / 2 <= hi)


def label_candidate(track: Track, scene: SceneMeta) -> LabelResult:
    """Apply the safety-field rule to a track.

    CutIn when the box first touches the safety field and a strictly later box
    sits entirely inside the ego lane laterally; LanePass when it touches the
    field but never fully enters the lane.
    """
    boxes = track.boxes()
    touching = _intersects_field(boxes, scene)
    if not touching.any():
        raise LabelingError("no maneuver in safety field")
    first = int(np.argmax(touching))
    inside = inside_ego_lane(boxes, scene)
    inside[: first + 1] = False
    frames = track.frame_indices
    if inside.any():
        return LabelResult(ManeuverClass.CUT_IN, frames[first], frames[int(np.argmax(inside))])
    return LabelResult(ManeuverClass.LANE_PASS, frames[first], None)
