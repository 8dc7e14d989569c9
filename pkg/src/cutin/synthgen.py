"""Deterministic synthetic cut-in / lane-pass clips.

A target vehicle moves in road coordinates (lateral offset ``X`` from the ego
lane center, depth ``z`` ahead of the camera, both in meters) and is projected
with a pinhole camera::

    cx = W/2 + focal * X / z
    w  = focal * vehicle_width / z
    h  = focal * vehicle_height / z
    cy = H/2 + focal * camera_height / z - h/2     (box bottom on the road)

Cut-ins follow a logistic lateral profile into the ego lane; lane-passes keep
their lateral offset (optionally with a slow wobble). Every noiseless track is
checked with :func:`cutin.trackdata.label_candidate` before noise is added.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GenerationError, LabelingError
from .features import Side
from .trackdata import (
    BoundingBox,
    Detection,
    LabeledClip,
    ManeuverClass,
    SceneMeta,
    Track,
    inside_ego_lane,
    label_candidate,
)

MAX_RETRIES = 10
TARGET_ID = 1

# Jitter ranges used by generate_dataset.
DEPTH_RANGE = (10.0, 25.0)
DEPTH_DRIFT = 5.0
LATERAL_RANGE = (3.0, 4.0)
MIDPOINT_RANGE = (0.7, 1.3)
STEEPNESS_RANGE = (4.0, 8.0)
WOBBLE_RANGE = (0.0, 0.3)


def default_scene() -> SceneMeta:
    """1280x720 at 30 fps; the safety field covers the ego lane and its neighbours near the car."""
    return SceneMeta(
        image_width=1280,
        image_height=720,
        fps=30,
        safety_field=((0, 720), (1280, 720), (880, 396), (400, 396)),
        ego_lane_x_range=(500, 780),
    )


@dataclass(frozen=True)
class GenParams:
    scene: SceneMeta = field(default_factory=default_scene)
    clip_seconds: float = 2.0
    depth_start: float = 15.0
    depth_end: float = 15.0
    lateral_offset: float = 3.5  # magnitude, meters; side picks the sign
    transition_mid: float = 1.0  # seconds into the clip
    steepness: float = 6.0  # 1/s
    wobble: float = 0.0  # lane-pass lateral wobble amplitude, meters
    wobble_phase: float = 0.0
    noise_sigma: float = 2.0  # pixels
    seed: int = 0
    focal: float = 1000.0
    vehicle_width: float = 1.8
    vehicle_height: float = 1.5
    camera_height: float = 1.4

    def __post_init__(self):
        if not (self.depth_start > 0 and self.depth_end > 0):
            raise ValueError("depths must be positive")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.clip_seconds <= 0 or self.focal <= 0:
            raise ValueError("clip_seconds and focal must be positive")


def _split_class(cls: ManeuverClass, side: Side | None):
    """Normalize (class, side) to (is_cut_in, side, class_set)."""
    cls = ManeuverClass(cls)
    if cls is ManeuverClass.LEFT_CUT_IN:
        return True, Side.LEFT, "cutin3"
    if cls is ManeuverClass.RIGHT_CUT_IN:
        return True, Side.RIGHT, "cutin3"
    if cls in (ManeuverClass.CUT_IN, ManeuverClass.LANE_PASS):
        if side is None:
            raise ValueError(f"{cls.value} needs a side")
        return cls is ManeuverClass.CUT_IN, Side(side), "cutin2"
    raise ValueError(f"generator does not produce {cls.value}")


def lateral_profile(t: np.ndarray, cut_in: bool, gp: GenParams, sign: float) -> np.ndarray:
    if cut_in:
        s = 1.0 / (1.0 + np.exp(-gp.steepness * (t - gp.transition_mid)))
        return sign * gp.lateral_offset * (1.0 - s)
    period = 4.0 * gp.clip_seconds
    return sign * (gp.lateral_offset + gp.wobble * np.sin(2 * math.pi * t / period + gp.wobble_phase))


def project(X: np.ndarray, z: np.ndarray, gp: GenParams) -> np.ndarray:
    """Road-plane position to (N, 4) boxes (cx, cy, w, h)."""
    W, H = gp.scene.image_width, gp.scene.image_height
    w = gp.focal * gp.vehicle_width / z
    h = gp.focal * gp.vehicle_height / z
    cx = W / 2 + gp.focal * X / z
    cy = H / 2 + gp.focal * gp.camera_height / z - h / 2
    return np.stack([cx, cy, w, h], axis=1)


def _track_from_boxes(boxes: np.ndarray, fps: float) -> Track:
    obs = [
        Detection(k, int(math.floor(k * 1000.0 / fps + 0.5)), BoundingBox(*map(float, row)), 1.0)
        for k, row in enumerate(boxes)
    ]
    return Track(TARGET_ID, obs)


def _check(boxes: np.ndarray, cut_in: bool, gp: GenParams) -> str | None:
    """None when the noiseless boxes carry the requested label, else a reason."""
    try:
        result = label_candidate(_track_from_boxes(boxes, gp.scene.fps), gp.scene)
    except LabelingError:
        return "outside"
    if cut_in:
        if result.label is not ManeuverClass.CUT_IN or not inside_ego_lane(boxes[-1:], gp.scene)[0]:
            return "not_entered"
        return None
    if result.label is not ManeuverClass.LANE_PASS:
        return "entered"
    return None


def generate_clip(cls, side=None, gp: GenParams | None = None, clip_id: str | None = None, class_set: str | None = None) -> LabeledClip:
    """One labeled clip; noise is drawn from ``gp.seed``.

    ``cls`` is CutIn/LanePass with a ``side``, or LeftCutIn/RightCutIn.
    ``class_set`` forces the label set (e.g. LanePass inside ``cutin3``).
    """
    gp = gp or GenParams()
    cut_in, side, inferred = _split_class(cls, side)
    class_set = class_set or inferred
    sign = -1.0 if side is Side.LEFT else 1.0
    fps = gp.scene.fps
    n = int(math.floor(gp.clip_seconds * fps + 0.5))
    t = np.arange(n) / fps

    attempt = gp
    for _ in range(MAX_RETRIES + 1):
        z = np.linspace(attempt.depth_start, attempt.depth_end, n)
        boxes = np.round(project(lateral_profile(t, cut_in, attempt, sign), z, attempt), 2)
        reason = _check(boxes, cut_in, attempt)
        if reason is None:
            break
        if reason == "not_entered":
            attempt = replace(attempt, transition_mid=attempt.transition_mid - 0.1, steepness=attempt.steepness * 1.2)
        elif reason == "outside":
            attempt = replace(attempt, lateral_offset=attempt.lateral_offset * 0.9)
        else:
            attempt = replace(attempt, lateral_offset=attempt.lateral_offset * 1.1)
    else:
        raise GenerationError(f"could not produce a {'cut-in' if cut_in else 'lane-pass'} clip after {MAX_RETRIES} retries")

    if gp.noise_sigma > 0:
        rng = np.random.default_rng(gp.seed)
        boxes = boxes + rng.normal(0.0, gp.noise_sigma, size=boxes.shape)
        boxes[:, 2:] = np.maximum(boxes[:, 2:], 1.0)
        boxes = np.round(boxes, 2)

    if class_set == "cutin3":
        label = ManeuverClass.LANE_PASS if not cut_in else (
            ManeuverClass.LEFT_CUT_IN if side is Side.LEFT else ManeuverClass.RIGHT_CUT_IN
        )
    else:
        label = ManeuverClass.CUT_IN if cut_in else ManeuverClass.LANE_PASS
    clip_id = clip_id or f"synth-{label.value}-{side.value}-{gp.seed}"
    return LabeledClip(clip_id, gp.scene, _track_from_boxes(boxes, fps), label, class_set)


def jitter_params(base: GenParams, rng: np.random.Generator, seed: int) -> GenParams:
    z0 = rng.uniform(*DEPTH_RANGE)
    z1 = float(np.clip(z0 + rng.uniform(-DEPTH_DRIFT, DEPTH_DRIFT), *DEPTH_RANGE))
    return replace(
        base,
        depth_start=z0,
        depth_end=z1,
        lateral_offset=rng.uniform(*LATERAL_RANGE),
        transition_mid=rng.uniform(*MIDPOINT_RANGE),
        steepness=rng.uniform(*STEEPNESS_RANGE),
        wobble=rng.uniform(*WOBBLE_RANGE),
        wobble_phase=rng.uniform(0, 2 * math.pi),
        seed=seed,
    )


def generate_dataset(n: int, base: GenParams | None = None, seed: int = 0, class_set: str = "cutin2") -> list[LabeledClip]:
    """``n`` clips for each (class, side): 4n clips in total, balanced.

    Clip ``k`` uses parameters drawn from ``default_rng([seed, k])``.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    base = base or GenParams()
    clips = []
    k = 0
    for cls in (ManeuverClass.CUT_IN, ManeuverClass.LANE_PASS):
        for side in (Side.LEFT, Side.RIGHT):
            for _ in range(n):
                rng = np.random.default_rng([seed, k])
                gp = jitter_params(base, rng, seed=int(rng.integers(2**31)))
                try:
                    clip = generate_clip(cls, side, gp, clip_id=f"clip{k:06d}", class_set=class_set)
                except GenerationError as exc:
                    raise GenerationError(f"clip {k}: {exc}") from exc
                clips.append(clip)
                k += 1
    return clips


def scene_detections(clip: LabeledClip, n_distractors: int = 0, seed: int = 0, gp: GenParams | None = None):
    """Per-frame detections for the clip's target plus optional lane-pass distractors.

    Returns ``(rows, truth)``: ``rows`` is a list of ``(target_id, Detection)``
    sorted by frame (target_id is the ground-truth identity), ``truth`` maps
    target_id to its ``(N, 4)`` box array.
    """
    gp = gp or GenParams(scene=clip.scene)
    rng = np.random.default_rng(seed)
    fps = clip.scene.fps
    n = len(clip.track)
    t = np.arange(n) / fps
    truth = {TARGET_ID: clip.track.boxes()}
    lanes = [-7.0, -3.5, 3.5, 7.0]
    for j in range(n_distractors):
        lane = lanes[j % len(lanes)]
        z0 = 30.0 + 12.0 * j + rng.uniform(0, 4)
        z = np.linspace(z0, z0 + rng.uniform(-3, 3), n)
        X = np.full(n, lane) + 0.1 * np.sin(t)
        truth[TARGET_ID + 1 + j] = np.round(project(X, z, replace(gp, scene=clip.scene)), 2)
    rows = []
    for k, det in enumerate(clip.track.observations):
        for tid, boxes in truth.items():
            box = BoundingBox(*map(float, boxes[k]))
            rows.append((tid, Detection(det.frame_idx, det.timestamp_ms, box, 1.0)))
    return rows, truth
