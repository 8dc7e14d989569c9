"""Track -> fixed-length normalized (cx, cy, w, h) sequences."""

from __future__ import annotations

import enum
import math
from collections.abc import Iterable, Iterator
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, InputError
from .trackdata import Detection, LabeledClip, SceneMeta, Track

SEQUENCE_LENGTHS = (15, 30, 45, 60)
WINDOW_SECONDS = 2.0


@dataclass(frozen=True)
class FeatureSequence:
    values: np.ndarray  # (L, 4), columns cx, cy, w, h in [0, 1]
    clip_id: str = ""
    start_frame: int = -1
    end_frame: int = -1

    @property
    def length(self):
        return self.values.shape[0]


class Side(str, enum.Enum):
    LEFT = "Left"
    RIGHT = "Right"

    def __str__(self):
        return self.value


def resample_indices(n: int, length: int) -> list[int]:
    """Which of ``n`` observations to keep for a ``length``-frame sequence.

    When ``n`` is an exact multiple of ``length`` every ``n // length``-th frame
    is kept starting from the first (60 -> 15 drops 3 of every 4 frames).
    Otherwise indices are spread as ``round(i * (n - 1) / (length - 1))`` so
    both endpoints survive.
    """
    if length < 2:
        raise InputError("sequence length must be >= 2")
    if n < length:
        raise InputError(f"sequence too short: {n} observations for length {length}")
    if n % length == 0:
        stride = n // length
        return list(range(0, n, stride))
    step = (n - 1) / (length - 1)
    return [int(math.floor(i * step + 0.5)) for i in range(length)]


def resample(track: Track, length: int) -> Track:
    idx = resample_indices(len(track), length)
    return Track(track.target_id, [track.observations[i] for i in idx])


def normalize(track: Track, scene: SceneMeta, clip_id: str = "") -> FeatureSequence:
    W, H = scene.image_width, scene.image_height
    if not (W > 0 and H > 0):
        raise ConfigurationError("image dimensions must be positive")
    values = normalize_boxes(track.boxes(), W, H)
    obs = track.observations
    return FeatureSequence(values, clip_id, obs[0].frame_idx, obs[-1].frame_idx)


def normalize_boxes(boxes: np.ndarray, image_width: float, image_height: float) -> np.ndarray:
    if not (image_width > 0 and image_height > 0):
        raise ConfigurationError("image dimensions must be positive")
    scale = np.array([image_width, image_height, image_width, image_height], dtype=float)
    return np.clip(np.asarray(boxes, dtype=float) / scale, 0.0, 1.0)


def denormalize(seq: FeatureSequence, scene: SceneMeta) -> np.ndarray:
    W, H = scene.image_width, scene.image_height
    return seq.values * np.array([W, H, W, H])


def side_of(track: Track, scene: SceneMeta) -> Side:
    """Left when the mean early center x sits left of the image midline."""
    boxes = track.boxes()
    k = max(1, len(boxes) // 4)
    return Side.LEFT if boxes[:k, 0].mean() < scene.image_width / 2 else Side.RIGHT


def featurize(clip: LabeledClip, length: int) -> FeatureSequence:
    return normalize(resample(clip.track, length), clip.scene, clip.clip_id)


def featurize_many(clips: Iterable[LabeledClip], length: int) -> np.ndarray:
    """Stack clips into a (N, length, 4) array."""
    seqs = [featurize(c, length).values for c in clips]
    if not seqs:
        return np.zeros((0, length, 4))
    return np.stack(seqs)


def window_size(fps: float) -> int:
    if not fps > 0:
        raise ConfigurationError("fps must be positive")
    return int(math.floor(WINDOW_SECONDS * fps + 0.5))


def iter_windows(detections: Iterable[Detection], fps: float) -> Iterator[list[Detection]]:
    """Non-overlapping two-second windows of raw detections; the partial tail is dropped.

    Holds at most one window in memory.
    """
    size = window_size(fps)
    buf: list[Detection] = []
    for det in detections:
        buf.append(det)
        if len(buf) == size:
            yield buf
            buf = []


def window_stream(
    detections: Iterable[Detection],
    fps: float,
    length: int,
    scene: SceneMeta | None = None,
    image_size: tuple[float, float] | None = None,
) -> Iterator[FeatureSequence]:
    """One normalized ``length``-frame sequence per two-second window.

    Image size comes from ``scene`` or ``image_size``.
    """
    if scene is not None:
        W, H = scene.image_width, scene.image_height
    elif image_size is not None:
        W, H = image_size
    else:
        raise ConfigurationError("window_stream needs a scene or an image size")
    size = window_size(fps)
    if size < length:
        raise ConfigurationError(f"a two-second window at {fps} fps has {size} frames, fewer than {length}")
    idx = resample_indices(size, length)
    for window in iter_windows(detections, fps):
        kept = [window[i] for i in idx]
        boxes = np.array([[d.box.cx, d.box.cy, d.box.w, d.box.h] for d in kept])
        yield FeatureSequence(normalize_boxes(boxes, W, H), "", window[0].frame_idx, window[-1].frame_idx)
