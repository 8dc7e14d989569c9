"""SORT-style tracker: constant-velocity Kalman filter plus IoU assignment.

The state is ``(cx, cy, w, h, vcx, vcy, vw, vh)`` in pixels and pixels per
frame, so corrected boxes come straight out of the filter mean.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.optimize import linear_sum_assignment

from .errors import InputError, NumericalError, ValidationError
from .trackdata import BoundingBox, Detection, Track

STATE_DIM = 8
MEAS_DIM = 4

# Base noise levels before scaling (px^2 and (px/frame)^2).
_Q_BASE = np.diag([0.5, 0.5, 0.5, 0.5, 0.05, 0.05, 0.05, 0.05])
_R_BASE = np.diag([4.0, 4.0, 4.0, 4.0])
_P0_VELOCITY = 100.0

_F = np.eye(STATE_DIM)
_F[:MEAS_DIM, MEAS_DIM:] = np.eye(MEAS_DIM)
_H = np.zeros((MEAS_DIM, STATE_DIM))
_H[:, :MEAS_DIM] = np.eye(MEAS_DIM)


@dataclass(frozen=True)
class TrackerConfig:
    iou_threshold: float = 0.3
    min_hits: int = 3
    max_age: int = 5
    process_noise_scale: float = 1.0
    measurement_noise_scale: float = 1.0

    def __post_init__(self):
        if not 0 < self.iou_threshold <= 1:
            raise ValidationError("iou_threshold must lie in (0, 1]")
        if self.min_hits < 1:
            raise ValidationError("min_hits must be >= 1")
        if self.max_age < 0:
            raise ValidationError("max_age must be >= 0")
        if not (self.process_noise_scale > 0 and self.measurement_noise_scale > 0):
            raise ValidationError("noise scales must be positive")

    @property
    def Q(self):
        return self.process_noise_scale * _Q_BASE

    @property
    def R(self):
        return self.measurement_noise_scale * _R_BASE


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray

    @property
    def box(self) -> BoundingBox:
        cx, cy, w, h = self.mean[:MEAS_DIM]
        return BoundingBox(float(cx), float(cy), max(float(w), 1e-6), max(float(h), 1e-6))


def iou(a: BoundingBox, b: BoundingBox) -> float:
    ix = min(a.x_max, b.x_max) - max(a.x_min, b.x_min)
    iy = min(a.y_max, b.y_max) - max(a.y_min, b.y_min)
    if ix <= 0 or iy <= 0:
        return 0.0
    inter = ix * iy
    union = a.w * a.h + b.w * b.h - inter
    return float(min(1.0, inter / union))


def iou_matrix(boxes_a: np.ndarray, boxes_b: np.ndarray) -> np.ndarray:
    """Pairwise IoU of two (n, 4) center-format box arrays."""
    a = np.asarray(boxes_a, dtype=float).reshape(-1, 4)[:, None, :]
    b = np.asarray(boxes_b, dtype=float).reshape(-1, 4)[None, :, :]
    ix = np.minimum(a[..., 0] + a[..., 2] / 2, b[..., 0] + b[..., 2] / 2) - np.maximum(
        a[..., 0] - a[..., 2] / 2, b[..., 0] - b[..., 2] / 2
    )
    iy = np.minimum(a[..., 1] + a[..., 3] / 2, b[..., 1] + b[..., 3] / 2) - np.maximum(
        a[..., 1] - a[..., 3] / 2, b[..., 1] - b[..., 3] / 2
    )
    inter = np.clip(ix, 0, None) * np.clip(iy, 0, None)
    union = a[..., 2] * a[..., 3] + b[..., 2] * b[..., 3] - inter
    return np.minimum(1.0, inter / union)


def hungarian(cost) -> list[tuple[int, int]]:
    """Minimum-cost assignment of size ``min(m, n)`` as sorted ``(row, col)`` pairs."""
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise InputError("cost must be a 2-D matrix")
    if not np.all(np.isfinite(cost)):
        raise InputError("cost matrix has non-finite entries")
    if cost.size == 0:
        return []
    rows, cols = linear_sum_assignment(cost)
    return [(int(r), int(c)) for r, c in zip(rows, cols)]


def initiate(z: BoundingBox, config: TrackerConfig) -> KalmanState:
    mean = np.zeros(STATE_DIM)
    mean[:MEAS_DIM] = z.as_array()
    cov = np.zeros((STATE_DIM, STATE_DIM))
    cov[:MEAS_DIM, :MEAS_DIM] = config.R
    cov[MEAS_DIM:, MEAS_DIM:] = _P0_VELOCITY * np.eye(MEAS_DIM)
    return KalmanState(mean, cov)


def kalman_predict(state: KalmanState, config: TrackerConfig) -> KalmanState:
    mean = _F @ state.mean
    cov = _F @ state.covariance @ _F.T + config.Q
    return KalmanState(mean, (cov + cov.T) / 2)


def kalman_update(state: KalmanState, z: BoundingBox, config: TrackerConfig) -> KalmanState:
    P = state.covariance
    S = _H @ P @ _H.T + config.R
    try:
        factor = cho_factor(S, lower=True)
    except np.linalg.LinAlgError:
        raise NumericalError("singular innovation covariance") from None
    PHt = P @ _H.T
    gain = cho_solve(factor, PHt.T).T
    innovation = z.as_array() - _H @ state.mean
    mean = state.mean + gain @ innovation
    # Joseph form keeps the covariance PSD under rounding.
    IKH = np.eye(STATE_DIM) - gain @ _H
    cov = IKH @ P @ IKH.T + gain @ config.R @ gain.T
    return KalmanState(mean, (cov + cov.T) / 2)


def two_point_state(z0: BoundingBox, z1: BoundingBox, frames_elapsed: int, config: TrackerConfig) -> KalmanState:
    """State from two measurements: position at ``z1``, velocity by differencing."""
    dt = float(frames_elapsed)
    p1 = z1.as_array()
    mean = np.concatenate([p1, (p1 - z0.as_array()) / dt])
    R = config.R
    cov = np.block([[R, R / dt], [R / dt, 2 * R / dt**2]])
    return KalmanState(mean, cov)


class Status(enum.Enum):
    TENTATIVE = "Tentative"
    CONFIRMED = "Confirmed"
    DEAD = "Dead"


@dataclass
class TrackHypothesis:
    target_id: int
    state: KalmanState
    age: int = 0
    hits: int = 1
    misses: int = 0
    status: Status = Status.TENTATIVE
    history: list[Detection] = field(default_factory=list)
    first_box: BoundingBox | None = None
    first_frame: int = 0
    ever_confirmed: bool = False

    def predicted_box(self) -> BoundingBox:
        return self.state.box


def associate(tracks: Sequence[TrackHypothesis], detections: Sequence[Detection], config: TrackerConfig):
    """Assign detections to predicted track boxes on ``1 - IoU``.

    Returns ``(matches, unmatched_tracks, unmatched_detections)`` where
    ``matches`` holds ``(track_index, detection_index)`` pairs.
    """
    if not tracks or not detections:
        return [], list(range(len(tracks))), list(range(len(detections)))
    tb = np.array([t.predicted_box().as_array() for t in tracks])
    db = np.array([d.box.as_array() for d in detections])
    overlap = iou_matrix(tb, db)
    matches = []
    for r, c in hungarian(1.0 - overlap):
        if overlap[r, c] >= config.iou_threshold:
            matches.append((r, c))
    matched_t = {r for r, _ in matches}
    matched_d = {c for _, c in matches}
    return (
        matches,
        [i for i in range(len(tracks)) if i not in matched_t],
        [j for j in range(len(detections)) if j not in matched_d],
    )


class Tracker:
    """Sequential fold over frames. One instance per logical thread."""

    def __init__(self, config: TrackerConfig | None = None):
        self.config = config or TrackerConfig()
        self.live: list[TrackHypothesis] = []
        self.finished: list[TrackHypothesis] = []
        self._next_id = 0

    def step(self, detections: Sequence[Detection]) -> None:
        cfg = self.config
        for t in self.live:
            t.state = kalman_predict(t.state, cfg)
            t.age += 1
        matches, lost, fresh = associate(self.live, detections, cfg)
        for ti, di in matches:
            self._apply(self.live[ti], detections[di])
        for ti in lost:
            t = self.live[ti]
            t.misses += 1
            if t.misses > cfg.max_age:
                t.status = Status.DEAD
        for di in fresh:
            self._spawn(detections[di])
        still = []
        for t in self.live:
            (self.finished if t.status is Status.DEAD else still).append(t)
        self.live = still

    def _spawn(self, det: Detection) -> None:
        cfg = self.config
        t = TrackHypothesis(self._next_id, initiate(det.box, cfg))
        self._next_id += 1
        t.first_box, t.first_frame = det.box, det.frame_idx
        t.history.append(det)
        if cfg.min_hits <= 1:
            t.status, t.ever_confirmed = Status.CONFIRMED, True
        self.live.append(t)

    def _apply(self, t: TrackHypothesis, det: Detection) -> None:
        cfg = self.config
        if t.hits == 1:
            t.state = two_point_state(t.first_box, det.box, det.frame_idx - t.first_frame, cfg)
        else:
            try:
                t.state = kalman_update(t.state, det.box, cfg)
            except NumericalError:
                pass  # keep the prediction, drop this update
        t.hits += 1
        t.misses = 0
        if t.status is Status.TENTATIVE and t.hits >= cfg.min_hits:
            t.status, t.ever_confirmed = Status.CONFIRMED, True
        t.history.append(Detection(det.frame_idx, det.timestamp_ms, t.state.box, det.confidence))

    def tracks(self) -> list[Track]:
        """Every hypothesis that reached Confirmed, ordered by target id."""
        out = [t for t in self.finished + self.live if t.ever_confirmed]
        out.sort(key=lambda t: t.target_id)
        return [Track(t.target_id, t.history) for t in out]


def track_sequence(frames: Sequence[Sequence[Detection]], config: TrackerConfig | None = None) -> list[Track]:
    tracker = Tracker(config)
    for dets in frames:
        tracker.step(dets)
    return tracker.tracks()


def group_by_frame(detections: Sequence[Detection]) -> list[list[Detection]]:
    """Bucket a flat detection list into contiguous per-frame lists (empty frames kept)."""
    if not detections:
        return []
    lo = min(d.frame_idx for d in detections)
    hi = max(d.frame_idx for d in detections)
    frames: list[list[Detection]] = [[] for _ in range(hi - lo + 1)]
    for d in detections:
        frames[d.frame_idx - lo].append(d)
    return frames
