import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import linear_boxes, make_clip, make_scene, make_track
from cutin import trackdata
from cutin.errors import LabelingError, ParseError, ValidationError
from cutin.trackdata import (
    BoundingBox,
    Detection,
    LabeledClip,
    ManeuverClass,
    SceneMeta,
    Track,
    label_candidate,
    parse_clip,
    serialize_clip,
    split_dataset,
)

MANIFEST = b"""clip_id = m1
image_width = 1280
image_height = 720
fps = 30
label = CutIn
class_set = cutin2
ego_lane_x_range = 500,780
"""


def observations(n, fps=30, target_id=4):
    rows = [",".join(trackdata.OBSERVATION_HEADER)]
    for k in range(n):
        rows.append(f"{k},{round(k * 1000 / fps)},{target_id},{300 + k},400,80,60,0.9")
    return ("\n".join(rows) + "\n").encode()


def test_parse_well_formed_clip():
    clip = parse_clip(MANIFEST, observations(60))
    assert len(clip.track) == 60
    assert clip.label is ManeuverClass.CUT_IN
    assert clip.scene.image_width == 1280
    assert clip.track.target_id == 4
    assert clip.duration_ms == 2000


def test_parse_rejects_short_clip():
    with pytest.raises(ValidationError, match="fewer than 15 observations"):
        parse_clip(MANIFEST, observations(10))


def test_parse_rejects_non_monotonic_frames():
    data = observations(60).decode().split("\n")
    data[5], data[6] = data[6], data[5]
    with pytest.raises(ValidationError, match="non-monotonic frame index"):
        parse_clip(MANIFEST, "\n".join(data).encode())


def test_manifest_errors_carry_line_numbers():
    bad = MANIFEST + b"colour = red\n"
    with pytest.raises(ParseError, match="line 8"):
        parse_clip(bad, observations(60))
    with pytest.raises(ParseError, match="duplicate"):
        parse_clip(MANIFEST + b"fps = 25\n", observations(60))
    with pytest.raises(ParseError, match="missing"):
        parse_clip(b"clip_id = x\n", observations(60))


def test_observation_table_errors():
    with pytest.raises(ParseError, match="bad header"):
        trackdata.parse_observations(b"a,b,c\n")
    with pytest.raises(ParseError, match="line 2"):
        trackdata.parse_observations(b",".join(h.encode() for h in trackdata.OBSERVATION_HEADER) + b"\n1,2,3\n")


def test_label_outside_class_set():
    with pytest.raises(ValidationError, match="outside declared class set"):
        parse_clip(MANIFEST.replace(b"CutIn", b"LeftCutIn"), observations(60))


def test_duration_must_match_action_window():
    with pytest.raises(ValidationError, match="expected 2000 ms"):
        parse_clip(MANIFEST, observations(90))
    # lane-change clips are not bound to the two-second window
    clip = parse_clip(
        MANIFEST.replace(b"CutIn", b"NoLaneChange").replace(b"cutin2", b"lanechange"), observations(90)
    )
    assert len(clip.track) == 90


def test_scene_validation():
    with pytest.raises(ValidationError):
        SceneMeta(1280, 720, 30, ((0, 0), (2000, 0), (0, 10)), (500, 780))
    with pytest.raises(ValidationError):
        SceneMeta(1280, 720, 30, ((0, 0), (10, 0), (0, 10)), (780, 500))
    with pytest.raises(ValidationError):
        BoundingBox(0, 0, -1, 5)


def test_write_and_load(tmp_path):
    clip = parse_clip(MANIFEST, observations(60))
    mpath, opath = trackdata.write_clip(clip, tmp_path)
    assert mpath.name == "m1.manifest" and opath.name == "m1.csv"
    again = trackdata.load_clip(mpath)
    assert serialize_clip(again) == serialize_clip(clip)


coord = st.integers(min_value=100, max_value=100_000).map(lambda k: k / 100)


@st.composite
def clips(draw):
    fps = draw(st.sampled_from([10, 15, 25, 30]))
    n = int(round(2 * fps))
    class_set = draw(st.sampled_from(["cutin2", "cutin3"]))
    label = draw(st.sampled_from(trackdata.CLASS_SETS[class_set]))
    boxes = draw(st.lists(st.tuples(coord, coord, coord, coord), min_size=n, max_size=n))
    conf = draw(st.integers(0, 10_000)) / 10_000
    lo = draw(st.integers(0, 600))
    hi = draw(st.integers(lo + 1, 1280))
    scene = SceneMeta(1280, 720, fps, trackdata.default_safety_field(1280, 720, (lo, hi)), (lo, hi))
    obs = [
        Detection(k, int(math.floor(k * 1000 / fps + 0.5)), BoundingBox(*b), conf) for k, b in enumerate(boxes)
    ]
    cid = draw(st.from_regex(r"[a-z][a-z0-9_-]{0,12}", fullmatch=True))
    return LabeledClip(cid, scene, Track(draw(st.integers(0, 999)), obs), label, class_set)


@settings(max_examples=60, deadline=None)
@given(clips())
def test_parse_serialize_round_trip(clip):
    first = parse_clip(*serialize_clip(clip))
    second = parse_clip(*serialize_clip(first))
    assert first == second
    assert first.clip_id == clip.clip_id
    assert first.label == clip.label
    np.testing.assert_array_equal(first.track.boxes(), clip.track.boxes())
    assert first.scene.ego_lane_x_range == clip.scene.ego_lane_x_range


def _dummy_clips(n_cut, n_pass):
    out = []
    boxes = linear_boxes(60)
    for k in range(n_cut + n_pass):
        out.append(make_clip(boxes, "CutIn" if k < n_cut else "LanePass", clip_id=f"k{k:04d}"))
    return out


def test_split_counts_875_clips():
    split = split_dataset(_dummy_clips(405, 470), (0.6, 0.2, 0.2), seed=1)
    assert (len(split.train), len(split.val), len(split.test)) == (525, 175, 175)


def test_split_single_clip():
    split = split_dataset(_dummy_clips(1, 0), (0.6, 0.2, 0.2), seed=0)
    assert (len(split.train), len(split.val), len(split.test)) == (0, 0, 1)


def test_split_deterministic_and_seed_sensitive():
    clips = _dummy_clips(30, 30)
    assert split_dataset(clips, seed=5) == split_dataset(clips, seed=5)
    assert split_dataset(clips, seed=5).train != split_dataset(clips, seed=6).train


def test_split_bad_ratios():
    with pytest.raises(ValueError):
        split_dataset(_dummy_clips(3, 3), (0.5, 0.2, 0.2))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 40), st.integers(0, 40), st.integers(0, 2**31 - 1))
def test_split_partition_and_stratification(n_cut, n_pass, seed):
    if n_cut + n_pass == 0:
        return
    clips = _dummy_clips(n_cut, n_pass)
    split = split_dataset(clips, (0.6, 0.2, 0.2), seed)
    ids = split.train + split.val + split.test
    assert len(ids) == len(clips) == len(set(ids))
    labels = {c.clip_id: c.label for c in clips}
    per_class = Counter(labels[i] for i in split.train)
    for label, n in ((ManeuverClass.CUT_IN, n_cut), (ManeuverClass.LANE_PASS, n_pass)):
        assert abs(per_class[label] - math.floor(n * 0.6)) <= 1


# labeling ------------------------------------------------------------------


def test_label_lateral_cut_in():
    scene = make_scene()
    xs = np.linspace(200, 640, 60)
    boxes = np.stack([xs, np.full(60, 650), np.full(60, 80), np.full(60, 60)], axis=1)
    result = label_candidate(make_track(boxes), scene)
    assert result.label is ManeuverClass.CUT_IN
    assert result.entry_frame == 0
    lo, hi = scene.ego_lane_x_range
    first_inside = next(k for k, x in enumerate(xs) if x - 40 >= lo and x + 40 <= hi)
    assert result.full_body_frame == first_inside


def test_label_parallel_lane_pass():
    boxes = linear_boxes(60, start=(200, 650, 80, 60), velocity=(0, 0, 0, 0))
    result = label_candidate(make_track(boxes), make_scene())
    assert result.label is ManeuverClass.LANE_PASS
    assert result.full_body_frame is None


def test_label_outside_field():
    boxes = linear_boxes(60, start=(60, 60, 40, 30), velocity=(0.1, 0, 0, 0))
    with pytest.raises(LabelingError, match="no maneuver in safety field"):
        label_candidate(make_track(boxes), make_scene())


def test_full_body_must_come_strictly_after_entry():
    # already inside the lane at the entry frame, never re-observed later
    boxes = np.array([[640, 650, 80, 60]] + [[640, 100, 10, 10]] * 20, dtype=float)
    boxes[1:, 0] = 50
    result = label_candidate(make_track(boxes), make_scene())
    assert result.label is ManeuverClass.LANE_PASS


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 4), st.integers(0, 3))
def test_label_invariant_to_subsampling(stride, phase):
    scene = make_scene()
    xs = np.linspace(150, 640, 90)
    boxes = np.stack([xs, np.full(90, 650), np.full(90, 80), np.full(90, 60)], axis=1)
    full = label_candidate(make_track(boxes), scene)
    keep = sorted(set(range(phase % stride, 90, stride)) | {0, full.full_body_frame})
    sub = make_track(boxes[keep])
    sub = Track(sub.target_id, [Detection(keep[i], d.timestamp_ms, d.box) for i, d in enumerate(sub.observations)])
    result = label_candidate(sub, scene)
    assert (result.label, result.entry_frame, result.full_body_frame) == (
        full.label,
        full.entry_frame,
        full.full_body_frame,
    )
