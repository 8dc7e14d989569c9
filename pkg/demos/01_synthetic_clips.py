"""Synthetic cut-in and lane-pass clips from a pinhole camera model.

Run: python demos/01_synthetic_clips.py
"""
from collections import Counter

from cutin import synthgen
from cutin.features import Side, side_of
from cutin.trackdata import ManeuverClass, label_candidate, serialize_clip

# %% One noiseless clip of each kind
proto = synthgen.GenParams(noise_sigma=0.0)
for cls in (ManeuverClass.CUT_IN, ManeuverClass.LANE_PASS):
    for side in (Side.LEFT, Side.RIGHT):
        clip = synthgen.generate_clip(cls, side, proto)
        first, last = clip.track.boxes()[[0, -1]]
        print(f"{cls.value:9s} {side.value:5s}  first cx={first[0]:7.1f}  last cx={last[0]:7.1f}  "
              f"relabelled as {label_candidate(clip.track, clip.scene).label.value}")

# %% A balanced dataset with per-clip jitter
clips = synthgen.generate_dataset(50, seed=0)
print(Counter((c.label.value, side_of(c.track, c.scene).value) for c in clips))

# %% The on-disk format: a manifest plus an observations table
manifest, rows = serialize_clip(clips[0])
print(manifest.decode())
print("\n".join(rows.decode().splitlines()[:4]))
