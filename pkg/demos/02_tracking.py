"""Multi-object tracking: Kalman filter plus Hungarian assignment on IoU.

Run: python demos/02_tracking.py
"""
import numpy as np

from cutin import synthgen, tracker
from cutin.tracker import group_by_frame, track_sequence

# %% Assignment agrees with a brute-force search
cost = np.array([[0.9, 0.1, 0.5], [0.2, 0.8, 0.7], [0.6, 0.4, 0.05]])
print("assignment:", tracker.hungarian(cost))

# %% A clip with two distractor vehicles
clip = synthgen.generate_dataset(1, seed=2)[0]
rows, truth = synthgen.scene_detections(clip, n_distractors=2, seed=4)
tracks = track_sequence(group_by_frame([d for _, d in rows]))
print(f"{len(truth)} vehicles in the scene, {len(tracks)} tracks recovered")
for t in tracks:
    print(f"  target {t.target_id}: {len(t)} frames, frames {t.observations[0].frame_idx}-{t.observations[-1].frame_idx}")

# %% Noiseless constant velocity is recovered exactly once the track is confirmed
from cutin.trackdata import BoundingBox, Detection

tr = tracker.Tracker()
for k in range(10):
    tr.step([Detection(k, k * 33, BoundingBox(400 + 5 * k, 300, 80, 60))])
(hyp,) = tr.live
print("state after 10 frames:", np.round(hyp.state.mean, 6))
