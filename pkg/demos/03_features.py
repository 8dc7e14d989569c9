"""Fixed-length feature sequences and two-second windows.

Run: python demos/03_features.py
"""
from cutin import synthgen
from cutin.features import featurize, iter_windows, resample_indices, side_of, window_size
from cutin.trackdata import ManeuverClass

# %% Resampling a 60-frame clip down to the model length
for n, L in [(60, 15), (60, 30), (50, 30), (60, 60)]:
    idx = resample_indices(n, L)
    print(f"{n:3d} -> {L:2d}: {idx[:4]} ... {idx[-2:]}")

# %% Normalized features live in the unit square
clip = synthgen.generate_clip(ManeuverClass.CUT_IN, synthgen.Side.RIGHT)
seq = featurize(clip, 30)
print("feature shape", seq.values.shape, "range", seq.values.min().round(3), seq.values.max().round(3))
print("side:", side_of(clip.track, clip.scene).value)

# %% Windows for a stream at 30 fps
print("window size at 30 fps:", window_size(30))
windows = list(iter_windows(iter(clip.track.observations * 3), 30))
print(f"{3 * len(clip.track)} detections -> {len(windows)} windows")
