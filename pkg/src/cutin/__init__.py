"""Cut-in and lane-pass maneuver prediction from tracked bounding boxes.

Modules: ``trackdata`` (clips, file formats, labeling), ``tracker`` (SORT-style
Kalman + Hungarian tracking), ``features`` (resampling and normalization),
``lstm`` (numpy LSTM classifier), ``strategies`` (baseline / 3-class /
side-aware 2-class), ``harness`` (metrics, grid search, timing), ``synthgen``
(synthetic clips) and ``cli``.
"""

__version__ = "0.1.0"
