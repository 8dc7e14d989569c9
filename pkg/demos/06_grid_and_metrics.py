"""Grid search over hyperparameter pools and the evaluation metrics.

Run: python demos/06_grid_and_metrics.py
"""
from cutin import synthgen
from cutin.harness import grid_candidates, grid_search, metrics_from_confusion, timing_report
from cutin.lstm import TrainConfig
from cutin.trackdata import select, split_dataset

# %% Metrics from a confusion matrix (rows are true classes)
m = metrics_from_confusion([[45, 5], [10, 40]], ["CutIn", "LanePass"])
print(m.row())

# %% The full grid has 432 candidates; search a small slice of it
print(len(grid_candidates()), "candidates in the full grid")
pools = {"hidden_units": (60, 128), "batch_size": (5, 10), "optimizer": ("RMSProp",),
         "head_activation": ("Tanh",), "dropout_rate": (0.0,)}
clips = synthgen.generate_dataset(40, seed=3)
split = split_dataset(clips, seed=3)
train, val, test = (select(clips, ids) for ids in (split.train, split.val, split.test))
result = grid_search("2classlr", train, val, pools,
                     TrainConfig(epochs=60, learning_rate=0.01, early_stop_patience=0, seed=1))
for rank, c in enumerate(result.leaderboard, 1):
    print(f"{rank}. #{c.index} seed={c.seed} H={c.hp.hidden_units} B={c.hp.batch_size} "
          f"val={c.val_accuracy:.3f} ({c.train_seconds:.1f} s)")

# %% Per-stage timing of the winning strategy
report = timing_report(result.best_strategy, test[:10], repetitions=2)
print(f"tracking {report.tracking * 1e3:.2f} ms  features {report.features * 1e3:.2f} ms  "
      f"classification {report.classification * 1e3:.2f} ms")
