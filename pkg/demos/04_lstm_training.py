"""The numpy LSTM: gradient check, then training on a small dataset.

Run: python demos/04_lstm_training.py
"""
import numpy as np

from cutin import lstm, synthgen
from cutin.features import featurize_many
from cutin.lstm import Hyperparameters, TrainConfig
from cutin.strategies import target_labels
from cutin.trackdata import select, split_dataset

# %% Backprop against a central difference on one weight
rng = np.random.default_rng(0)
hp = Hyperparameters(hidden_units=6, head_activation="Tanh", custom=True)
params = lstm.init_params(6, 2, rng)
X, y = rng.random((4, 5, 4)), np.array([0, 1, 1, 0])
_, grads = lstm.loss_and_gradients(params, X, y, hp)
eps = 1e-5
params["U"][1, 2, 3] += eps
up = lstm.batch_loss(lstm.forward(params, X, hp)[0], y)[0]
params["U"][1, 2, 3] -= 2 * eps
down = lstm.batch_loss(lstm.forward(params, X, hp)[0], y)[0]
params["U"][1, 2, 3] += eps
print(f"dL/dU[1,2,3]: backprop {grads['U'][1, 2, 3]:.8f}  numeric {(up - down) / (2 * eps):.8f}")

# %% Train a two-class model; the loss sits near ln 2 for a while before it drops
clips = synthgen.generate_dataset(40, seed=3)
split = split_dataset(clips, seed=3)
train, val = select(clips, split.train), select(clips, split.val)
Xtr, ytr = featurize_many(train, 30), target_labels(train, "cutin2")
Xva, yva = featurize_many(val, 30), target_labels(val, "cutin2")
model, history = lstm.train(Xtr, ytr, Xva, yva, Hyperparameters(),
                            TrainConfig(epochs=100, learning_rate=0.003, early_stop_patience=0, seed=0))
for epoch in range(0, len(history), 10):
    print(f"epoch {epoch:2d}  loss {history.train_loss[epoch]:.4f}  val acc {history.val_accuracy[epoch]:.3f}")
print("best epoch", history.best_epoch)
