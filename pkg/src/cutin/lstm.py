"""Single-layer LSTM classifier with hand-derived backpropagation through time.

Parameters live in a flat dict of arrays:

====  ==================  =====================================
key   shape               role
====  ==================  =====================================
W     (4, H, 4)           input -> gate weights, gates (i, f, g, o)
U     (4, H, H)           recurrent weights
b     (4, H)              gate biases
D     (H, H)              dense head weights
d     (H,)                dense head bias
O     (K, H)              output projection
o     (K,)                output bias
====  ==================  =====================================

Only the final hidden state feeds the head:
dense -> activation -> inverted dropout -> projection -> softmax.
"""

from __future__ import annotations

import copy
import io
import json
import zipfile
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigurationError, InputError, NumericalError
from .optim import OPTIMIZERS, OptimizerState, optimizer_step
from .trackdata import CLASS_SETS

N_FEATURES = 4
GATES = ("i", "f", "g", "o")
ACTIVATIONS = ("ReLU", "Sigmoid", "Tanh")

TABLE1_POOLS = {
    "hidden_units": (60, 128, 256, 512),
    "batch_size": (5, 10, 50, 100),
    "optimizer": ("Adam", "RMSProp", "AdaDelta"),
    "head_activation": ("ReLU", "Sigmoid", "Tanh"),
    "dropout_rate": (0.0, 0.25, 0.5),
}
INIT_RANGE = 0.08
FORGET_BIAS = 1.0


@dataclass(frozen=True)
class Hyperparameters:
    hidden_units: int = 60
    batch_size: int = 10
    optimizer: str = "Adam"
    head_activation: str = "Tanh"
    dropout_rate: float = 0.0
    custom: bool = False  # allow values outside the standard pools

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        if self.head_activation not in ACTIVATIONS:
            raise ConfigurationError(f"unknown activation {self.head_activation!r}")
        if self.hidden_units < 1 or self.batch_size < 1 or not 0 <= self.dropout_rate < 1:
            raise ConfigurationError("hidden_units, batch_size >= 1 and dropout_rate in [0, 1) required")
        if not self.custom:
            for name, pool in TABLE1_POOLS.items():
                if getattr(self, name) not in pool:
                    raise ConfigurationError(f"{name}={getattr(self, name)!r} not in pool {pool}; set custom=True")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    learning_rate: float = 1e-3
    seed: int = 0
    early_stop_patience: int = 10  # 0 disables early stopping
    class_count: int | None = None

    def __post_init__(self):
        if self.epochs < 0 or self.early_stop_patience < 0:
            raise ConfigurationError("epochs and early_stop_patience must be >= 0")
        if not self.learning_rate > 0:
            raise ConfigurationError("learning_rate must be positive")


@dataclass
class LstmModel:
    params: dict
    hp: Hyperparameters
    class_set: str
    length: int

    @property
    def classes(self):
        return CLASS_SETS[self.class_set]

    @property
    def n_classes(self):
        return len(self.classes)

    @property
    def hidden_units(self):
        return self.params["U"].shape[1]


@dataclass
class History:
    train_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1

    def __len__(self):
        return len(self.train_loss)


# ---------------------------------------------------------------------------
# initialization


def init_params(hidden_units: int, n_classes: int, rng: np.random.Generator) -> dict:
    H, K = hidden_units, n_classes
    u = lambda *shape: rng.uniform(-INIT_RANGE, INIT_RANGE, size=shape)
    params = {
        "W": u(4, H, N_FEATURES),
        "U": u(4, H, H),
        "b": u(4, H),
        "D": u(H, H),
        "d": u(H),
        "O": u(K, H),
        "o": u(K),
    }
    params["b"][1] += FORGET_BIAS
    return params


def zero_params(hidden_units: int, n_classes: int) -> dict:
    H, K = hidden_units, n_classes
    return {
        "W": np.zeros((4, H, N_FEATURES)),
        "U": np.zeros((4, H, H)),
        "b": np.zeros((4, H)),
        "D": np.zeros((H, H)),
        "d": np.zeros(H),
        "O": np.zeros((K, H)),
        "o": np.zeros(K),
    }


# ---------------------------------------------------------------------------
# forward


def _sigmoid(x):
    # tanh form: no overflow for large |x|
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _as_batch(seq):
    x = getattr(seq, "values", seq)
    x = np.asarray(x, dtype=float)
    if x.ndim == 2:
        x = x[None]
    if x.ndim != 3 or x.shape[2] != N_FEATURES:
        raise InputError(f"expected (batch, L, {N_FEATURES}) input, got shape {x.shape}")
    return x


def lstm_forward(params: dict, seq):
    """Run the recurrence over a batch.

    ``seq`` is a FeatureSequence, an (L, 4) array or a (B, L, 4) array.
    Returns ``(h_last, cache)`` with ``h_last`` of shape (B, H).
    """
    X = _as_batch(seq)
    B, L, _ = X.shape
    W, U, b = params["W"], params["U"], params["b"]
    H = U.shape[1]
    Wc = W.reshape(4 * H, N_FEATURES)
    Uc = U.reshape(4 * H, H)
    bc = b.reshape(4 * H)

    xw = X @ Wc.T + bc  # (B, L, 4H), input contribution for every step at once
    gates = np.empty((L, 4, B, H))
    cells = np.empty((L + 1, B, H))
    hiddens = np.empty((L + 1, B, H))
    cells[0] = 0.0
    hiddens[0] = 0.0
    for t in range(L):
        z = xw[:, t] + hiddens[t] @ Uc.T
        i = _sigmoid(z[:, :H])
        f = _sigmoid(z[:, H : 2 * H])
        g = np.tanh(z[:, 2 * H : 3 * H])
        o = _sigmoid(z[:, 3 * H :])
        c = f * cells[t] + i * g
        gates[t, 0], gates[t, 1], gates[t, 2], gates[t, 3] = i, f, g, o
        cells[t + 1] = c
        hiddens[t + 1] = o * np.tanh(c)
    if not np.isfinite(hiddens).all():
        bad = int(np.argmax(~np.isfinite(hiddens).reshape(L + 1, -1).all(axis=1)))
        raise NumericalError(f"non-finite LSTM state at step {bad}")
    cache = {"X": X, "gates": gates, "cells": cells, "hiddens": hiddens}
    return hiddens[L], cache


def _activate(name, x):
    if name == "ReLU":
        return np.maximum(x, 0.0)
    if name == "Sigmoid":
        return _sigmoid(x)
    return np.tanh(x)


def _activation_grad(name, pre, post):
    if name == "ReLU":
        return (pre > 0).astype(float)
    if name == "Sigmoid":
        return post * (1.0 - post)
    return 1.0 - post * post


def dropout_mask(shape, rate: float, rng: np.random.Generator):
    """Inverted-dropout mask: kept units scaled by ``1 / (1 - rate)``."""
    keep = 1.0 - rate
    return (rng.random(shape) < keep) / keep


def head_forward(h, params: dict, activation: str, dropout_rate: float = 0.0, training: bool = False, rng=None, mask=None):
    """Logits from final hidden states. Returns ``(logits, cache)``.

    Dropout only applies when ``training`` and ``dropout_rate > 0``; an explicit
    ``mask`` overrides the one drawn from ``rng``.
    """
    h = np.atleast_2d(h)
    pre = h @ params["D"].T + params["d"]
    act = _activate(activation, pre)
    if training and dropout_rate > 0:
        if mask is None:
            if rng is None:
                raise InputError("training-mode dropout needs an rng or a mask")
            mask = dropout_mask(act.shape, dropout_rate, rng)
        dropped = act * mask
    else:
        mask = None
        dropped = act
    logits = dropped @ params["O"].T + params["o"]
    return logits, {"h": h, "pre": pre, "act": act, "mask": mask, "dropped": dropped, "activation": activation}


def softmax(logits):
    z = logits - np.max(logits, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def loss_and_grad(logits, label):
    """Softmax cross-entropy for one example: ``(loss, dlogits)``."""
    logits = np.asarray(logits, dtype=float)
    z = logits - logits.max()
    logsum = np.log(np.exp(z).sum())
    loss = float(logsum - z[label])
    dlogits = np.exp(z - logsum)
    dlogits[label] -= 1.0
    return loss, dlogits


def batch_loss(logits, labels):
    """Mean cross-entropy over a batch and its gradient w.r.t. the logits."""
    labels = np.asarray(labels, dtype=int)
    B = logits.shape[0]
    z = logits - logits.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(z).sum(axis=1))
    loss = float(np.mean(logsum - z[np.arange(B), labels]))
    d = np.exp(z - logsum[:, None])
    d[np.arange(B), labels] -= 1.0
    return loss, d / B


def forward(params, X, hp: Hyperparameters, training=False, rng=None, mask=None):
    h, lcache = lstm_forward(params, X)
    logits, hcache = head_forward(h, params, hp.head_activation, hp.dropout_rate, training, rng, mask)
    return logits, {"lstm": lcache, "head": hcache, "logits": logits}


def backward(params: dict, cache, labels):
    """Gradients of the mean batch cross-entropy for every parameter.

    ``cache`` is the second value returned by :func:`forward` for the same
    parameters and batch. Returns ``(grads, mean_loss)``.
    """
    lcache, hcache = cache["lstm"], cache["head"]
    loss, dlogits = batch_loss(cache["logits"], labels)
    grads = {}

    grads["O"] = dlogits.T @ hcache["dropped"]
    grads["o"] = dlogits.sum(axis=0)
    ddropped = dlogits @ params["O"]
    dact = ddropped * hcache["mask"] if hcache["mask"] is not None else ddropped
    dpre = dact * _activation_grad(hcache["activation"], hcache["pre"], hcache["act"])
    grads["D"] = dpre.T @ hcache["h"]
    grads["d"] = dpre.sum(axis=0)
    dh = dpre @ params["D"]

    X, gates, cells, hiddens = lcache["X"], lcache["gates"], lcache["cells"], lcache["hiddens"]
    L = X.shape[1]
    H = params["U"].shape[1]
    Uc = params["U"].reshape(4 * H, H)
    dWc = np.zeros((4 * H, N_FEATURES))
    dUc = np.zeros((4 * H, H))
    dbc = np.zeros(4 * H)
    dc_next = np.zeros_like(dh)
    for t in range(L - 1, -1, -1):
        i, f, g, o = gates[t]
        c = cells[t + 1]
        tc = np.tanh(c)
        do = dh * tc
        dc = dc_next + dh * o * (1.0 - tc * tc)
        di = dc * g
        dg = dc * i
        df = dc * cells[t]
        dc_next = dc * f
        dz = np.concatenate(
            [di * i * (1.0 - i), df * f * (1.0 - f), dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1
        )
        dWc += dz.T @ X[:, t]
        dUc += dz.T @ hiddens[t]
        dbc += dz.sum(axis=0)
        dh = dz @ Uc
    grads["W"] = dWc.reshape(4, H, N_FEATURES)
    grads["U"] = dUc.reshape(4, H, H)
    grads["b"] = dbc.reshape(4, H)
    for k, v in grads.items():
        if not np.isfinite(v).all():
            raise NumericalError(f"non-finite gradient for {k}")
    return grads, loss


def loss_and_gradients(params, X, labels, hp: Hyperparameters, training=False, rng=None, mask=None):
    """Forward plus backward on one batch: ``(mean_loss, grads)``."""
    _, cache = forward(params, X, hp, training, rng, mask)
    grads, loss = backward(params, cache, labels)
    return loss, grads


# ---------------------------------------------------------------------------
# inference


def predict_batch(model: LstmModel, X) -> np.ndarray:
    X = _as_batch(X)
    if X.shape[1] != model.length:
        raise InputError(f"sequence length {X.shape[1]} does not match model length {model.length}")
    logits, _ = forward(model.params, X, model.hp, training=False)
    return softmax(logits)


def predict(model: LstmModel, seq) -> np.ndarray:
    """Class probabilities for one sequence (inference mode, no dropout)."""
    return predict_batch(model, seq)[0]


def accuracy(model: LstmModel, X, y) -> float:
    if len(y) == 0:
        return float("nan")
    return float(np.mean(np.argmax(predict_batch(model, X), axis=1) == np.asarray(y)))


# ---------------------------------------------------------------------------
# training


def new_model(hp: Hyperparameters, class_set: str, length: int, seed: int) -> LstmModel:
    rng = np.random.default_rng(seed)
    return LstmModel(init_params(hp.hidden_units, len(CLASS_SETS[class_set]), rng), hp, class_set, length)


def train(X_train, y_train, X_val, y_val, hp: Hyperparameters, tc: TrainConfig, class_set: str = "cutin2"):
    """Mini-batch training; returns the snapshot with the best validation accuracy.

    Ties on validation accuracy go to the lower validation loss. Without
    validation data, training accuracy is used for selection.
    Returns ``(model, history)``.
    """
    X_train = _as_batch(X_train) if len(X_train) else np.zeros((0, 2, N_FEATURES))
    y_train = np.asarray(y_train, dtype=int)
    if len(y_train) == 0:
        raise ConfigurationError("empty training set")
    K = len(CLASS_SETS[class_set])
    if tc.class_count is not None and tc.class_count != K:
        raise ConfigurationError(f"class_count {tc.class_count} does not match class set {class_set} ({K})")
    if y_train.min() < 0 or y_train.max() >= K:
        raise ConfigurationError(f"labels outside 0..{K - 1}")
    has_val = X_val is not None and len(y_val) > 0
    if has_val:
        X_val = _as_batch(X_val)
        y_val = np.asarray(y_val, dtype=int)
    else:
        X_val, y_val = X_train, y_train
    N, L, _ = X_train.shape

    model = new_model(hp, class_set, L, tc.seed)
    history = History()
    if tc.epochs == 0:
        return model, history

    state = OptimizerState(hp.optimizer, tc.learning_rate)
    params = model.params
    best = (-1.0, np.inf)
    best_params = copy.deepcopy(params)
    stale = 0
    for epoch in range(tc.epochs):
        order_rng = np.random.default_rng([tc.seed, epoch])
        drop_rng = np.random.default_rng([tc.seed, epoch, 1])
        order = order_rng.permutation(N)
        total = 0.0
        for start in range(0, N, hp.batch_size):
            idx = order[start : start + hp.batch_size]
            loss, grads = loss_and_gradients(params, X_train[idx], y_train[idx], hp, training=True, rng=drop_rng)
            params, state = optimizer_step(state, params, grads)
            total += loss * len(idx)
        model.params = params
        probs = predict_batch(model, X_val)
        val_acc = float(np.mean(np.argmax(probs, axis=1) == y_val))
        val_loss = float(-np.mean(np.log(np.maximum(probs[np.arange(len(y_val)), y_val], 1e-300))))
        history.train_loss.append(total / N)
        history.val_accuracy.append(val_acc)
        history.val_loss.append(val_loss)
        if val_acc > best[0] or (val_acc == best[0] and val_loss < best[1]):
            best = (val_acc, val_loss)
            best_params = copy.deepcopy(params)
            history.best_epoch = epoch
            stale = 0
        else:
            stale += 1
            if tc.early_stop_patience and stale >= tc.early_stop_patience:
                break
    model.params = best_params
    return model, history


# ---------------------------------------------------------------------------
# serialization

FORMAT_VERSION = 1
_ZIP_DATE = (1980, 1, 1, 0, 0, 0)


def write_container(path, meta: dict, arrays: dict) -> None:
    """Zip of ``meta.json`` plus one ``.npy`` per array, with fixed timestamps.

    Arrays are stored C-order (row-major) float64 so identical content gives
    identical bytes.
    """
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_ZIP_DATE)
        zf.writestr(info, json.dumps(meta, sort_keys=True, indent=2), compress_type=zipfile.ZIP_DEFLATED)
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arrays[name], dtype=np.float64), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_ZIP_DATE)
            zf.writestr(info, buf.getvalue(), compress_type=zipfile.ZIP_DEFLATED)


def read_container(path):
    with zipfile.ZipFile(path) as zf:
        meta = json.loads(zf.read("meta.json"))
        arrays = {}
        for name in zf.namelist():
            if name.endswith(".npy"):
                arrays[name[: -len(".npy")]] = np.load(io.BytesIO(zf.read(name)), allow_pickle=False)
    return meta, arrays


def model_meta(model: LstmModel) -> dict:
    return {
        "class_set": model.class_set,
        "length": model.length,
        "hyperparameters": asdict(model.hp),
        "shapes": {k: list(v.shape) for k, v in sorted(model.params.items())},
    }


def model_from_meta(meta: dict, arrays: dict, prefix: str = "") -> LstmModel:
    params = {}
    for k, shape in meta["shapes"].items():
        arr = arrays[prefix + k]
        if list(arr.shape) != shape:
            raise ValueError(f"tensor {prefix + k} has shape {arr.shape}, expected {shape}")
        params[k] = arr
    return LstmModel(params, Hyperparameters(**meta["hyperparameters"]), meta["class_set"], int(meta["length"]))


def save_model(model: LstmModel, path) -> None:
    meta = {"format": "cutin-lstm", "version": FORMAT_VERSION, **model_meta(model)}
    write_container(path, meta, model.params)


def load_model(path) -> LstmModel:
    meta, arrays = read_container(path)
    if meta.get("format") != "cutin-lstm" or meta.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: not a version {FORMAT_VERSION} LSTM model file")
    return model_from_meta(meta, arrays)
