"""Adam, RMSProp and AdaDelta over dicts of numpy parameter arrays."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

OPTIMIZERS = ("Adam", "RMSProp", "AdaDelta")

DEFAULT_CONSTANTS = {
    "Adam": {"beta1": 0.9, "beta2": 0.999, "eps": 1e-8},
    "RMSProp": {"rho": 0.9, "eps": 1e-8},
    "AdaDelta": {"rho": 0.95, "eps": 1e-6},
}


@dataclass
class OptimizerState:
    algorithm: str
    learning_rate: float = 1e-3  # AdaDelta ignores it
    constants: dict = field(default_factory=dict)
    step: int = 0
    first: dict = field(default_factory=dict)  # Adam m
    second: dict = field(default_factory=dict)  # Adam v, RMSProp / AdaDelta E[g^2]
    delta: dict = field(default_factory=dict)  # AdaDelta E[dx^2]

    def __post_init__(self):
        if self.algorithm not in OPTIMIZERS:
            raise ValueError(f"unknown optimizer {self.algorithm!r}; expected one of {OPTIMIZERS}")
        self.constants = {**DEFAULT_CONSTANTS[self.algorithm], **self.constants}


def _zeros_like(params):
    return {k: np.zeros_like(v) for k, v in params.items()}


def optimizer_step(state: OptimizerState, params: dict, grads: dict):
    """One update. Returns ``(new_params, state)``; ``state`` is advanced in place."""
    if not state.second:
        state.second = _zeros_like(params)
        if state.algorithm == "Adam":
            state.first = _zeros_like(params)
        elif state.algorithm == "AdaDelta":
            state.delta = _zeros_like(params)
    state.step += 1
    c = state.constants
    lr = state.learning_rate
    out = {}

    if state.algorithm == "Adam":
        b1, b2, eps = c["beta1"], c["beta2"], c["eps"]
        corr1 = 1 - b1**state.step
        corr2 = 1 - b2**state.step
        for k, p in params.items():
            g = grads[k]
            m = state.first[k] = b1 * state.first[k] + (1 - b1) * g
            v = state.second[k] = b2 * state.second[k] + (1 - b2) * g * g
            out[k] = p - lr * (m / corr1) / (np.sqrt(v / corr2) + eps)
    elif state.algorithm == "RMSProp":
        rho, eps = c["rho"], c["eps"]
        for k, p in params.items():
            g = grads[k]
            v = state.second[k] = rho * state.second[k] + (1 - rho) * g * g
            out[k] = p - lr * g / (np.sqrt(v) + eps)
    else:
        rho, eps = c["rho"], c["eps"]
        for k, p in params.items():
            g = grads[k]
            eg = state.second[k] = rho * state.second[k] + (1 - rho) * g * g
            dx = -np.sqrt(state.delta[k] + eps) / np.sqrt(eg + eps) * g
            state.delta[k] = rho * state.delta[k] + (1 - rho) * dx * dx
            out[k] = p + dx
    return out, state
