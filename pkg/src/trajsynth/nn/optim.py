"""RMSProp with per-parameter accumulators, plus hard weight clipping."""

from __future__ import annotations

import numpy as np

from .params import ModelParams


class RMSProp:
    """Root-mean-squared propagation; decay 0.9 and eps 1e-8 unless overridden."""

    def __init__(self, lr: float = 2e-4, decay: float = 0.9, eps: float = 1e-8):
        self.lr = lr
        self.decay = decay
        self.eps = eps
        self._acc: dict[str, np.ndarray] = {}

    def step(self, params: ModelParams) -> None:
        for name, arr in params.items():
            if arr.grad is None:
                continue
            acc = self._acc.get(name)
            if acc is None:
                acc = np.zeros_like(arr.values)
                self._acc[name] = acc
            acc *= self.decay
            acc += (1.0 - self.decay) * arr.grad * arr.grad
            arr.values -= self.lr * arr.grad / (np.sqrt(acc) + self.eps)

    def reset(self) -> None:
        self._acc.clear()


def rmsprop_step(params: ModelParams, lr: float = 2e-4, decay: float = 0.9,
                 eps: float = 1e-8, state: dict | None = None) -> dict:
    """Functional one-shot update; returns the accumulator state for chaining."""
    state = {} if state is None else state
    for name, arr in params.items():
        if arr.grad is None:
            continue
        acc = state.setdefault(name, np.zeros_like(arr.values))
        acc *= decay
        acc += (1.0 - decay) * arr.grad * arr.grad
        arr.values -= lr * arr.grad / (np.sqrt(acc) + eps)
    return state


def clip_weights(params: ModelParams, c: float = 0.01) -> ModelParams:
    """Clamp every parameter into [-c, c] (Lipschitz enforcement for the critic)."""
    for _, arr in params.items():
        np.clip(arr.values, -c, c, out=arr.values)
    return params
