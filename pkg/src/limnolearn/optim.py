"""Optimizers: sparsity-inducing dual averaging for relevance weights,
and Adam for everything else.

The relevance update is the closed form
    w = soft_threshold(w0 - gamma * G, kappa * sqrt(t))
where G is the running gradient sum and t the shared step count.  Values
hit exact zero whenever |w0 - gamma * G| <= kappa * sqrt(t), which is
what marks a feature or pair as pruned.
"""

from __future__ import annotations

import numpy as np

from .tensor import Parameter


def soft_threshold(v: np.ndarray, amount: float) -> np.ndarray:
    return np.sign(v) * np.maximum(0.0, np.abs(v) - amount)


class RdaState:
    """Dual-averaging state for one genome's relevance coordinates."""

    def __init__(self, names: list[str], gamma: float = 3e-3,
                 kappa: float = 1e-3, w0: float = 1.0):
        if gamma <= 0:
            raise ValueError("rda: gamma must be positive")
        if kappa < 0:
            raise ValueError("rda: kappa must be non-negative")
        self.names = list(names)
        self.index = {n: i for i, n in enumerate(self.names)}
        self.gsum = np.zeros(len(self.names))
        self.t = 0
        self.gamma = gamma
        self.kappa = kappa
        self.w0 = w0

    def values(self) -> np.ndarray:
        shift = self.kappa * np.sqrt(self.t)
        return soft_threshold(self.w0 - self.gamma * self.gsum, shift)

    def step(self, gradients: np.ndarray) -> np.ndarray:
        gradients = np.asarray(gradients, dtype=np.float64)
        if gradients.shape != self.gsum.shape:
            raise ValueError(
                f"rda_step: gradient shape {gradients.shape} does not match "
                f"{self.gsum.shape}")
        bad = ~np.isfinite(gradients)
        if bad.any():
            raise FloatingPointError(
                f"rda_step: non-finite gradient at {self.names[int(np.argmax(bad))]}")
        self.gsum += gradients
        self.t += 1
        return self.values()

    def reset_coordinate(self, coordinate: str | int) -> np.ndarray:
        """Zero one coordinate's gradient history; t keeps running."""
        if isinstance(coordinate, str):
            if coordinate not in self.index:
                raise KeyError(f"rda reset: unknown coordinate {coordinate!r}")
            idx = self.index[coordinate]
        else:
            idx = int(coordinate)
            if not 0 <= idx < len(self.names):
                raise KeyError(f"rda reset: coordinate index {idx} out of range")
        self.gsum[idx] = 0.0
        return self.values()

    def anchor_coordinate(self, idx: int, value: float):
        """Set one coordinate's gradient history so its closed-form value
        equals ``value`` at the current step count.

        Used when an offspring inherits relevance values from parents
        whose step counts differ from its own.
        """
        shift = self.kappa * np.sqrt(self.t)
        if value == 0.0:
            self.gsum[idx] = self.w0 / self.gamma
        else:
            self.gsum[idx] = (self.w0 - value
                              - np.sign(value) * shift) / self.gamma

    def clone(self) -> "RdaState":
        out = RdaState(self.names, self.gamma, self.kappa, self.w0)
        out.gsum = self.gsum.copy()
        out.t = self.t
        return out


def rda_step(state: RdaState, gradients: np.ndarray) -> np.ndarray:
    return state.step(gradients)


def reset_coordinate(state: RdaState, coordinate) -> np.ndarray:
    return state.reset_coordinate(coordinate)


def adam_step(values: np.ndarray, gradient: np.ndarray, m: np.ndarray,
              v: np.ndarray, t: int, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """One first/second-moment adaptive update; mutates values, m and v."""
    m *= beta1
    m += (1.0 - beta1) * gradient
    v *= beta2
    v += (1.0 - beta2) * gradient * gradient
    # fold both bias corrections into the step size
    lr_t = lr * np.sqrt(1.0 - beta2 ** t) / (1.0 - beta1 ** t)
    denom = np.sqrt(v)
    denom += eps * np.sqrt(1.0 - beta2 ** t)
    denom /= lr_t
    values -= m / denom


class Adam:
    """Adaptive optimizer over a fixed list of Parameters.

    ``step`` applies the update and zeroes the gradients it consumed.
    """

    def __init__(self, parameters: list[Parameter], lr: float = 3e-3,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.parameters = list(parameters)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.values) for p in self.parameters]
        self.v = [np.zeros_like(p.values) for p in self.parameters]

    def step(self):
        self.t += 1
        for p, m, v in zip(self.parameters, self.m, self.v):
            if not np.all(np.isfinite(p.grad)):
                raise FloatingPointError(
                    f"adam: non-finite gradient for {p.identifier}")
            adam_step(p.values, p.grad, m, v, self.t, self.lr, self.beta1,
                      self.beta2, self.eps)
            p.zero_grad()
