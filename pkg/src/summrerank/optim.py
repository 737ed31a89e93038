"""First-order optimizers over dicts of numpy parameter arrays (updated in place)."""

from __future__ import annotations

import numpy as np


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.mean(x * x))) if x.size else 0.0


class SGD:
    def __init__(self, lr: float = 2e-3, momentum: float = 0.0):
        self.lr = lr
        self.momentum = momentum
        self._velocity: dict[str, np.ndarray] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        for name, p in params.items():
            g = grads[name]
            if self.momentum:
                v = self._velocity.setdefault(name, np.zeros_like(p))
                v *= self.momentum
                v += g
                g = v
            p -= self.lr * g


class Adafactor:
    """Adafactor with factored second moments for matrices, no first moment.

    Follows the common ``relative_step=False`` configuration: a fixed learning
    rate, ``beta2_t = 1 - t**decay_rate``, update clipping by RMS, and optional
    scaling of the step by the parameter RMS.
    """

    def __init__(
        self,
        lr: float = 2e-3,
        eps1: float = 1e-30,
        eps2: float = 1e-3,
        clip_threshold: float = 1.0,
        decay_rate: float = -0.8,
        scale_parameter: bool = False,
        weight_decay: float = 0.0,
    ):
        self.lr = lr
        self.eps1 = eps1
        self.eps2 = eps2
        self.clip_threshold = clip_threshold
        self.decay_rate = decay_rate
        self.scale_parameter = scale_parameter
        self.weight_decay = weight_decay
        self.t = 0
        self._state: dict[str, dict[str, np.ndarray]] = {}

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        self.t += 1
        beta2 = 1.0 - self.t**self.decay_rate
        for name, p in params.items():
            g = grads[name]
            sq = g * g + self.eps1
            state = self._state.setdefault(name, {})
            if p.ndim >= 2:
                row = state.setdefault("row", np.zeros(p.shape[:-1]))
                col = state.setdefault("col", np.zeros(p.shape[:-2] + p.shape[-1:]))
                row *= beta2
                row += (1.0 - beta2) * sq.mean(axis=-1)
                col *= beta2
                col += (1.0 - beta2) * sq.mean(axis=-2)
                r = 1.0 / np.sqrt(row / row.mean(axis=-1, keepdims=True))
                c = 1.0 / np.sqrt(col)
                update = r[..., :, None] * c[..., None, :] * g
            else:
                v = state.setdefault("v", np.zeros_like(p))
                v *= beta2
                v += (1.0 - beta2) * sq
                update = g / np.sqrt(v)
            update /= max(1.0, _rms(update) / self.clip_threshold)
            lr = self.lr
            if self.scale_parameter:
                lr *= max(self.eps2, _rms(p))
            if self.weight_decay:
                p -= self.weight_decay * lr * p
            p -= lr * update


OPTIMIZERS = {"adafactor": Adafactor, "sgd": SGD}


def make_optimizer(name: str, lr: float, **kwargs):
    try:
        cls = OPTIMIZERS[name]
    except KeyError:
        raise ValueError(f"unknown optimizer {name!r}; choose from {sorted(OPTIMIZERS)}") from None
    return cls(lr=lr, **kwargs)
