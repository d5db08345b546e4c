"""AdamW with decoupled weight decay, plus the linear decay schedule.

Written from scratch over plain numpy arrays so the whole training loop
stays framework-free and deterministic.
"""
from __future__ import annotations

import numpy as np

from .errors import DataError


class AdamW:
    """Adam with bias correction and decoupled weight decay.

    Parameters are a name -> array dict; updates are in place.  Weight decay
    multiplies the parameter directly (not the gradient) and is scaled by
    the current learning rate, following the decoupled formulation.
    """

    def __init__(
        self,
        params: dict[str, np.ndarray],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.0,
    ):
        self.params = params
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self.m = {name: np.zeros_like(p) for name, p in params.items()}
        self.v = {name: np.zeros_like(p) for name, p in params.items()}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        missing = set(self.params) - set(grads)
        if missing:
            raise DataError(f"gradients missing for parameters: {sorted(missing)}")
        self.step_count += 1
        bc1 = 1.0 - self.beta1**self.step_count
        bc2 = 1.0 - self.beta2**self.step_count
        for name, p in self.params.items():
            g = grads[name]
            m, v = self.m[name], self.v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p -= lr * (update + self.weight_decay * p)

    def state(self) -> dict[str, np.ndarray | int]:
        out: dict[str, np.ndarray | int] = {"step_count": self.step_count}
        for name in self.params:
            out[f"m.{name}"] = self.m[name]
            out[f"v.{name}"] = self.v[name]
        return out

    def load_state(self, state: dict) -> None:
        self.step_count = int(state["step_count"])
        for name in self.params:
            self.m[name][...] = state[f"m.{name}"]
            self.v[name][...] = state[f"v.{name}"]


def linear_lr(base_lr: float, step_index: int, total_steps: int) -> float:
    """Linearly decayed rate: base_lr * (1 - step_index / total_steps)."""
    if total_steps < 1:
        raise DataError(f"total_steps must be >= 1, got {total_steps}")
    if not (0 <= step_index <= total_steps):
        raise DataError(f"step_index {step_index} outside [0, {total_steps}]")
    return base_lr * (1.0 - step_index / total_steps)
