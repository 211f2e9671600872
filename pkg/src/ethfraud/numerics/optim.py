"""Adam with bias correction."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .nn import Parameter


class MissingGradientError(RuntimeError):
    pass


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: list[Parameter], state: AdamState, lr: float,
              betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
              step: int | None = None) -> None:
    """One in-place Adam update of every trainable parameter.

    ``step`` defaults to ``state.step + 1``; the state's counter is advanced to it.
    """
    b1, b2 = betas
    t = state.step + 1 if step is None else step
    for p in params:
        if not p.trainable:
            continue
        if p.grad is None:
            raise MissingGradientError(f"parameter {p.name!r} has no gradient")
        g = p.grad
        m = state.m.get(p.name)
        v = state.v.get(p.name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * (g * g)
        state.m[p.name] = m
        state.v[p.name] = v
        m_hat = m / (1.0 - b1 ** t)
        v_hat = v / (1.0 - b2 ** t)
        p.data = p.data - lr * m_hat / (np.sqrt(v_hat) + eps)
    state.step = t


class Adam:
    def __init__(self, params: list[Parameter], lr: float = 1e-3,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8,
                 clip_norm: float | None = None):
        names = [p.name for p in params]
        if len(set(names)) != len(names) or "" in names:
            raise ValueError("optimizer parameters need unique non-empty names")
        self.params = [p for p in params if p.trainable]
        self.lr = lr
        self.betas = betas
        self.eps = eps
        self.clip_norm = clip_norm
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> float:
        """Update parameters; returns the pre-clipping global gradient norm."""
        for p in self.params:
            if p.grad is None:
                raise MissingGradientError(f"parameter {p.name!r} has no gradient")
        norm = float(np.sqrt(sum(float(np.vdot(p.grad, p.grad)) for p in self.params)))
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
            for p in self.params:
                p.grad = p.grad * scale
        adam_step(self.params, self.state, self.lr, self.betas, self.eps)
        return norm

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name, arr in self.state.m.items():
            out[f"adam.m.{name}"] = arr
        for name, arr in self.state.v.items():
            out[f"adam.v.{name}"] = arr
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray], step: int) -> None:
        self.state = AdamState(step=step)
        for key, arr in arrays.items():
            if key.startswith("adam.m."):
                self.state.m[key[len("adam.m."):]] = arr.copy()
            elif key.startswith("adam.v."):
                self.state.v[key[len("adam.v."):]] = arr.copy()
