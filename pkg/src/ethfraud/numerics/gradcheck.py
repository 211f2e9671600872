"""Central finite-difference verification of reverse-mode gradients."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


class NonFiniteError(FloatingPointError):
    pass


def _scalar(value) -> float:
    out = float(value.data.reshape(-1)[0]) if isinstance(value, Tensor) else float(value)
    if not np.isfinite(out):
        raise NonFiniteError(f"objective evaluated to {out}")
    return out


def check_gradients(f: Callable[[], Tensor], params: Sequence[Tensor], h: float = 1e-6,
                    floor: float = 1e-4, max_entries: int | None = None,
                    seed: int = 0) -> float:
    """Worst relative error between backprop and (f(x+h) - f(x-h)) / 2h.

    The error for one entry is ``|a - n| / max(|a|, |n|, floor)``; ``floor``
    keeps entries whose true gradient is ~0 from turning round-off noise into
    huge ratios.  With ``max_entries`` only that many randomly chosen entries
    per parameter are perturbed.
    """
    for p in params:
        p.grad = None
    loss = f()
    _scalar(loss)
    loss.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, grad in zip(params, analytic):
        flat = p.data.reshape(-1)
        if max_entries is not None and flat.size > max_entries:
            entries = rng.choice(flat.size, size=max_entries, replace=False)
        else:
            entries = range(flat.size)
        for idx in entries:
            original = flat[idx]
            flat[idx] = original + h
            up = _scalar(f())
            flat[idx] = original - h
            down = _scalar(f())
            flat[idx] = original
            numeric = (up - down) / (2.0 * h)
            a = grad.reshape(-1)[idx]
            err = abs(a - numeric) / max(abs(a), abs(numeric), floor)
            worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
