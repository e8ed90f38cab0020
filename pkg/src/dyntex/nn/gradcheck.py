"""Central finite-difference gradient checking."""
from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .autograd import Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-12,
                   scale: float | None = None) -> float:
    """max|a - n| / max(max|a|, max|n|): error relative to the gradient's scale.

    Entrywise ratios are useless for entries near zero, where the O(eps/h)
    rounding noise of the difference quotient dominates.
    """
    a, n = np.asarray(analytic), np.asarray(numeric)
    if not a.size:
        return 0.0
    ref = max(np.max(np.abs(a)), np.max(np.abs(n)))
    scale = max(ref if scale is None else max(scale, ref), floor)
    return float(np.max(np.abs(a - n)) / scale)


def check_gradients(loss_fn: Callable[[], Tensor], tensors: Sequence[Tensor], h: float = 1e-6,
                    max_entries: int | None = None, rng: np.random.Generator | None = None,
                    floor: float = 1e-12) -> float:
    """Compare backprop gradients of ``loss_fn()`` against central differences.

    Gradients are checked on at most ``max_entries`` random coordinates per
    tensor, relative to that tensor's full analytic gradient scale.  Returns
    the worst relative error found.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for t in tensors:
        t.grad = np.zeros_like(t.data)
    loss_fn().backward()
    analytic = [t.grad.copy() for t in tensors]
    worst = 0.0
    for t, ga in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        num = np.empty(len(idx))
        for k, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(loss_fn().data)
            flat[i] = orig - h
            fm = float(loss_fn().data)
            flat[i] = orig
            num[k] = (fp - fm) / (2 * h)
        worst = max(worst, relative_error(ga.reshape(-1)[idx], num, floor,
                                               scale=float(np.max(np.abs(ga))) if ga.size else 0.0))
    return worst
