"""Central finite-difference gradient verification (run in float64)."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .tensor import Tensor

_TINY = float(np.finfo(np.float64).tiny)


def check_gradients(fn: Callable[[], Tensor], inputs: Sequence[Tensor], h: float = 1e-4,
                    max_entries: Optional[int] = 24, rng: Optional[np.random.Generator] = None,
                    atol: float = 1e-7) -> float:
    """
    Compare analytic gradients of the scalar ``fn()`` against central
    differences for every tensor in ``inputs``.

    ``fn`` must rebuild its graph from the current ``.data`` of the inputs on
    each call. At most ``max_entries`` coordinates per input are checked.
    Returns the largest relative error seen, measured as
    ``|a - n| / max(|a|, |n|, tiny)``. Coordinates where both values agree
    to within ``atol`` count as exact, so near-zero gradients are judged on
    the absolute difference alone.
    """
    rng = rng or np.random.default_rng(0)
    for t in inputs:
        t.grad = None
        if t.data.dtype != np.float64:
            raise TypeError("gradient checks need float64 tensors; wrap in precision(np.float64)")

    out = fn()
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    worst = 0.0
    for t, grad in zip(inputs, analytic):
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = rng.choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            original = flat[i]
            flat[i] = original + h
            plus = fn().item()
            flat[i] = original - h
            minus = fn().item()
            flat[i] = original
            numeric = (plus - minus) / (2.0 * h)
            a = grad.reshape(-1)[i]
            diff = abs(a - numeric)
            err = 0.0 if diff <= atol else diff / max(abs(a), abs(numeric), _TINY)
            worst = max(worst, err)
    return worst
