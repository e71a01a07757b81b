"""Central finite-difference gradient checking in float64."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from dmae.tensor.core import Tensor, backward, recording


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """Elementwise ``|a - n| / max(|a|, |n|, floor)``.

    The floor keeps entries whose true gradient is zero from turning rounding
    noise into a huge ratio.
    """
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_grad(fn: Callable[[], float], x: np.ndarray, step: float = 1e-4,
                 indices: Optional[Sequence[tuple]] = None) -> np.ndarray:
    """Central differences of scalar ``fn()`` w.r.t. the array ``x`` (mutated in place)."""
    grad = np.zeros_like(x)
    it = indices if indices is not None else list(np.ndindex(x.shape))
    for idx in it:
        orig = x[idx]
        x[idx] = orig + step
        plus = fn()
        x[idx] = orig - step
        minus = fn()
        x[idx] = orig
        grad[idx] = (plus - minus) / (2.0 * step)
    return grad


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor], step: float = 1e-4,
                    max_entries: Optional[int] = None, rng: Optional[np.random.Generator] = None) -> float:
    """Return the max relative error between tape gradients and finite differences.

    ``fn`` rebuilds the scalar loss from ``params`` on every call.  Parameters
    should hold float64 data.  With ``max_entries`` only a random subset of
    coordinates per parameter is probed.
    """
    for p in params:
        p.grad = None
    with recording() as tape:
        loss = fn()
    backward(loss, tape)
    worst = 0.0
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        all_idx = list(np.ndindex(p.shape))
        if max_entries is not None and len(all_idx) > max_entries:
            pick = rng.choice(len(all_idx), size=max_entries, replace=False)
            all_idx = [all_idx[i] for i in sorted(pick)]

        def scalar() -> float:
            with recording():
                return float(fn().data)

        numeric = numeric_grad(scalar, p.data, step=step, indices=all_idx)
        idx = tuple(np.array(all_idx).T)
        err = relative_error(analytic[idx], numeric[idx])
        if err.size:
            worst = max(worst, float(err.max()))
    return worst
