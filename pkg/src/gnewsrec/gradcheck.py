"""Central finite-difference gradients for checking the analytic backward pass."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .numerics import Tensor


def numeric_grad(loss_fn: Callable[[], float], param: Tensor, h: float = 1e-5,
                 indices=None) -> np.ndarray:
    """Central differences of ``loss_fn`` w.r.t. entries of ``param``.

    ``indices`` restricts the probe to a subset of flat positions; the other
    entries of the returned array are left at zero.
    """
    flat = param.data.reshape(-1)
    grad = np.zeros_like(flat)
    positions = range(flat.size) if indices is None else indices
    for i in positions:
        old = flat[i]
        flat[i] = old + h
        up = loss_fn()
        flat[i] = old - h
        down = loss_fn()
        flat[i] = old
        grad[i] = (up - down) / (2.0 * h)
    return grad.reshape(param.shape)


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> float:
    """``||a - n|| / max(||a|| + ||n||, floor)`` over a whole parameter group.

    A norm ratio rather than an elementwise max: entries whose true gradient
    sits at finite-difference noise level (~1e-10) would otherwise dominate.
    The floor keeps groups whose gradient is identically zero (round-off on
    one side, an exact 0 on the other) from reporting a spurious error.
    """
    a = np.asarray(analytic, dtype=np.float64).ravel()
    n = np.asarray(numeric, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    denom = max(np.linalg.norm(a) + np.linalg.norm(n), floor)
    return float(np.linalg.norm(a - n) / denom)


def check_gradients(loss_fn: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5,
                    max_entries: int | None = None, rng: np.random.Generator | None = None
                    ) -> dict[str, float]:
    """Relative error between backprop and finite differences for each parameter.

    ``loss_fn`` must rebuild the forward graph on every call and be
    deterministic.  With ``max_entries`` set, a random subset of each
    parameter's entries is probed.
    """
    for p in params.values():
        p.grad = None
    loss = loss_fn()
    loss.backward()
    analytic = {k: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
                for k, p in params.items()}
    errors = {}
    for name, p in params.items():
        idx = None
        if max_entries is not None and p.data.size > max_entries:
            rng = rng or np.random.default_rng(0)
            idx = rng.choice(p.data.size, size=max_entries, replace=False)
        num = numeric_grad(lambda: loss_fn().item(), p, h=h, indices=idx)
        if idx is not None:
            errors[name] = rel_error(analytic[name].reshape(-1)[idx], num.reshape(-1)[idx])
        else:
            errors[name] = rel_error(analytic[name], num)
    return errors
