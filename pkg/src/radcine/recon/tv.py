"""Temporal total variation with circular boundary along the cardiac-phase axis."""

from __future__ import annotations

import numpy as np


def temporal_diff(x) -> np.ndarray:
    return np.roll(x, -1, axis=0) - x


def temporal_diff_adjoint(q) -> np.ndarray:
    return np.roll(q, 1, axis=0) - q


def temporal_tv(x) -> float:
    return float(np.sum(np.abs(temporal_diff(x))))


def temporal_tv_prox(x, tau: float, n_inner: int = 5, q0=None, return_dual: bool = False):
    """Approximate prox of tau * TV_t by projected gradient on the dual (Chambolle).

    Solves min_u 0.5||u - x||^2 + tau * sum|D_t u| through u = x - D^H q with
    |q| <= tau elementwise. `n_inner` steps of size 1/4 are taken from `q0`
    (zero by default); tau = 0 returns x unchanged.
    """
    frames = getattr(x, "frames", None)
    x = np.asarray(x if frames is None else frames)
    if tau < 0:
        raise ValueError("tau must be >= 0")
    if tau == 0 or x.shape[0] < 2:
        out = x.copy()
        return (out, np.zeros_like(x)) if return_dual else out
    q = np.zeros_like(x) if q0 is None else np.array(q0, dtype=x.dtype)
    for _ in range(n_inner):
        q = q + 0.25 * temporal_diff(x - temporal_diff_adjoint(q))
        mag = np.abs(q)
        q = np.where(mag > tau, q * (tau / np.maximum(mag, 1e-300)), q)
    u = x - temporal_diff_adjoint(q)
    return (u, q) if return_dual else u
