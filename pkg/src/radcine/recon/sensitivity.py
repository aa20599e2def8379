"""Low-resolution coil sensitivity estimation from time-averaged radial data."""

from __future__ import annotations

import numpy as np

from ..nufft import nufft_adjoint, plan_nufft
from ..preprocess import compute_dcf
from ..types import RadialKSpace, SensitivityMaps, Trajectory

MIN_SPOKES = 16


def estimate_sensitivities(y: RadialKSpace, traj: Trajectory, N: int,
                           center_frac: float = 0.25, rel_floor: float = 1e-3,
                           alpha: float = 2.0, width: int = 6) -> SensitivityMaps:
    """Coil images from the Hann-tapered central `center_frac` of k-space radius,
    divided by their root-sum-of-squares; pixels below rel_floor * max RSS are zero.
    """
    if traj.n_spokes < MIN_SPOKES:
        raise ValueError(f"need at least {MIN_SPOKES} spokes, got {traj.n_spokes}")
    if not np.any(y.data):
        raise ValueError("k-space data are all zero")
    w = compute_dcf(traj).weights.reshape(-1)
    k = traj.flat()
    kr = np.hypot(k[:, 0], k[:, 1])
    cutoff = 0.5 * center_frac
    sel = kr <= cutoff
    taper = 0.5 * (1 + np.cos(np.pi * kr[sel] / cutoff))
    samples = y.spoke_major().reshape(-1, y.n_coils)[sel].T
    plan = plan_nufft(N, k[sel], alpha, width)
    imgs = nufft_adjoint(plan, samples, w[sel] * taper)
    return SensitivityMaps.normalized(imgs, rel_floor)


def spokes_union(b):
    """All spokes of a BinnedKSpace merged in time order as (RadialKSpace-like data, Trajectory)."""
    idx = np.concatenate(b.phase_index_sets)
    order = np.argsort(idx, kind="stable")
    data = np.concatenate(b.per_phase_data, axis=1)[:, order, :]
    coords = np.concatenate([t.coords for t in b.per_phase_traj], axis=0)[order]
    return (RadialKSpace(data, idx[order].astype(np.float64)),
            Trajectory(coords, b.per_phase_traj[0].angle_increment_deg))
