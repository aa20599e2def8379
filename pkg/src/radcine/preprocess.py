"""Raw k-space preparation: prewhitening, trajectories, cardiac binning,
respiratory gating, spoke selection, density compensation and phase correction.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .types import (BinnedKSpace, DCFWeights, PhysioTrace, RadialKSpace, Trajectory)

log = logging.getLogger(__name__)

RIDGE = 1e-9
BOUNDARY_TOL = 1e-9


class EmptyPhaseError(ValueError):
    def __init__(self, phases):
        self.phases = list(phases)
        super().__init__(f"no spokes left in cardiac phase(s) {self.phases}")


def make_trajectory(n_spokes: int, n_readout: int, angle_increment_deg: float) -> Trajectory:
    if n_spokes < 1 or n_readout < 1:
        raise ValueError("n_spokes and n_readout must be >= 1")
    theta = np.deg2rad(np.mod(np.arange(n_spokes) * angle_increment_deg, 180.0))
    kr = (np.arange(n_readout) - n_readout // 2) / n_readout
    coords = np.stack([np.outer(np.sin(theta), kr), np.outer(np.cos(theta), kr)], axis=-1)
    return Trajectory(coords, angle_increment_deg)


def spoke_angles_deg(n_spokes: int, angle_increment_deg: float) -> np.ndarray:
    return np.mod(np.arange(n_spokes) * angle_increment_deg, 180.0)


def estimate_noise_cov(noise_samples) -> np.ndarray:
    """Coil noise covariance (1/M) sum n n^H from noise-only samples [M, N_c]."""
    n = np.asarray(noise_samples, dtype=np.complex128)
    if not np.all(np.isfinite(n)):
        raise ValueError("noise samples contain non-finite values")
    M, nc = n.shape
    if M <= nc:
        warnings.warn(f"only {M} noise samples for {nc} coils; covariance is ill-conditioned",
                      RuntimeWarning, stacklevel=2)
    psi = n.T @ n.conj() / M
    return (psi + psi.conj().T) / 2


def whitening_factor(psi) -> np.ndarray:
    """Lower Cholesky factor of the ridge-regularized covariance."""
    psi = np.asarray(psi, dtype=np.complex128)
    nc = psi.shape[0]
    reg = psi + RIDGE * np.real(np.trace(psi)) / nc * np.eye(nc)
    try:
        return np.linalg.cholesky(reg)
    except np.linalg.LinAlgError:
        raise ValueError("noise covariance is not positive definite after ridge") from None


def whiten_samples(samples, psi) -> np.ndarray:
    """Apply L^-1 to the coil vectors on the last axis."""
    L = whitening_factor(psi)
    s = np.asarray(samples, dtype=np.complex128)
    flat = s.reshape(-1, s.shape[-1])
    out = scipy.linalg.solve_triangular(L, flat.T, lower=True).T
    return out.reshape(s.shape)


def prewhiten(y: RadialKSpace, psi) -> RadialKSpace:
    return RadialKSpace(whiten_samples(y.data, psi), y.spoke_timestamps)


def bin_cardiac(trace: PhysioTrace, spoke_timestamps, n_phases: int) -> list:
    """Assign spokes to `n_phases` cardiac bins by position in the enclosing RR interval.

    Spokes before the first or after the last trigger are dropped. A spoke
    within BOUNDARY_TOL of a bin boundary (in units of one bin) goes to the
    later bin, so timestamps on a regular grid are not split by rounding.
    """
    if n_phases < 1:
        raise ValueError("n_phases must be >= 1")
    trig = np.asarray(trace.cardiac_triggers, dtype=np.float64)
    if trig.size < 2:
        raise ValueError("at least two cardiac triggers are required")
    s = np.asarray(spoke_timestamps, dtype=np.float64)
    j = np.searchsorted(trig, s, side="right") - 1
    ok = (j >= 0) & (j < trig.size - 1)
    idx = np.flatnonzero(ok)
    jj = j[ok]
    frac = (s[ok] - trig[jj]) / (trig[jj + 1] - trig[jj])
    b = np.minimum(np.floor(n_phases * frac + BOUNDARY_TOL).astype(np.int64), n_phases - 1)
    return [idx[b == t] for t in range(n_phases)]


@dataclass(frozen=True, eq=False)
class GatingMask:
    keep: np.ndarray
    threshold_value: float
    keep_fraction: float

    def validate(self):
        from .types import Violation
        if not 0 < self.keep_fraction <= 1:
            return Violation("GatingMask.keep_fraction", "keep_fraction in (0, 1]")
        return None


def respiratory_surrogate(trace: PhysioTrace, spoke_timestamps) -> np.ndarray:
    return np.interp(spoke_timestamps, trace.bellows_times, trace.bellows_samples)


def gate_respiratory(trace: PhysioTrace, spoke_timestamps, keep_fraction: float = 0.5) -> GatingMask:
    """Keep spokes whose bellows surrogate is at or below the keep_fraction quantile."""
    if not 0 < keep_fraction <= 1:
        raise ValueError("keep_fraction must lie in (0, 1]")
    ts = np.asarray(spoke_timestamps, dtype=np.float64)
    if ts.size == 0:
        raise ValueError("no spokes to gate")
    surrogate = respiratory_surrogate(trace, ts)
    thr = float(np.quantile(surrogate, keep_fraction))
    return GatingMask(surrogate <= thr, thr, keep_fraction)


def select_spokes(y: RadialKSpace, traj: Trajectory, bins, mask=None,
                  undersample_R: float = 1.0) -> BinnedKSpace:
    """Gather gated spokes per phase, keeping a temporal prefix when undersampling."""
    if traj.n_spokes != y.n_spokes:
        raise ValueError("trajectory and k-space spoke counts differ")
    keep = np.ones(y.n_spokes, bool) if mask is None else np.asarray(
        getattr(mask, "keep", mask), dtype=bool)
    if keep.shape != (y.n_spokes,):
        raise ValueError("gating mask does not cover the spoke index space")
    if undersample_R < 1:
        raise ValueError("undersample_R must be >= 1")
    sets, empty = [], []
    for t, idx in enumerate(bins):
        idx = np.sort(np.asarray(idx, dtype=np.int64))
        idx = idx[keep[idx]]
        if undersample_R > 1:
            idx = idx[: int(np.floor(idx.size / undersample_R))]
        if idx.size == 0:
            empty.append(t)
        sets.append(idx)
    if empty:
        raise EmptyPhaseError(empty)
    return BinnedKSpace(tuple(sets),
                        tuple(y.data[:, i, :] for i in sets),
                        tuple(traj.subset(i) for i in sets))


def _radial_geometry(traj: Trajectory):
    c = traj.coords
    kr = np.hypot(c[..., 0], c[..., 1])
    ref = c[np.arange(c.shape[0]), np.argmax(kr, axis=1)]
    sign = np.sign(np.einsum("srk,sk->sr", c, ref))
    kr_signed = kr * np.where(sign == 0, 1.0, sign)
    cross = c[..., 0] * ref[:, None, 1] - c[..., 1] * ref[:, None, 0]
    if np.max(np.abs(cross), initial=0.0) > 1e-9:
        raise ValueError("trajectory is not radial: spoke samples are not collinear through 0")
    return kr_signed


def compute_dcf(traj: Trajectory) -> DCFWeights:
    """Analytic ramp |k_r| * dk_r * pi / N_sp, normalized so sum(w) approximates disc area."""
    if traj.n_spokes == 0:
        return DCFWeights(np.zeros((0, traj.n_readout)))
    kr = _radial_geometry(traj)
    if traj.n_readout < 2:
        raise ValueError("need at least two readout samples per spoke")
    steps = np.diff(kr, axis=1)
    dk = float(np.median(np.abs(steps)))
    if np.max(np.abs(np.abs(steps) - dk)) > 1e-9 * max(dk, 1.0):
        raise ValueError("trajectory is not radial: readout samples are not uniform")
    n_sp = traj.n_spokes
    w = np.abs(kr) * dk * np.pi / n_sp
    center = np.abs(kr) < 1e-6 * dk
    w[center] = np.pi * (dk / 2) ** 2 / n_sp
    return DCFWeights(w)


def center_sample_index(traj: Trajectory) -> np.ndarray:
    kr = np.hypot(traj.coords[..., 0], traj.coords[..., 1])
    return np.argmin(kr, axis=1)


def phase_correction_factors(data, traj: Trajectory):
    """Per-spoke unit factors exp(-i arg c) and a flag for degenerate spokes.

    `data` is [N_RO, N_sp, N_c]; c is the spoke's center sample projected on
    the coil-mean center sample.
    """
    ci = center_sample_index(traj)
    centers = data[ci, np.arange(data.shape[1]), :]
    ref = centers.mean(axis=0)
    c = centers @ ref.conj()
    flagged = np.abs(c) == 0
    factors = np.ones(c.shape, dtype=np.complex128)
    factors[~flagged] = np.exp(-1j * np.angle(c[~flagged]))
    return factors, flagged


def phase_correct_spokes(b: BinnedKSpace) -> BinnedKSpace:
    out = []
    for t, (d, tr) in enumerate(zip(b.per_phase_data, b.per_phase_traj)):
        if d.shape[1] == 0:
            out.append(d)
            continue
        f, flagged = phase_correction_factors(d, tr)
        if np.any(flagged):
            log.warning("phase %d: %d spoke(s) with zero center sample left uncorrected",
                        t, int(flagged.sum()))
        out.append(d * f[None, :, None])
    return b.with_data(out)
