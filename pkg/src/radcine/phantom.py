"""Dynamic multi-coil radial phantom with a beating heart and a bright peripheral source.

Sampling uses the exact non-uniform DFT of the rendered frame at every spoke,
so the simulated data carry no gridding error.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .nufft import pixel_offsets
from .types import CineImage, PhysioTrace, RadialKSpace, SensitivityMaps, Trajectory

BELLOWS_RATE = 50.0
GOLDEN_ANGLE_DEG = 180.0 * 2.0 / (1.0 + np.sqrt(5.0))


@dataclass(frozen=True)
class PhantomConfig:
    """Geometry in pixels, offsets relative to the image center as (dy, dx)."""

    matrix_size: int = 64
    n_coils: int = 8
    n_readout: Optional[int] = None
    heart_center: tuple = (2.0, -3.0)
    heart_radius_range: tuple = (5.0, 9.0)
    heart_intensity: float = 2.0
    peripheral_center: tuple = (-16.0, 22.0)
    peripheral_radius: float = 3.0
    peripheral_intensity: float = 10.0
    background_axes: tuple = (19.0, 23.0)
    rr_mean: float = 1.0
    rr_jitter: float = 0.05
    resp_period: float = 4.0
    resp_depth: float = 3.0
    noise_sigma: float = 0.05
    coil_noise_corr: float = 0.0
    tr: float = 0.003
    duration: float = 12.0
    angle_increment_deg: float = GOLDEN_ANGLE_DEG

    @property
    def readout(self) -> int:
        return self.n_readout or self.matrix_size

    @property
    def n_spokes(self) -> int:
        return int(np.floor(self.duration / self.tr + 1e-9))

    def validate(self):
        r_min, r_max = self.heart_radius_range
        if not r_min < r_max < self.matrix_size / 2:
            raise ValueError("heart radius range must satisfy r_min < r_max < N/2")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be >= 0")
        if self.tr <= 0:
            raise ValueError("tr must be > 0")
        if not 0 <= self.coil_noise_corr < 1:
            raise ValueError("coil_noise_corr must lie in [0, 1)")
        return self

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "PhantomConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        kw = {k: tuple(v) if isinstance(v, list) else v for k, v in d.items() if k in names}
        return cls(**kw)


def heart_radius(cardiac_phase, cfg: PhantomConfig):
    r_min, r_max = cfg.heart_radius_range
    return r_max - (r_max - r_min) * (1.0 - np.cos(2 * np.pi * cardiac_phase)) / 2.0


def _coverage(signed_dist):
    # one-pixel linear edge ramp keeps sub-pixel motion continuous
    return np.clip(0.5 - signed_dist, 0.0, 1.0)


def make_phantom_frame(cardiac_phase: float, resp_displacement: float,
                       cfg: PhantomConfig) -> np.ndarray:
    N = cfg.matrix_size
    p = pixel_offsets(N).astype(np.float64)
    y, x = np.meshgrid(p - resp_displacement, p, indexing="ij")

    ay, ax = cfg.background_axes
    rho = np.sqrt((y / ay) ** 2 + (x / ax) ** 2)
    img = _coverage((rho - 1.0) * min(ay, ax))

    hy, hx = cfg.heart_center
    r = heart_radius(cardiac_phase, cfg)
    heart = _coverage(np.hypot(y - hy, x - hx) - r)
    img = img * (1 - heart) + cfg.heart_intensity * heart

    py_, px_ = cfg.peripheral_center
    src = _coverage(np.hypot(y - py_, x - px_) - cfg.peripheral_radius)
    img = img * (1 - src) + cfg.peripheral_intensity * src
    return img


def coil_profiles(n_coils: int, N: int) -> np.ndarray:
    """Un-normalized Gaussian coil profiles with linear phase ramps [n_coils, N, N]."""
    p = pixel_offsets(N).astype(np.float64)
    y, x = np.meshgrid(p, p, indexing="ij")
    ring = 0.6 * N / 2
    width = 0.2 * N
    out = np.empty((n_coils, N, N), dtype=np.complex128)
    for c in range(n_coils):
        ang = 2 * np.pi * c / n_coils
        cy, cx = ring * np.sin(ang), ring * np.cos(ang)
        mag = np.exp(-((y - cy) ** 2 + (x - cx) ** 2) / (2 * width ** 2))
        slope = 0.5 * np.pi / N
        phase = slope * (np.cos(ang) * y - np.sin(ang) * x) + ang
        out[c] = mag * np.exp(1j * phase)
    return out


def simulate_coils(n_coils: int, N: int) -> SensitivityMaps:
    if n_coils < 1:
        raise ValueError("n_coils must be >= 1")
    return SensitivityMaps.normalized(coil_profiles(n_coils, N))


def _rr_intervals(cfg: PhantomConfig, seed: int, count: int) -> np.ndarray:
    u = np.random.default_rng([seed, 0x5EED]).uniform(-1.0, 1.0, count)
    return cfg.rr_mean + cfg.rr_jitter * u


def _trigger_times(cfg: PhantomConfig, seed: int) -> np.ndarray:
    """Trigger times running one beat past the end of the acquisition."""
    count = int(np.ceil(cfg.duration / max(cfg.rr_mean - cfg.rr_jitter, 1e-3))) + 2
    rr = _rr_intervals(cfg, seed, count)
    t = np.concatenate([[0.0], np.cumsum(rr)])
    last = np.searchsorted(t, cfg.duration, side="left")
    return t[: last + 1]


def synth_physio(cfg: PhantomConfig, seed: int = 0) -> PhysioTrace:
    if cfg.duration <= cfg.rr_mean:
        raise ValueError("duration must exceed rr_mean")
    trig = _trigger_times(cfg, seed)
    trig = trig[trig < cfg.duration]
    n = int(np.floor(cfg.duration * BELLOWS_RATE)) + 1
    tb = np.arange(n) / BELLOWS_RATE
    bellows = np.sin(2 * np.pi * tb / cfg.resp_period)
    return PhysioTrace(trig, bellows, BELLOWS_RATE, cfg.duration)


def cardiac_phase_at(triggers, times, rr_fallback: float) -> np.ndarray:
    """Fractional position within the enclosing RR interval (extrapolated past the last trigger)."""
    trig = np.asarray(triggers, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    j = np.searchsorted(trig, times, side="right") - 1
    j = np.clip(j, 0, trig.size - 1)
    start = trig[j]
    nxt = np.where(j + 1 < trig.size, trig[np.minimum(j + 1, trig.size - 1)],
                   start + rr_fallback)
    return np.mod((times - start) / (nxt - start), 1.0)


def bellows_at(trace: PhysioTrace, times) -> np.ndarray:
    return np.interp(times, trace.bellows_times, trace.bellows_samples)


def resp_displacement(trace: PhysioTrace, times, cfg: PhantomConfig) -> np.ndarray:
    """Vertical shift in pixels; zero at end-expiration (bellows minimum)."""
    return cfg.resp_depth * (1.0 + bellows_at(trace, times)) / 2.0


def coil_noise_factor(cfg: PhantomConfig) -> np.ndarray:
    """Lower Cholesky factor L with noise covariance 2*sigma^2 * L L^H per sample."""
    n = cfg.n_coils
    corr = (1 - cfg.coil_noise_corr) * np.eye(n) + cfg.coil_noise_corr * np.ones((n, n))
    return np.linalg.cholesky(corr)


def _noise(cfg: PhantomConfig, rng, shape) -> np.ndarray:
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return cfg.noise_sigma * z @ coil_noise_factor(cfg).T


def sample_noise(cfg: PhantomConfig, n_samples: int, seed: int = 0) -> np.ndarray:
    """Noise-only calibration samples [n_samples, n_coils] with the acquisition's statistics."""
    rng = np.random.default_rng([seed, 0x0015E])
    return _noise(cfg, rng, (n_samples, cfg.n_coils))


def ground_truth(cfg: PhantomConfig, n_phases: int) -> CineImage:
    frames = [make_phantom_frame((t + 0.5) / n_phases, 0.0, cfg) for t in range(n_phases)]
    return CineImage(np.stack(frames))


def sample_radial(cfg: PhantomConfig, maps: SensitivityMaps, traj: Trajectory,
                  trace: PhysioTrace, seed: int = 0, n_phases: int = 20,
                  frame_fn: Optional[Callable[[float, float], np.ndarray]] = None):
    """Simulate the acquisition spoke by spoke.

    Returns (RadialKSpace, ground-truth CineImage). `frame_fn(phase, disp)`
    overrides the analytic phantom.
    """
    N = cfg.matrix_size
    if maps.maps.shape != (cfg.n_coils, N, N):
        raise ValueError(f"maps shape {maps.maps.shape} does not match config "
                         f"({cfg.n_coils}, {N}, {N})")
    if traj.n_spokes != cfg.n_spokes:
        raise ValueError(f"trajectory has {traj.n_spokes} spokes, config expects {cfg.n_spokes}")
    frame_fn = frame_fn or (lambda ph, d: make_phantom_frame(ph, d, cfg))
    times = np.arange(traj.n_spokes) * cfg.tr
    phases = cardiac_phase_at(trace.cardiac_triggers, times, cfg.rr_mean)
    disp = resp_displacement(trace, times, cfg)

    p = pixel_offsets(N).astype(np.float64)
    n_ro = traj.n_readout
    data = np.empty((n_ro, traj.n_spokes, cfg.n_coils), dtype=np.complex128)
    for s in range(traj.n_spokes):
        coil_imgs = maps.maps * frame_fn(phases[s], disp[s])
        ky, kx = traj.coords[s, :, 0], traj.coords[s, :, 1]
        Ey = np.exp(-2j * np.pi * np.outer(ky, p))
        Ex = np.exp(-2j * np.pi * np.outer(kx, p))
        rows = Ey @ coil_imgs
        data[:, s, :] = np.einsum("cjx,jx->jc", rows, Ex)
        if cfg.noise_sigma > 0:
            data[:, s, :] += _noise(cfg, np.random.default_rng([seed, s]), (n_ro, cfg.n_coils))
    return RadialKSpace(data, times), ground_truth(cfg, n_phases)
