"""Image quality metrics: PSNR, SSIM, streak-artifact ratio, and x-t profiles.

Complex inputs are reduced to magnitude before any metric is computed.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

SSIM_SIGMA = 1.5
SSIM_TRUNCATE = 3.5  # radius 5 -> 11x11 window at sigma 1.5
SSIM_K1, SSIM_K2 = 0.01, 0.03


def _mag(a):
    a = np.asarray(a)
    return np.abs(a) if np.iscomplexobj(a) else a.astype(np.float64)


def _same_shape(ref, rec):
    if ref.shape != rec.shape:
        raise ValueError(f"shape mismatch: {ref.shape} vs {rec.shape}")


def psnr(ref, rec) -> float:
    """20 log10(max(ref) / sqrt(MSE)); returns math.inf for identical inputs."""
    ref, rec = _mag(ref), _mag(rec)
    _same_shape(ref, rec)
    peak = float(ref.max())
    if not np.any(ref):
        raise ValueError("reference image is all zero")
    mse = float(np.mean((ref - rec) ** 2))
    if mse == 0:
        return math.inf
    return 20.0 * math.log10(peak / math.sqrt(mse))


def ssim(ref, rec, data_range: float = 1.0, normalize: bool = True) -> float:
    """Mean local SSIM with an 11-wide Gaussian window (sigma 1.5).

    Both images are divided by max(ref) first when `normalize` is set. Works
    on 2-D frames or n-D stacks (the window then spans every axis). The map
    is averaged over the region where the window fits without padding.
    """
    ref, rec = _mag(ref), _mag(rec)
    _same_shape(ref, rec)
    if normalize:
        peak = ref.max()
        if peak > 0:
            ref, rec = ref / peak, rec / peak
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    def blur(a):
        return ndimage.gaussian_filter(a, SSIM_SIGMA, truncate=SSIM_TRUNCATE, mode="reflect")

    mu_x, mu_y = blur(ref), blur(rec)
    sxx = blur(ref * ref) - mu_x ** 2
    syy = blur(rec * rec) - mu_y ** 2
    sxy = blur(ref * rec) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (sxx + syy + c2)
    smap = num / den
    pad = int(SSIM_TRUNCATE * SSIM_SIGMA + 0.5)
    crop = tuple(slice(pad, -pad) if n > 2 * pad else slice(None) for n in smap.shape)
    return float(smap[crop].mean())


def hann_lowpass(image, lowpass_frac: float = 0.25) -> np.ndarray:
    """Low-resolution reference: radially symmetric Hann window over the central k-space."""
    if not 0 < lowpass_frac <= 1:
        raise ValueError("lowpass_frac must lie in (0, 1]")
    img = np.asarray(image)
    fy = np.fft.fftfreq(img.shape[-2])
    fx = np.fft.fftfreq(img.shape[-1])
    r = np.hypot(fy[:, None], fx[None, :])
    cutoff = 0.5 * lowpass_frac
    win = np.where(r <= cutoff, 0.5 * (1 + np.cos(np.pi * r / cutoff)), 0.0)
    out = np.fft.ifft2(np.fft.fft2(img) * win)
    return out.real if not np.iscomplexobj(img) else out


def sar(image, lowpass_frac: float = 0.25, support: float = 0.05) -> float:
    """Streak-artifact ratio mean|I - I_ref| / mean(I_ref) over the reference support."""
    img = _mag(image)
    ref = hann_lowpass(img, lowpass_frac)
    mask = ref > support * ref.max()
    if not mask.any() or ref[mask].mean() == 0:
        raise ValueError("low-pass reference has zero mean")
    return float(np.mean(np.abs(img[mask] - ref[mask])) / np.mean(ref[mask]))


def xt_profile(cine, axis: str, index: int) -> np.ndarray:
    """Magnitude along a fixed horizontal (row) or vertical (column) line, stacked over time."""
    frames = np.abs(np.asarray(getattr(cine, "frames", cine)))
    if axis not in ("horizontal", "vertical"):
        raise ValueError("axis must be 'horizontal' or 'vertical'")
    n = frames.shape[1] if axis == "horizontal" else frames.shape[2]
    if not 0 <= index < n:
        raise IndexError(f"line index {index} out of range [0, {n})")
    out = frames[:, index, :] if axis == "horizontal" else frames[:, :, index]
    return np.ascontiguousarray(out)


def _mean_std(v):
    v = np.asarray(v, dtype=np.float64)
    finite = v[np.isfinite(v)]
    if finite.size < v.size:
        return math.inf, 0.0
    return float(finite.mean()), float(finite.std())


@dataclass
class MetricReport:
    psnr_db: list
    ssim: list
    sar: list
    psnr_stack_db: float
    ssim_stack: float
    params: dict = field(default_factory=dict)

    @property
    def psnr_mean(self):
        return _mean_std(self.psnr_db)[0]

    @property
    def ssim_mean(self):
        return _mean_std(self.ssim)[0]

    @property
    def sar_mean(self):
        return _mean_std(self.sar)[0]

    def summary(self) -> dict:
        pm, ps = _mean_std(self.psnr_db)
        sm, ss = _mean_std(self.ssim)
        rm, rs = _mean_std(self.sar)
        return {"psnr_mean": pm, "psnr_std": ps, "ssim_mean": sm, "ssim_std": ss,
                "sar_mean": rm, "sar_std": rs, "psnr_stack": self.psnr_stack_db,
                "ssim_stack": self.ssim_stack}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["summary"] = self.summary()
        return d

    def csv_rows(self):
        yield ["frame", "psnr_db", "ssim", "sar"]
        for t, (p, s, r) in enumerate(zip(self.psnr_db, self.ssim, self.sar)):
            yield [t, p, s, r]

    def validate(self):
        from .types import Violation
        if any(not -1 <= s <= 1 for s in self.ssim):
            return Violation("MetricReport.ssim", "ssim in [-1, 1]")
        if any(r < 0 for r in self.sar):
            return Violation("MetricReport.sar", "sar >= 0")
        return None


def evaluate(ref_cine, rec_cine, lowpass_frac: float = 0.25) -> MetricReport:
    """Per-frame PSNR/SSIM/SAR of |rec| against |ref| plus whole-stack PSNR and SSIM."""
    ref = _mag(getattr(ref_cine, "frames", ref_cine))
    rec = _mag(getattr(rec_cine, "frames", rec_cine))
    _same_shape(ref, rec)
    return MetricReport(
        psnr_db=[psnr(a, b) for a, b in zip(ref, rec)],
        ssim=[ssim(a, b) for a, b in zip(ref, rec)],
        sar=[sar(b, lowpass_frac) for b in rec],
        psnr_stack_db=psnr(ref, rec),
        ssim_stack=ssim(ref, rec),
        params={"ssim_window": 11, "ssim_sigma": SSIM_SIGMA, "ssim_k1": SSIM_K1,
                "ssim_k2": SSIM_K2, "ssim_data_range": 1.0, "sar_lowpass_frac": lowpass_frac,
                "sar_support": 0.05, "magnitude": True},
    )
