"""2-D non-uniform FFT by Kaiser-Bessel gridding, plus an exact DFT oracle.

Convention (shared with the phantom simulator): pixel indices p run from
-N//2 to N - N//2 - 1 along each axis and a sample at frequency w (cycles per
pixel, (k_y, k_x) order) is

    s(w) = sum_p x(p) exp(-2j pi w.p)

The adjoint spreads with the conjugate transpose of the very same sparse
interpolation matrix, so forward/adjoint pass the dot test to round-off.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.fft
import scipy.sparse
from scipy.special import i0

TABLE_OVERSAMP = 1024
WORKERS_ENV = "RADCINE_WORKERS"


def kaiser_bessel_beta(width: int, alpha: float) -> float:
    return float(np.pi * np.sqrt((width / alpha) ** 2 * (alpha - 0.5) ** 2 - 0.8))


def kaiser_bessel(d, width, beta):
    """Kaiser-Bessel kernel at grid distance `d` (zero for |d| > width/2)."""
    d = np.asarray(d, dtype=np.float64)
    arg = 1.0 - (2.0 * d / width) ** 2
    out = np.zeros_like(d)
    inside = arg >= 0
    out[inside] = i0(beta * np.sqrt(arg[inside]))
    return out


def kaiser_bessel_ft(nu, width, beta):
    """Continuous Fourier transform of `kaiser_bessel` at frequency `nu` (cycles per grid unit)."""
    z2 = beta ** 2 - (np.pi * width * np.asarray(nu, dtype=np.float64)) ** 2
    z = np.sqrt(np.abs(z2))
    with np.errstate(invalid="ignore", divide="ignore"):
        pos = np.sinh(z) / z
        neg = np.sin(z) / z
    out = np.where(z2 > 0, pos, neg)
    out = np.where(z == 0, 1.0, out)
    return width * out


def pixel_offsets(N: int) -> np.ndarray:
    return np.arange(N) - N // 2


@dataclass(frozen=True, eq=False)
class NufftPlan:
    N: int
    alpha: float
    width: int
    beta: float
    grid_size: int
    apodization: np.ndarray
    coords: np.ndarray
    interp: scipy.sparse.csr_matrix
    spread: scipy.sparse.csr_matrix

    @property
    def n_samples(self) -> int:
        return self.coords.shape[0]


def plan_nufft(N: int, coords, alpha: float = 2.0, width: int = 6) -> NufftPlan:
    """Precompute the interpolation matrix and apodization for `coords` [M, 2]."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    if alpha < 1.25:
        raise ValueError(f"oversampling {alpha} < 1.25")
    if width < 2:
        raise ValueError(f"kernel width {width} < 2")
    if np.any(coords < -0.5) or np.any(coords >= 0.5):
        raise ValueError("coords must lie in [-0.5, 0.5)")
    G = int(round(alpha * N))
    G += G % 2
    beta = kaiser_bessel_beta(width, alpha)

    lut_d = np.arange(int(np.ceil(width / 2 * TABLE_OVERSAMP)) + 2) / TABLE_OVERSAMP
    lut = kaiser_bessel(lut_d, width, beta)

    def weights(u):
        m0 = np.floor(u - width / 2).astype(np.int64) + 1
        m = m0[:, None] + np.arange(width)[None, :]
        d = np.abs(u[:, None] - m)
        w = np.interp(d, lut_d, lut)
        w[d > width / 2] = 0.0
        return np.mod(m, G), w

    M = coords.shape[0]
    my, wy = weights(coords[:, 0] * G)
    mx, wx = weights(coords[:, 1] * G)
    cols = (my[:, :, None] * G + mx[:, None, :]).reshape(M, width * width)
    vals = (wy[:, :, None] * wx[:, None, :]).reshape(M, width * width)
    rows = np.repeat(np.arange(M), width * width)
    interp = scipy.sparse.csr_matrix(
        (vals.ravel(), (rows, cols.ravel())), shape=(M, G * G)
    )
    interp.sum_duplicates()

    p = pixel_offsets(N) / G
    phi = kaiser_bessel_ft(p, width, beta)
    apod = 1.0 / np.outer(phi, phi)
    coords.setflags(write=False)
    apod.setflags(write=False)
    return NufftPlan(N, alpha, width, beta, G, apod, coords, interp,
                     interp.T.tocsr().conj())


def fft_workers() -> int:
    """FFT thread count from the RADCINE_WORKERS environment variable (default 1)."""
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        return 1


def _pad_fft(x, N, G):
    h = N // 2
    lead = x.shape[:-2]
    a = np.zeros(lead + (N, G), dtype=np.complex128)
    a[..., :, : N - h] = x[..., :, h:]
    a[..., :, G - h:] = x[..., :, :h]
    a = scipy.fft.fft(a, axis=-1, workers=fft_workers())
    b = np.zeros(lead + (G, G), dtype=np.complex128)
    b[..., : N - h, :] = a[..., h:, :]
    b[..., G - h:, :] = a[..., :h, :]
    return scipy.fft.fft(b, axis=-2, workers=fft_workers())


def _crop_ifft(b, N, G):
    h = N // 2
    b = scipy.fft.ifft(b, axis=-2, norm="forward", workers=fft_workers())
    a = np.concatenate([b[..., G - h:, :], b[..., : N - h, :]], axis=-2)
    a = scipy.fft.ifft(a, axis=-1, norm="forward", workers=fft_workers())
    return np.concatenate([a[..., G - h:], a[..., : N - h]], axis=-1)


def nufft_forward(plan: NufftPlan, image) -> np.ndarray:
    """Image [..., N, N] -> samples [..., M]."""
    image = np.asarray(image)
    if image.shape[-2:] != (plan.N, plan.N):
        raise ValueError(f"image shape {image.shape} does not match plan N={plan.N}")
    lead = image.shape[:-2]
    if plan.n_samples == 0:
        return np.zeros(lead + (0,), dtype=np.complex128)
    G = plan.grid_size
    grid = _pad_fft(image * plan.apodization, plan.N, G)
    flat = grid.reshape(-1, G * G).T
    out = plan.interp @ flat
    return np.ascontiguousarray(out.T).reshape(lead + (plan.n_samples,))


def nufft_adjoint(plan: NufftPlan, samples, dcf: Optional[np.ndarray] = None) -> np.ndarray:
    """Samples [..., M] -> image [..., N, N]; `dcf` [M] pre-weights the samples."""
    samples = np.asarray(samples, dtype=np.complex128)
    if samples.shape[-1] != plan.n_samples:
        raise ValueError(
            f"{samples.shape[-1]} samples do not match plan with {plan.n_samples}"
        )
    if dcf is not None:
        samples = samples * np.asarray(dcf, dtype=np.float64).reshape(-1)
    lead = samples.shape[:-1]
    G = plan.grid_size
    if plan.n_samples == 0:
        return np.zeros(lead + (plan.N, plan.N), dtype=np.complex128)
    grid = plan.spread @ samples.reshape(-1, plan.n_samples).T
    grid = np.ascontiguousarray(grid.T).reshape(lead + (G, G))
    return _crop_ifft(grid, plan.N, G) * plan.apodization


def direct_dft(data, coords, N: int, adjoint: bool = False, chunk: int = 512) -> np.ndarray:
    """Exact non-uniform DFT (forward: image [N, N] -> [M]; adjoint: [M] -> [N, N])."""
    coords = np.asarray(coords, dtype=np.float64).reshape(-1, 2)
    p = pixel_offsets(N)
    py, px = np.meshgrid(p, p, indexing="ij")
    pos = np.stack([py.ravel(), px.ravel()], axis=1).astype(np.float64)
    data = np.asarray(data, dtype=np.complex128)
    if not adjoint:
        x = data.reshape(N * N)
        out = np.empty(coords.shape[0], dtype=np.complex128)
        for s in range(0, coords.shape[0], chunk):
            E = np.exp(-2j * np.pi * (coords[s:s + chunk] @ pos.T))
            out[s:s + chunk] = E @ x
        return out
    y = data.reshape(-1)
    img = np.zeros(N * N, dtype=np.complex128)
    for s in range(0, coords.shape[0], chunk):
        E = np.exp(-2j * np.pi * (coords[s:s + chunk] @ pos.T))
        img += E.conj().T @ y[s:s + chunk]
    return img.reshape(N, N)


def adjoint_mismatch(forward, adjoint, x, y) -> float:
    """Relative dot-test error |<Ax, y> - <x, A^H y>| / (||Ax|| ||y||)."""
    Ax = forward(x)
    lhs = np.vdot(y, Ax)
    rhs = np.vdot(adjoint(y), x)
    return float(abs(lhs - rhs) / (np.linalg.norm(Ax) * np.linalg.norm(y)))
