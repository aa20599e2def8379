"""Coil compression: streak-optimized virtual coils, SVD compression and coil removal.

Streak-optimized compression works in the sinogram (projection) domain. Coil
vectors from a central band of projection positions form the signal
covariance A, vectors from the peripheral band form the interference
covariance B, and the virtual coils are the leading generalized eigenvectors
of (A, B), i.e. the maximizers of w^H A w / w^H B w.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from .types import RadialKSpace


@dataclass(frozen=True, eq=False)
class RegionMasks:
    signal_mask: np.ndarray
    interference_mask: np.ndarray

    def validate(self):
        from .types import Violation
        if np.any(self.signal_mask & self.interference_mask):
            return Violation("RegionMasks", "masks disjoint")
        if not self.signal_mask.any() or not self.interference_mask.any():
            return Violation("RegionMasks", "both masks non-empty")
        return None


@dataclass(frozen=True, eq=False)
class VirtualCoilBasis:
    """Combination weights [N_c, N_v]; columns are B-orthonormal."""

    weights: np.ndarray
    sir_values: np.ndarray

    @property
    def n_virtual(self) -> int:
        return self.weights.shape[1]


def to_sinogram(y) -> np.ndarray:
    """Centered inverse FFT along readout: [N_RO, N_sp, N_c] -> [N_sp, N_RO, N_c]."""
    data = y.data if isinstance(y, RadialKSpace) else np.asarray(y)
    spokes = np.moveaxis(data, 0, 1)
    return np.fft.fftshift(np.fft.ifft(np.fft.ifftshift(spokes, axes=1), axis=1), axes=1)


def from_sinogram(sino) -> np.ndarray:
    """Inverse of `to_sinogram`, returning [N_RO, N_sp, N_c]."""
    k = np.fft.fftshift(np.fft.fft(np.fft.ifftshift(sino, axes=1), axis=1), axes=1)
    return np.moveaxis(k, 1, 0)


def projection_positions(n_readout: int) -> np.ndarray:
    """Sinogram column positions as a fraction of the field of view."""
    return (np.arange(n_readout) - n_readout // 2) / n_readout


def build_region_masks(n_spokes: int, n_readout: int, rho_s: float = 0.5,
                       rho_i: float = 0.75) -> RegionMasks:
    if not 0 < rho_s < rho_i <= 1:
        raise ValueError("need 0 < rho_s < rho_i <= 1")
    r = np.abs(projection_positions(n_readout))
    eps = 1e-12
    sig = r <= rho_s / 2 + eps
    itf = r >= rho_i / 2 - eps
    if not sig.any() or not itf.any():
        raise ValueError("region mask is empty for this readout length")
    return RegionMasks(np.broadcast_to(sig, (n_spokes, n_readout)).copy(),
                       np.broadcast_to(itf, (n_spokes, n_readout)).copy())


def compute_covariances(sino, masks: RegionMasks):
    """Signal and interference coil covariances averaged over the masked samples."""
    sino = np.asarray(sino)
    if not np.all(np.isfinite(sino)):
        raise ValueError("sinogram contains non-finite values")
    if not masks.signal_mask.any() or not masks.interference_mask.any():
        raise ValueError("region masks must be non-empty")
    s = sino[masks.signal_mask]
    i = sino[masks.interference_mask]
    A = s.T @ s.conj() / s.shape[0]
    B = i.T @ i.conj() / i.shape[0]
    return (A + A.conj().T) / 2, (B + B.conj().T) / 2


def pooled_covariances(sinos, masks_list):
    """Covariances pooled over several sinograms (e.g. all cardiac phases of a slice)."""
    nc = sinos[0].shape[-1]
    A = np.zeros((nc, nc), complex)
    B = np.zeros((nc, nc), complex)
    ns = ni = 0
    for sino, m in zip(sinos, masks_list):
        s = sino[m.signal_mask]
        i = sino[m.interference_mask]
        A += s.T @ s.conj()
        B += i.T @ i.conj()
        ns += s.shape[0]
        ni += i.shape[0]
    A, B = A / ns, B / ni
    return (A + A.conj().T) / 2, (B + B.conj().T) / 2


def regularized_interference(B, eps_rel: float = 1e-6) -> np.ndarray:
    nc = B.shape[0]
    return B + eps_rel * np.real(np.trace(B)) / nc * np.eye(nc)


def sir(w, A, B) -> float:
    w = np.asarray(w)
    return float(np.real(np.vdot(w, A @ w)) / np.real(np.vdot(w, B @ w)))


def solve_sir(A, B, n_virtual: int, eps_rel: float = 1e-6) -> VirtualCoilBasis:
    """Top generalized eigenvectors of A w = lambda B~ w via Cholesky whitening of B~."""
    A = np.asarray(A, dtype=np.complex128)
    nc = A.shape[0]
    if n_virtual > nc:
        raise ValueError(f"n_virtual={n_virtual} exceeds {nc} coils")
    Bt = regularized_interference(np.asarray(B, dtype=np.complex128), eps_rel)
    try:
        L = np.linalg.cholesky(Bt)
    except np.linalg.LinAlgError:
        raise ValueError("regularized interference covariance is not positive definite") from None
    Li_A = scipy.linalg.solve_triangular(L, A, lower=True)
    C = scipy.linalg.solve_triangular(L, Li_A.conj().T, lower=True).conj().T
    C = (C + C.conj().T) / 2
    vals, vecs = np.linalg.eigh(C)
    order = np.argsort(vals)[::-1][:n_virtual]
    W = scipy.linalg.solve_triangular(L.conj().T, vecs[:, order], lower=False)
    # fix the arbitrary eigenvector phase: largest entry real positive
    piv = W[np.argmax(np.abs(W), axis=0), np.arange(W.shape[1])]
    W = W * np.exp(-1j * np.angle(piv))[None, :]
    return VirtualCoilBasis(W, vals[order])


def orthonormal_span(W) -> np.ndarray:
    """Orthonormal basis of span(W) with the column ordering kept (thin QR)."""
    Q, R = np.linalg.qr(W)
    d = np.diag(R)
    return Q * np.where(d == 0, 1, d / np.abs(np.where(d == 0, 1, d))).conj()[None, :]


def apply_compression(y, W):
    """Replace each coil vector v by W^H v."""
    W = np.asarray(W)
    data = y.data if isinstance(y, RadialKSpace) else np.asarray(y)
    if data.shape[-1] != W.shape[0]:
        raise ValueError(f"basis expects {W.shape[0]} coils, data has {data.shape[-1]}")
    out = data @ W.conj()
    if isinstance(y, RadialKSpace):
        return RadialKSpace(out, y.spoke_timestamps)
    return out


def svd_basis(samples, n_virtual: int):
    """Top left singular vectors of the [N_c, samples] data matrix and retained energy."""
    X = np.asarray(samples).reshape(-1, np.asarray(samples).shape[-1]).T
    nc = X.shape[0]
    if n_virtual > nc:
        raise ValueError(f"n_virtual={n_virtual} exceeds {nc} coils")
    U, s, _ = np.linalg.svd(X, full_matrices=False)
    energy = s ** 2
    total = energy.sum()
    retained = float(energy[:n_virtual].sum() / total) if total > 0 else 1.0
    U = U[:, :n_virtual]
    piv = U[np.argmax(np.abs(U), axis=0), np.arange(n_virtual)]
    U = U * np.exp(-1j * np.angle(piv))[None, :]
    return U, retained


def svd_compress(y, n_virtual: int):
    """Returns (compressed data, basis [N_c, N_v], retained energy fraction)."""
    data = y.data if isinstance(y, RadialKSpace) else np.asarray(y)
    U, retained = svd_basis(data, n_virtual)
    return apply_compression(y, U), U, retained


def coil_removal(per_coil_images, sar_threshold: Optional[float] = None,
                 lowpass_frac: float = 0.25, rel_threshold: float = 1.5):
    """Indices of coils kept after dropping the most streak-contaminated ones.

    Each coil image is scored with the streak-artifact ratio against its own
    low-pass reference. A [N_c, T, N, N] input scores every frame and
    averages over T, which suits undersampled per-phase images. Without an
    explicit threshold, coils above `rel_threshold` x the median score are
    dropped. At least max(1, N_c // 2)
    coils are always kept, relaxing the threshold to the median if needed.
    Returns (kept indices, per-coil scores).
    """
    from .metrics import sar

    imgs = np.abs(np.asarray(per_coil_images))
    nc = imgs.shape[0]
    if imgs.ndim == 3:
        imgs = imgs[:, None]
    scores = np.array([np.mean([sar(f, lowpass_frac) for f in im]) for im in imgs])
    med = float(np.median(scores))
    thr = rel_threshold * med if sar_threshold is None else sar_threshold
    kept = np.flatnonzero(scores <= thr)
    min_keep = max(1, nc // 2)
    if kept.size < min_keep:
        kept = np.flatnonzero(scores <= max(thr, med))
        if kept.size < min_keep:
            kept = np.sort(np.argsort(scores, kind="stable")[:min_keep])
    return kept, scores
