"""Multi-coil SENSE operators on per-phase radial trajectories.

With density compensation enabled the operator carries sqrt(w) on its
output, A_t = diag(sqrt(w)) NUFFT S, and measured data are weighted the same
way. A_t^H applied to the weighted data is then the DCF-weighted gridding
reconstruction, and A_t stays an exact adjoint pair.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..nufft import NufftPlan, nufft_adjoint, nufft_forward, plan_nufft
from ..preprocess import compute_dcf
from ..types import BinnedKSpace, SensitivityMaps


@dataclass(frozen=True, eq=False)
class SenseOperator:
    maps: SensitivityMaps
    plans: tuple
    sqrt_dcf: Optional[tuple] = None

    @property
    def n_phases(self) -> int:
        return len(self.plans)

    @property
    def n_coils(self) -> int:
        return self.maps.n_coils

    @property
    def matrix_size(self) -> int:
        return self.maps.matrix_size

    def data_shape(self, t: int) -> tuple:
        return (self.n_coils, self.plans[t].n_samples)

    def validate(self):
        from ..types import Violation
        for t, p in enumerate(self.plans):
            if p.N != self.matrix_size:
                return Violation(f"SenseOperator.plans[{t}]", "maps matrix size = plan N")
            if self.sqrt_dcf is not None and self.sqrt_dcf[t].size != p.n_samples:
                return Violation(f"SenseOperator.dcf[{t}]", "phases consistent")
        return None


def flatten_phase_data(data) -> np.ndarray:
    """[N_RO, n_t, N_c] -> [N_c, n_t * N_RO] in (spoke, readout) sample order."""
    d = np.asarray(data)
    return np.ascontiguousarray(d.transpose(2, 1, 0)).reshape(d.shape[2], -1)


def unflatten_phase_data(flat, n_readout: int) -> np.ndarray:
    nc = flat.shape[0]
    return flat.reshape(nc, -1, n_readout).transpose(2, 1, 0)


def build_sense_operator(b: BinnedKSpace, maps: SensitivityMaps, alpha: float = 2.0,
                         width: int = 6, use_dcf: bool = True) -> SenseOperator:
    N = maps.matrix_size
    plans, sq = [], []
    for tr in b.per_phase_traj:
        plans.append(plan_nufft(N, tr.flat(), alpha, width))
        if use_dcf:
            sq.append(np.sqrt(compute_dcf(tr).weights.reshape(-1)))
    return SenseOperator(maps, tuple(plans), tuple(sq) if use_dcf else None)


def single_phase_operator(maps: SensitivityMaps, coords, dcf=None, alpha: float = 2.0,
                          width: int = 6) -> SenseOperator:
    plan = plan_nufft(maps.matrix_size, coords, alpha, width)
    sq = None if dcf is None else (np.sqrt(np.asarray(dcf, float).reshape(-1)),)
    return SenseOperator(maps, (plan,), sq)


def weighted_data(op: SenseOperator, b: BinnedKSpace) -> list:
    """Per-phase data [N_c, M_t], multiplied by sqrt(DCF) when the operator uses it."""
    out = []
    for t, d in enumerate(b.per_phase_data):
        y = flatten_phase_data(d)
        if op.sqrt_dcf is not None:
            y = y * op.sqrt_dcf[t][None, :]
        out.append(y)
    return out


def sense_forward(op: SenseOperator, x, t: int = 0) -> np.ndarray:
    x = np.asarray(x)
    N = op.matrix_size
    if x.shape != (N, N):
        raise ValueError(f"image shape {x.shape} != ({N}, {N})")
    y = nufft_forward(op.plans[t], op.maps.maps * x[None])
    if op.sqrt_dcf is not None:
        y = y * op.sqrt_dcf[t][None, :]
    return y


def sense_adjoint(op: SenseOperator, y, t: int = 0) -> np.ndarray:
    y = np.asarray(y, dtype=np.complex128)
    if y.shape != op.data_shape(t):
        raise ValueError(f"data shape {y.shape} != {op.data_shape(t)}")
    if op.sqrt_dcf is not None:
        y = y * op.sqrt_dcf[t][None, :]
    imgs = nufft_adjoint(op.plans[t], y)
    return np.sum(op.maps.maps.conj() * imgs, axis=0)


def sense_normal(op: SenseOperator, x, t: int = 0) -> np.ndarray:
    return sense_adjoint(op, sense_forward(op, x, t), t)


def cine_forward(op: SenseOperator, x) -> list:
    return [sense_forward(op, x[t], t) for t in range(op.n_phases)]


def cine_adjoint(op: SenseOperator, ys) -> np.ndarray:
    return np.stack([sense_adjoint(op, ys[t], t) for t in range(op.n_phases)])


def cine_normal(op: SenseOperator, x) -> np.ndarray:
    return np.stack([sense_normal(op, x[t], t) for t in range(op.n_phases)])


def data_residual(op: SenseOperator, x, ys) -> float:
    """||A x - y|| over all phases."""
    return float(np.sqrt(sum(np.linalg.norm(sense_forward(op, x[t], t) - ys[t]) ** 2
                             for t in range(op.n_phases))))


def power_iteration(op: SenseOperator, n_iter: int = 20, seed: int = 0) -> float:
    """Largest eigenvalue of the block-diagonal A^H A over all phases."""
    rng = np.random.default_rng(seed)
    N = op.matrix_size
    x = rng.standard_normal((op.n_phases, N, N)) + 1j * rng.standard_normal((op.n_phases, N, N))
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(n_iter):
        z = cine_normal(op, x)
        lam = float(np.real(np.vdot(x, z)))
        nz = np.linalg.norm(z)
        if nz == 0:
            return 0.0
        x = z / nz
    return lam
