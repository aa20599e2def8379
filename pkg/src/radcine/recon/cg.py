"""Conjugate-gradient data consistency: argmin ||A x - y||^2 + lam ||x - z||^2."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .sense import SenseOperator, sense_adjoint, sense_forward, sense_normal


@dataclass
class CGInfo:
    iterations: int
    rel_residual: float
    objective: list = field(default_factory=list)
    fit_start: float = float("nan")
    fit_end: float = float("nan")


def dc_objective(op: SenseOperator, t: int, y, z, lam: float, x) -> float:
    r = sense_forward(op, x, t) - y
    return float(np.vdot(r, r).real + lam * np.vdot(x - z, x - z).real)


def _fit(x, AhAx, aty, y_sq) -> float:
    """||A x - y|| from A^H A x, A^H y and ||y||^2 without another forward pass."""
    v = np.vdot(x, AhAx).real - 2 * np.vdot(x, aty).real + y_sq
    return float(np.sqrt(max(v, 0.0)))


def cg_solve_dc(op: SenseOperator, y, z, lam: float, n_cg: int, t: int = 0,
                track_objective: bool = False, aty=None):
    """Run `n_cg` CG iterations on (A^H A + lam I) x = A^H y + lam z, starting at z.

    `y` is the phase's (weighted) data [N_c, M_t]; `aty` optionally supplies
    A^H y when the caller already has it. CGInfo.fit_start and fit_end hold
    ||A z - y|| and ||A x - y||. Returns (x, CGInfo).
    """
    if lam <= 0:
        raise ValueError("lam must be > 0")
    z = np.asarray(z, dtype=np.complex128)
    x = z.copy()
    aty = sense_adjoint(op, y, t) if aty is None else np.asarray(aty, dtype=np.complex128)
    y_sq = float(np.vdot(y, y).real)
    rhs = aty + lam * z
    AhAz = sense_normal(op, x, t)
    r = rhs - (AhAz + lam * x)
    rhs_norm = np.linalg.norm(rhs)
    p = r.copy()
    rr = np.vdot(r, r).real
    info = CGInfo(0, 0.0, fit_start=_fit(z, AhAz, aty, y_sq))
    if track_objective:
        info.objective.append(dc_objective(op, t, y, z, lam, x))
    for k in range(n_cg):
        if rr == 0:
            break
        Ap = sense_normal(op, p, t) + lam * p
        pAp = np.vdot(p, Ap).real
        if not np.isfinite(pAp) or pAp <= 0:
            if not np.isfinite(pAp):
                raise FloatingPointError(f"CG phase {t}: non-finite curvature at iteration {k}")
            break
        a = rr / pAp
        x = x + a * p
        r = r - a * Ap
        rr_new = np.vdot(r, r).real
        if not np.isfinite(rr_new):
            raise FloatingPointError(f"CG phase {t}: NaN residual at iteration {k}")
        p = r + (rr_new / rr) * p
        rr = rr_new
        info.iterations = k + 1
        if track_objective:
            info.objective.append(dc_objective(op, t, y, z, lam, x))
    info.rel_residual = float(np.sqrt(rr) / rhs_norm) if rhs_norm > 0 else 0.0
    # the CG residual r = A^H y + lam (z - x) - A^H A x gives A^H A x for free
    info.fit_end = _fit(x, aty + lam * (z - x) - r, aty, y_sq)
    return x, info


def cg_solve_cine(op: SenseOperator, ys, z, lam: float, n_cg: int):
    """Independent per-phase solves over a [T, N, N] stack."""
    out = np.empty_like(np.asarray(z, dtype=np.complex128))
    infos = []
    for t in range(op.n_phases):
        out[t], info = cg_solve_dc(op, ys[t], z[t], lam, n_cg, t)
        infos.append(info)
    return out, infos
