"""Gridding and unrolled (proximal + CG data consistency) reconstruction."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ..types import BinnedKSpace, CineImage, SensitivityMaps
from .cg import cg_solve_dc
from .resnet import ProxWeights, read_weights, resnet_prox_infer
from .sense import SenseOperator, build_sense_operator, cine_adjoint, weighted_data
from .tv import temporal_tv_prox

log = logging.getLogger(__name__)

PROX_KINDS = ("identity", "temporal_tv", "resnet")


@dataclass(frozen=True)
class ProxSpec:
    """Proximal block and data-consistency settings.

    `tau` is the temporal-TV threshold relative to max|x0|; `lam` weights
    ||x - z||^2 against the DCF-weighted data term.
    """

    kind: str = "temporal_tv"
    tau: float = 0.1
    K: int = 6
    lam: float = 0.5
    n_cg: int = 10
    weight_file: Optional[str] = None
    n_inner: int = 5

    def validate(self):
        from ..types import Violation
        if self.kind not in PROX_KINDS:
            return Violation("ProxSpec.kind", f"kind in {PROX_KINDS}")
        if self.tau < 0:
            return Violation("ProxSpec.tau", "tau >= 0")
        if not self.lam > 0:
            return Violation("ProxSpec.lam", "lam > 0")
        if self.K < 1:
            return Violation("ProxSpec.K", "K >= 1")
        if self.n_cg < 1:
            return Violation("ProxSpec.n_cg", "n_cg >= 1")
        if self.kind == "resnet" and not self.weight_file:
            return Violation("ProxSpec.weight_file", "resnet prox needs a weight file")
        return None


@dataclass
class UnrollDiagnostics:
    dc_residual: float
    prox_residual: float
    change_norm: float
    cg_rel_residual: list = field(default_factory=list)


def gridding_recon(b: BinnedKSpace, maps: SensitivityMaps,
                   op: Optional[SenseOperator] = None) -> CineImage:
    """Per phase DCF-weighted adjoint of the measured data."""
    op = op or build_sense_operator(b, maps)
    return CineImage(cine_adjoint(op, weighted_data(op, b)))


def make_prox(spec: ProxSpec, scale: float, weights: Optional[ProxWeights] = None):
    """Callable (x, k_over_K) -> z for the configured proximal block."""
    if spec.kind == "identity":
        return lambda x, k: np.array(x, copy=True)
    if spec.kind == "temporal_tv":
        tau = spec.tau * scale
        return lambda x, k: temporal_tv_prox(x, tau, spec.n_inner)
    w = weights if weights is not None else read_weights(spec.weight_file)
    return lambda x, k: resnet_prox_infer(x, w, k)


def unrolled_reconstruct(b: BinnedKSpace, maps: SensitivityMaps, spec: ProxSpec = ProxSpec(),
                         op: Optional[SenseOperator] = None, x0=None,
                         weights: Optional[ProxWeights] = None):
    """x0 = gridding; for k < K: z_k = prox(x_k, k/K), x_{k+1} = CG data consistency from z_k.

    Returns (CineImage, list of per-unroll UnrollDiagnostics).
    """
    v = spec.validate()
    if v is not None:
        raise ValueError(str(v))
    op = op or build_sense_operator(b, maps)
    ys = weighted_data(op, b)
    aty = cine_adjoint(op, ys)
    x = aty.copy() if x0 is None else np.array(getattr(x0, "frames", x0), complex)
    prox = make_prox(spec, float(np.abs(x).max()), weights)
    diags = []
    for k in range(spec.K):
        z = prox(x, k / spec.K)
        x_new = np.empty_like(z)
        cg_res, fit_z, fit_x = [], 0.0, 0.0
        for t in range(op.n_phases):
            x_new[t], info = cg_solve_dc(op, ys[t], z[t], spec.lam, spec.n_cg, t, aty=aty[t])
            cg_res.append(info.rel_residual)
            fit_z += info.fit_start ** 2
            fit_x += info.fit_end ** 2
        d = UnrollDiagnostics(float(np.sqrt(fit_x)), float(np.sqrt(fit_z)),
                              float(np.linalg.norm(x_new - x)), cg_res)
        log.debug("unroll %d: dc residual %.4g (prox %.4g), change %.4g",
                  k, d.dc_residual, d.prox_residual, d.change_norm)
        diags.append(d)
        x = x_new
    return CineImage(x), diags
