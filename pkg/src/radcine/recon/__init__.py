from .cg import CGInfo, cg_solve_cine, cg_solve_dc, dc_objective
from .igrasp import DivergenceError, IGraspInfo, igrasp_reconstruct
from .resnet import (ProxWeights, WeightFileError, make_random_weights, read_weights,
                     resnet_prox_infer, write_weights, zero_weights)
from .sense import (SenseOperator, build_sense_operator, cine_adjoint, cine_forward,
                    cine_normal, flatten_phase_data, power_iteration, sense_adjoint,
                    sense_forward, sense_normal, single_phase_operator, weighted_data)
from .sensitivity import estimate_sensitivities, spokes_union
from .tv import temporal_tv, temporal_tv_prox
from .unrolled import ProxSpec, UnrollDiagnostics, gridding_recon, unrolled_reconstruct
