"""Brownian motion on R^3, S^3 = SU(2) and H^3.

Simulators for the full-manifold Wiener processes and their projected SDE
systems, Fokker-Planck solvers for the projected densities, the uniform
Duistermaat-Heckman leaf measures, and statistical checks that conditional
laws of the projections are the normalized leaf measures.
"""

__version__ = "0.1.0"

from .dh import dh_measure, dh_normalized_density, dh_sample, dh_support, dh_volume
from .manifolds import (EuclideanPoint3, HalfSpacePoint, HPoint, SU2Point,
                        h3_distance, h3_from_halfspace, project_a, project_wc,
                        radial_lambda, su2_normalize, trace_angle)
from .sde import SYSTEMS, evaluate_coefficients, integrate_ensemble, integrate_path
from .group_brownian import (bm_step_h3_halfspace, bm_step_r3, bm_step_su2_exp,
                             bm_step_su2_ito, project_group_path, simulate_group_ensemble,
                             simulate_group_path)
from .stats import (EmpiricalSample, TestReport, chi2_uniformity, conditional_slice,
                    ks_test, ks_two_sample, pitman_transform, verify_conditional_dh,
                    verify_pitman_dh)
from .fokker_planck import (DensityGrid, FP_EQUATIONS, ansatz_residual, marginal,
                            mollified_delta, solve_fp)
from .verify import CHECKS, run_check
