"""Thompson-metric contraction analysis for Riccati flows on the positive definite cone."""

__version__ = "0.1.0"

from .cone import (M_over, OrderInterval, as_spd, as_symmetric, loewner_leq, m_over, spd_inv,
                   spd_log, spd_sqrt, thompson_distance)
from .errors import (ConeError, ConvergenceError, DimensionError, HypothesisError, InfeasibleError,
                     IntegrationError, NotPositiveDefiniteError, NotSymmetricError)
from .riccati import (GrdeField, GrdeParams, StdRiccatiField, StdRiccatiParams, VectorField,
                      grde_defect, grde_dphi, grde_feasible, grde_gain, grde_phi, std_dphi, std_phi)
from .flow import ExitReason, IntegrationConfig, Trajectory, flow_map, integrate, observed_contraction
from .gauge import (GaugeFunction, audit_nonexpansiveness, build_counterexample, finsler_distance,
                    gauge_eval, gauge_subgradient, necessary_condition_value, spectral_gauge)
from .rates import (RateCertificate, degenerate_sigma_rate, fixed_point_rate, general_rate_estimate,
                    grde_local_rate, indefinite_sigma_analysis, orthant_rate, std_beta_rate,
                    std_global_rate)
from .gare import GareSolution, gare_convergence_bound, solve_gare, solve_std_are, verify_gare
from .discrete import (DiscreteParams, apply_F, apply_T, dF, empirical_lipschitz, lipschitz_report,
                       rank_factorization, woodbury_rbar)
