"""Low-rank matrix recovery with quadratic-envelope rank regularization."""

from .certificates import (CertificateReport, certify_fixed_rank,
                           certify_rank_penalty, check_recovery_conditions,
                           check_stationary, compute_Z, estimate_delta,
                           in_subdifferential, SubgradientQuery)
from .envelopes import (FixedRank, Nuclear, RankPenalty, Regularizer,
                        card_envelope, card_envelope_scalar,
                        envelope_bruteforce, hard_threshold,
                        indicator_envelope, prox_card_envelope,
                        prox_indicator_envelope, reg_prox_matrix,
                        reg_value_matrix, soft_threshold)
from .problem import (LinearOp, ProblemInstance, gen_gaussian_op,
                      gen_instance, gen_low_rank, identity_op, load_instance,
                      load_matrix, load_operator, normalize,
                      pathological_instance, range_oracle_solution,
                      save_instance, save_matrix, save_operator)
from .solvers import (SolveConfig, SolveResult, best_rank_k, objective_value,
                      solve_admm, solve_fbs, solve_nuclear_bisection,
                      unrelaxed_objective)
from .spectral import (Svd, SortedAbsVector, lift_spectral, lift_spectral_map,
                       numerical_rank, sort_abs, svd)

__version__ = "0.1.0"
