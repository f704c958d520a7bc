"""Adversarial binary hypothesis testing games on finite alphabets.

Equilibrium error exponents, generalized (transport-constrained)
divergences, indistinguishability regions, and exact or Monte Carlo
finite-length play of the Neyman-Pearson and Bayesian detection games.
"""

__version__ = "0.1.0"

from .errors import (AdgameError, DimensionError, ResourceBudgetError, SolverError,
                     ValidationError)
from .exponents import (BayesExponents, ExponentResult, GameSpec, IndistinguishabilityResult,
                        bayes_exponent, bayes_payoff_exponent, indistinguishability,
                        limit_exponents, np_fn_exponent, np_fn_exponent_metric_form,
                        region_sweep)
from .game_sim import (DefenseEval, SimulationReport, always_h0, always_h1, bayes_defense,
                       exact_error_probs, induced_output_pmf, monte_carlo_simulate,
                       np_defense, np_defense_prob, output_type_law)
from .gendiv import GenDivResult, gen_divergence, gen_divergence_empirical
from .simplex import (Coupling, DistortionMatrix, MetricCertificate, Pmf, expected_distortion,
                      kl_divergence, make_distortion)
from .transport import TransportResult, emd
from .typeclasses import (Composition, JointComposition, conditional_class_size,
                          count_admissible_conditional_classes, enumerate_joint_compositions,
                          sample_attack_output, type_class_size)
