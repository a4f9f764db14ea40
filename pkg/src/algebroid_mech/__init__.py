"""Lagrangian mechanics on general algebroids.

Charts of (possibly non-Lie) algebroids, second-order jets of expressions,
Euler-Lagrange flows, nonholonomic and vakonomic constraints, and the
numerical checks that tie them together.
"""

from .algebroid import (AlgebroidChart, AxiomReport, CotangentEPoint, SectionExpr, TangentEDualPoint,
                        TangentEPoint, admissible_variation, adjoint, check_axioms, epsilon_map,
                        holonomic_vector_residual, is_admissible, kappa_apply, kappa_duality_residual,
                        opposite, section_bracket, tangent_pairing)
from .constraints import (AffineConstraint, GeometricConstraint, HolonomicityReport, affine_reduced_rhs,
                          consistency_project, dalembert_residual, is_holonomic,
                          lift_admissibility_residual, nonholonomic_rhs, vakonomic_rhs)
from .dynamics import (IntegratorConfig, SystemState, Trajectory, el_rhs, integrate,
                       variation_tangency_residual)
from .errors import *  # noqa: F401,F403
from .expr import EvalContext, Expr, SecondOrderJet, eval_jet, fd_derivative, parse
from .lagrangian import (ForceField, Lagrangian, LegendreJet, action, delta_L, dW_direct, dW_pairing,
                         first_variations, legendre_jet, tulczyjew_differential)

__version__ = "0.1.0"
