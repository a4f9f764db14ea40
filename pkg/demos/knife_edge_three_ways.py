"""
One constrained system, three solvers
=====================================

A particle in R^3 with the linear constraint ydot3 = x1 ydot2.  The motion
comes out the same from the multiplier solver, from the reduced affine
equations, and from the algebroid obtained by orthogonal projection onto the
constraint distribution.  The distribution is not integrable, and the
projected chart is quasi-Lie but not Lie.
"""

import numpy as np

from algebroid_mech import (AffineConstraint, GeometricConstraint, IntegratorConfig, Lagrangian, SystemState,
                            check_axioms, integrate, is_holonomic)
from algebroid_mech.scenarios import canonical_tm, projected_algebroid

R3, L = canonical_tm("0.5 * (x1^2 + x2^2) + 0.3 * x3", 3)
phi = GeometricConstraint(("y3 - x1 * y2",), 3, 3)
aff = AffineConstraint(("0", "0", "0"), (("1", "0", "0"), ("0", "1", "x1")), 3, 3)
cfg = IntegratorConfig(1e-3)
x0, y0 = [0.4, -0.1, 0.2], [0.3, 0.5, 0.2]

full = integrate(R3, L, SystemState(0.0, x0, y0), cfg, 3.0, mode="nonholonomic", constraint=phi)
red = integrate(R3, L, SystemState(0.0, x0, y0[:2]), cfg, 3.0, mode="affine_reduced", constraint=aff)

P = projected_algebroid(R3, np.eye(3, dtype=int).tolist(), [[1, 0, 0], [0, 1, "x1"]])
PL = Lagrangian("0.5 * (y1^2 + y2^2) - 0.5 * (x1^2 + x2^2) - 0.3 * x3", 3, 2)
proj = integrate(P, PL, SystemState(0.0, x0, [0.3, 0.5 * np.sqrt(1 + x0[0] ** 2)]), cfg, 3.0)

print(f"affine reduced vs multipliers  {np.max(np.abs(red.x - full.x)):.1e}")
print(f"projected chart vs multipliers {np.max(np.abs(proj.x - full.x)):.1e}")
pts = np.random.default_rng(0).uniform(-1, 1, (20, 3))
rep = check_axioms(P, pts)
print(f"projected chart: {rep.classification()} (anchor homomorphism residual {rep.anchor_hom_residual:.2f})")
print(f"constraint holonomic: {is_holonomic(R3, aff, pts).is_holonomic}")
