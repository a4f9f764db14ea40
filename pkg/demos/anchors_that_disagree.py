"""
A chart whose left and right anchors differ
===========================================

On a general algebroid the anchor that moves the base (rho) and the one
that enters variations (sigma) need not agree.  The Euler-Lagrange flow is
still defined and the first variation still splits into boundary and bulk
terms, but admissible variations stop being tangent to admissible curves.
"""

import numpy as np

from algebroid_mech import (IntegratorConfig, Lagrangian, SystemState, check_axioms, first_variations, integrate,
                            variation_tangency_residual)
from algebroid_mech.scenarios import canonical_tm, sigma_ne_rho_chart

A = sigma_ne_rho_chart()
print(f"rho = {A.to_dict()['rho']}, sigma = {A.to_dict()['sigma']}")
rep = check_axioms(A, np.random.default_rng(0).uniform(-1, 1, (50, A.n)))
print(f"classification: {rep.classification()}  (rho - sigma residual {rep.rho_sigma_residual:.2f})")

L = Lagrangian("0.5 * y1^2 - 0.5 * x1^2", A.n, A.m)
traj = integrate(A, L, SystemState(0.0, [0.2], [0.5]), IntegratorConfig(1e-3), 2.0)
s = (traj.t - traj.t[0]) / (traj.t[-1] - traj.t[0])
f = np.sin(np.pi * s)[:, None]

(pairing, direct), = first_variations(A, L, traj, [f])
print(f"first variation by parts {pairing.total:+.3e}, directly {direct:+.3e}")
print(f"tangency residual        {variation_tangency_residual(A, traj, f):.3e}")

# the same generator on the tangent bundle, where the anchors agree
T, TL = canonical_tm("0.5 * x1^2", 1)
tm = integrate(T, TL, SystemState(0.0, [0.2], [0.5]), IntegratorConfig(1e-3), 2.0)
print(f"tangency residual on TR  {variation_tangency_residual(T, tm, f):.3e}")
