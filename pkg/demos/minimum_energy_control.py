"""
Minimum-energy control as a vakonomic problem
=============================================

Steer xdot = u with cost u^2 / 2.  Pontryagin's principle becomes a
vakonomic system on the product of the state and control bundles; the
optimal control is constant and equal to minus the multiplier.
"""

import numpy as np

from algebroid_mech import IntegratorConfig, SystemState, integrate, lift_admissibility_residual
from algebroid_mech.scenarios import pontryagin_control

A, L, C = pontryagin_control(("u1",), "0.5 * u1^2", (1, 1, 1))
print(f"state and control chart: n = {A.n}, m = {A.m}; constraint {C.phi[0]} = 0")

x0, u0 = 0.2, 0.7
traj = integrate(A, L, SystemState(0.0, [x0, u0], [u0, 0.0], [-u0]), IntegratorConfig(1e-2), 2.0,
                 mode="vakonomic", constraint=C)
print(f"max |x(t) - (x0 + u0 t)|  {np.max(np.abs(traj.x[:, 0] - (x0 + u0 * traj.t))):.2e}")
print(f"max |u + mu|              {np.max(np.abs(traj.x[:, 1] + traj.mu[:, 0])):.2e}")
print(f"lift admissibility        {lift_admissibility_residual(A, L, C, traj):.2e}")

# a running cost on the state bends the optimal path
A, L, C = pontryagin_control(("u1",), "0.5 * u1^2 + 0.5 * x1^2", (1, 1, 1))
traj = integrate(A, L, SystemState(0.0, [1.0, -0.5], [-0.5, 0.0], [0.5]), IntegratorConfig(1e-2), 3.0,
                 mode="vakonomic", constraint=C)
# xddot = x, so x = cosh t - 0.5 sinh t
exact = np.cosh(traj.t) - 0.5 * np.sinh(traj.t)
print(f"with state cost: max |x - (cosh t - sinh t / 2)| = {np.max(np.abs(traj.x[:, 0] - exact)):.2e}")
