"""
Rolling ball on a rotating turntable
====================================

A homogeneous ball rolls without slipping on a table spinning at rate Omega.
The contact point circles at the constant rate alpha = k2 Omega / (r^2 + k2)
and the vertical spin stays fixed.  The vakonomic motion from the same
initial data spirals outward instead.
"""

import numpy as np

from algebroid_mech import IntegratorConfig, SystemState, dalembert_residual, integrate
from algebroid_mech.scenarios import rolling_ball, rolling_ball_rate

mass, r, k2, Omega = 1.0, 1.0, 2.0, 3.0
A, L, C = rolling_ball(mass=mass, r=r, k2=k2, Omega=Omega)
alpha = rolling_ball_rate(r, k2, Omega)

# planar velocity (0.3, 0.1); omega1, omega2 fixed by the contact conditions
x0 = [0.5, -0.2]
y0 = [0.3, 0.1, Omega * x0[0] - 0.1, 0.3 + Omega * x0[1], 0.7]
cfg = IntegratorConfig(1e-3)
traj = integrate(A, L, SystemState(0.0, x0, y0), cfg, 5.0, mode="nonholonomic", constraint=C)

angle = alpha * traj.t
exact = np.c_[np.cos(angle) * 0.3 - np.sin(angle) * 0.1, np.sin(angle) * 0.3 + np.cos(angle) * 0.1]
print(f"alpha = {alpha}")
print(f"max planar velocity error  {np.max(np.abs(traj.y[:, :2] - exact)):.2e}")
print(f"max spin drift             {np.max(np.abs(traj.y[:, 4] - 0.7)):.2e}")
print(f"max constraint residual    {np.max(traj.diagnostics['constraint_residual']):.2e}")
print(f"d'Alembert remainder       {dalembert_residual(A, L, C, traj):.2e}")

# the contact point runs around a circle of radius |v| / alpha
centre = np.array(x0) + np.array([-y0[1], y0[0]]) / alpha
radius = np.linalg.norm(traj.x - centre, axis=1)
print(f"contact path radius        {radius.min():.6f} .. {radius.max():.6f}  (|v|/alpha = {np.hypot(0.3, 0.1) / alpha:.6f})")

# with zero initial multipliers the vakonomic motion spirals outward
vak = integrate(A, L, SystemState(0.0, x0, y0, [0.0, 0.0]), IntegratorConfig(1e-2), 5.0, mode="vakonomic",
                constraint=C)
for k in range(0, len(vak), 100):
    print(f"t = {vak.t[k]:.0f}  planar speed nonholonomic {np.hypot(*traj.y[10 * k, :2]):.4f}"
          f"  vakonomic {np.hypot(*vak.y[k, :2]):9.4f}")
