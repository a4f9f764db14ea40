"""
Euler top as Lagrangian mechanics on the Lie algebra so(3)
==========================================================

The Lie algebra is an algebroid over a point, so the flow has no base
motion.  Energy and the squared angular momentum are conserved, and the
intermediate axis is unstable.
"""

import numpy as np

from algebroid_mech import IntegratorConfig, SystemState, check_axioms, integrate
from algebroid_mech.scenarios import lie_algebra_so3

I = np.array([1.0, 2.0, 3.0])
A, L = lie_algebra_so3(tuple(I))
rep = check_axioms(A, np.zeros((1, 1)))
print(f"so(3) classification: {rep.classification()}")

for label, w0 in (("near the short axis", [1.0, 0.01, 0.01]),
                  ("near the middle axis", [0.01, 1.0, 0.01]),
                  ("generic", [1.0, 0.5, -0.3])):
    traj = integrate(A, L, SystemState(0.0, [0.0], w0), IntegratorConfig(1e-2), 20.0)
    energy = 0.5 * np.sum(I * traj.y ** 2, axis=1)
    m2 = np.sum((I * traj.y) ** 2, axis=1)
    swing = np.ptp(traj.y, axis=0)
    print(f"{label:22s} energy drift {np.ptp(energy):.1e}  |I w|^2 drift {np.ptp(m2):.1e}  "
          f"range of w = {np.round(swing, 3)}")
