"""Two constraints with vanishing curvature.

Benenti's mechanism has no forces when f = 0, and every motion is a straight
line.  Marle's servomechanism has a nonlinear constraint whose pseudo-curvature
still vanishes, so only the nonlinearity tensor shapes the dynamics.

Run: python demos/benenti_and_marle.py
"""

import numpy as np

from nonholo import geometry, scenarios
from nonholo.dynamics import semispray

rng = np.random.default_rng(0)

ben = scenarios.build("benenti")
s = ben.sample_states(rng, 1000)
print("Benenti, f = 0: max |S| over 1000 states =", np.max(np.abs(semispray(ben.L, ben.C, s))))
traj = ben.simulate(dt=1e-3)
print("  start", traj.x_trans[0], "end", traj.x_trans[-1], "velocity", traj.y_trans[-1])

forced = scenarios.build("benenti", {"f": 1.0})
traj = forced.simulate(dt=1e-3)
print("Benenti, f = 1: transverse velocity drifts to", np.round(traj.y_trans[-1], 6))

for c in (0.0, 0.4):
    marle = scenarios.build("marle", {"c": c})
    s = marle.sample_states(rng, 200)
    K = geometry.pseudo_curvature_K(marle.C, s)
    Ct = geometry.nonlinearity_tensor(marle.C, s)
    traj = marle.simulate(dt=1e-3)
    print(f"Marle c = {c}: max |K| {np.max(np.abs(K)):.3g}, C-tensor {Ct[0, 0, 0, 0]:.3g}, "
          f"final (x1, xb1) = {traj.x_leaf[-1, 0]:.6f}, {traj.x_trans[-1, 0]:.6f}")
