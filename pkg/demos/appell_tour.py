"""Appell's machine in three guises: linear rolling, the cone constraint, and the elevator.

Run: python demos/appell_tour.py
"""

import numpy as np

from nonholo import geometry, scenarios
from nonholo.dynamics import h_form, semispray
from nonholo.integrate import monitor
from nonholo.model import TransState


def linear():
    sc = scenarios.build("appell_linear")
    s = TransState([0.0, 0.0, 0.0], [0.0, 0.4], [1.0, 0.5])
    B = geometry.curvature_B(sc.C, s)
    print("linear constraint, curvature B^u_12 at xb2 = 0.4:", np.round(B[:, 0, 1], 6))
    traj = sc.simulate(dt=1e-3)
    slope = np.polyfit(traj.t, traj.y_trans[:, 0], 1)[0]
    print(f"  dyb1/dt measured {slope:.9f}, oracle r*gamma/alpha'' {sc.oracle['slope_y1']:.9f}")


def cone():
    sc = scenarios.build("appell_nonlinear")
    s = TransState([0.0], [0.0, 0.0], [3.0, 4.0])
    print("cone constraint at yb = (3, 4): y1 =", sc.C.at(s)[0])
    print("  h =", np.round(h_form(sc.L, sc.C, s).h, 6).tolist())
    print("  semispray S =", semispray(sc.L, sc.C, s).tolist())
    traj = sc.simulate(dt=1e-3)
    speed = np.hypot(*traj.y_trans.T)
    print(f"  |yb| grows at {np.polyfit(traj.t, speed, 1)[0]:.9f}; kappa = {sc.oracle['kappa']:.9f}")
    print(f"  monitor residual {monitor(traj, sc.L, sc.C).max_residual:.2e}")


def elevator():
    for a0 in (0.0, 0.5, 1.0):
        sc = scenarios.build("appell_hammel", {"a0": a0})
        traj = sc.simulate(dt=1e-3)
        rate = np.polyfit(traj.t, np.hypot(*traj.y_trans.T), 1)[0]
        print(f"elevator acceleration {a0:.1f}: speed rate {rate:+.9f} (oracle {sc.oracle['speed_rate']:+.9f})")


if __name__ == "__main__":
    linear()
    cone()
    elevator()
