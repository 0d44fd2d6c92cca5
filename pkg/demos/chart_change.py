"""R is a tensor and K is not.

An adapted nonlinear change of coordinates moves each system into a new
chart.  Both objects are recomputed there and compared with tensorial
transport: R agrees to roundoff, K does not.

Run: python demos/chart_change.py
"""

import numpy as np

from nonholo import geometry, scenarios
from nonholo.dynamics import semispray
from nonholo.model import ChartDims, TransState

# xb -> (xb1 + 0.3 xb2^2, exp(xb2)), with a leaf shift depending on xb
UNDO_TRANS = ["xb1 - 0.3*log(xb2)^2", "log(xb2)"]
cone_change = geometry.AdaptedDiffeo(
    ChartDims(1, 2), ["2*x1 + 0.5*xb1^2"], ["xb1 + 0.3*xb2^2", "exp(xb2)"],
    ["(x1 - 0.5*(xb1 - 0.3*log(xb2)^2)^2)/2"], UNDO_TRANS)
pair_change = geometry.AdaptedDiffeo(
    ChartDims(2, 2), ["x1 + 0.5*xb1^2", "2*x2 + x1*xb2"], ["xb1 + 0.3*xb2^2", "exp(xb2)"],
    ["x1 - 0.5*(xb1 - 0.3*log(xb2)^2)^2", "(x2 - (x1 - 0.5*(xb1 - 0.3*log(xb2)^2)^2)*log(xb2))/2"],
    UNDO_TRANS)


def report(label, L, C, s, diffeo):
    r = geometry.chart_transform_check(C, diffeo, s, semispray(L, C, s))
    print(f"{label}: max |R| {np.max(np.abs(r.R_predicted)):.3g}, "
          f"R deviation {r.R_deviation:.2e}, K deviation {r.K_deviation:.2e}")


sc = scenarios.build("appell_nonlinear")
# on the cone the semispray is radial, so R vanishes identically
report("Appell cone", sc.L, sc.C, sc.sample_states(np.random.default_rng(1), 200), cone_change)

L, C = scenarios.random_system(1, 0)
rng = np.random.default_rng(2)
s = TransState(rng.normal(size=(50, 2)), rng.normal(size=(50, 2)), rng.normal(size=(50, 2)))
report("random (m=2, n=2) system", L, C, s, pair_change)
