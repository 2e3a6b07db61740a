"""
Adapting a prototype to the observed state
==========================================

A prototype's remaining course is fitted by a quintic B-spline and its first
second is refitted so the curve starts at the observed position, velocity
and acceleration.  Beyond that second the curve is untouched.

    python demos/spline_adaptation.py
"""

import numpy as np

from laneproto.bspline import boundary_fit, derivative, evaluate, insert_knot, poly_to_bspline

# a lane-change-like quintic on the normalised interval [0, 1] (4 s)
coeffs = np.polynomial.polynomial.polyfit(np.linspace(0, 1, 50),
                                          3.6 / (1 + np.exp(-10 * (np.linspace(0, 1, 50) - 0.4))), 5)
curve = poly_to_bspline(coeffs, 5)
print("control points", np.round(curve.coeffs, 3))

# knot insertion adds local control without changing the shape
refined = insert_knot(curve, 0.25)
u = np.linspace(0, 1, 9)
print("max change from insertion", np.max(np.abs(evaluate(refined, u) - evaluate(curve, u))))

# observed state 0.3 m to the left of the prototype, 0.1 m/s faster
x0 = evaluate(curve, 0.0) + 0.3
v0 = evaluate(derivative(curve), 0.0) + 0.1 * 4.0  # d/du = 4 s * d/dt
a0 = evaluate(derivative(curve, 2), 0.0)
adapted = boundary_fit(curve, x0, v0, a0, 0.0, interval=(0.0, 0.25))
for uu in u:
    print(f"t={4 * uu:4.1f} s  prototype {evaluate(curve, uu):+.3f}  adapted {evaluate(adapted, uu):+.3f}")
