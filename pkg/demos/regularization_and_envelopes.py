"""Sup-convolution and convex envelopes on small examples.

Run: python demos/regularization_and_envelopes.py
"""

import numpy as np

from hjbilab.geometry import contact_set, convex_envelope, min_hessian_eigenvalue, sup_convolution
from hjbilab.grid import Grid, GridFunction, Region

g = Grid.uniform((-1.0,), (1.0,), 2001)
x = g.nodes()[:, 0]

# -x^2/2 has the closed-form sup-convolution -x^2 / (2 (1 + eps))
u = GridFunction.from_function(g, lambda p: -np.atleast_2d(p)[:, 0] ** 2 / 2)
for eps in (0.01, 0.1, 1.0):
    ue = sup_convolution(u, eps)
    err = np.abs(ue.values + x ** 2 / (2 * (1 + eps))).max()
    print(f"eps = {eps:<5} max error vs closed form {err:.1e}")

# a kink becomes semiconvex with constant 1/eps
v = GridFunction.from_function(g, lambda p: -np.abs(np.atleast_2d(p)[:, 0]))
ve = sup_convolution(v, 0.05)
print(f"-|x|: min second difference {np.nanmin(min_hessian_eigenvalue(ve)):.2f} >= {-1 / 0.05:.0f}")

# convex envelope of a double well and where it touches
w = GridFunction.from_function(g, lambda p: (np.atleast_2d(p)[:, 0] ** 2 - 0.5) ** 2 - 0.3)
env = convex_envelope(w, Region.from_box(g.box, closed=True))
touch = contact_set(w, Region.from_box(g.box, closed=True))
print(f"double well: envelope min {env.values.min():.3f}, contact nodes {touch.count} of {g.size}")
