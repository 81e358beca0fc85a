"""An Isaacs problem with a step in the exterior data, solved twice.

Policy iteration gives the reference.  The monotone Perron iteration starts
from barrier-built sub- and supersolutions and climbs to the same answer.
The oscillation around the jump then gives a Hölder exponent.

Run: python demos/perron_and_holder.py   (about half a minute)
"""

import numpy as np

from hjbilab.barriers import build_global_barrier
from hjbilab.grid import BoxDomain, Grid
from hjbilab.kernels import LevyKernel
from hjbilab.operators import EllipticityParams
from hjbilab.regularity import holder_fit, oscillation_sequence
from hjbilab.solver import (ControlCoefficients, HJBIProblem, barrier_pair, discretize,
                            perron_iterate, solve_policy_iteration)

P = EllipticityParams(1.0, 2.0, 1.0)
step = lambda p: np.where(np.atleast_2d(p)[:, 0] > 0, 1.0, 0.0)
src = lambda p: np.cos(2 * p[:, 0])
controls = {("a1", "b1"): ControlCoefficients(diffusion=1.0, drift=0.5, source=src),
            ("a1", "b2"): ControlCoefficients(diffusion=2.0, source=-1.0, jump=0.5),
            ("a2", "b1"): ControlCoefficients(diffusion=1.5, discount=0.5, source=0.5),
            ("a2", "b2"): ControlCoefficients(diffusion=1.0, drift=-0.5, source=src, jump=0.0)}
prob = HJBIProblem(BoxDomain((-1.0,), (1.0,)), LevyKernel.fractional(1, 1.0), controls, step, P)

D = discretize(prob, Grid.uniform((-1.0,), (1.0,), 129))
tol = D.default_tol()
ref = solve_policy_iteration(D, tol)

B = build_global_barrier(prob.domain, P, prob.kernel)
lower, upper, A = barrier_pair(D, B.constants["eps6"], B.function)
print(f"barrier amplitude {A:.3g}: the pair brackets the solution very loosely")

info = {}
w = perron_iterate(D, lower, upper, tol, info=info)
print(f"Perron: {info['iterations']} sweeps, monotone = {info['monotone']}")
print(f"max |Perron - policy iteration| = {np.abs(w.values - ref.values).max():.2e} (tol {tol:.0e})")

seq = oscillation_sequence(w, (0.0,), ratio=2.0, kmax=3, radius0=0.5)
alpha, C, _ = holder_fit(seq)
print("oscillations:", np.array2string(seq.values, precision=4))
print(f"fitted alpha = {alpha:.3f}, C = {C:.3f}")
