"""Special barrier checked at seven dyadic scales with one constant.

Run: python demos/barriers_across_scales.py
"""

from hjbilab.barriers import build_special, special_samples, verify_special
from hjbilab.kernels import LevyKernel
from hjbilab.operators import EllipticityParams

# lam = 16 keeps exp(-eta |x|) above underflow on the side-3 cube
P = EllipticityParams(16.0, 32.0, 0.5)
K = LevyKernel.fractional(1, 1.0)

B = build_special(P, K)
print(f"eta = {B.eta:.3g}, sup norm = {B.sup_norm:.3g}")

scales = [2.0 ** -k for k in range(7)]
rep = verify_special(B, P, K, scales, special_samples(1, 400, K, seed=0))
for r, c in rep.per_scale_constant.items():
    print(f"  r = {r:<9.5g} constant needed {c:.4g}")
print(f"single constant {rep.constant:.4g}, passed = {rep.passed}")
