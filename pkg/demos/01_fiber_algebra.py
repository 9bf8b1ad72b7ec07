"""Exact fiber algebra: the SU(3), G2 and Spin(7) forms on a single tangent space.

Run with ``python demos/01_fiber_algebra.py``. Every printed residual is a
floating-point rounding error; nothing here is approximated.
"""

import numpy as np

from g2lab.exterior import AlgebraicForm, contract, hodge_star, inner_norm, wedge
from g2lab.structures import (
    G2Structure,
    cayley_euclidean,
    check_cayley_redundancy,
    check_g2_identities,
    product_g2,
    product_spin7,
    standard_su3,
)

rng = np.random.default_rng(1)

# The flat Calabi-Yau structure on C^3: Kahler form omega and holomorphic volume Omega.
s = standard_su3()
print("|Omega|^2 =", round(inner_norm(s.Omega), 12), "(normalized to 8)")

# Adding a circle factor gives phi = omega ^ dt + Re Omega on R^7.
g2 = product_g2(s)
print("phi agrees with the Euclidean G2 form:", (g2.phi - G2Structure.euclidean().phi).max_abs() < 1e-14)

# On a random 2-form, contracting twice with phi is theta + *(theta ^ phi).
th = AlgebraicForm.from_array(7, 2, rng.normal(size=21))
r = contract(contract(th, g2.phi), g2.phi) - hodge_star(wedge(th, g2.phi)) - th
print(f"double contraction with phi: residual {r.max_abs():.1e}")

# For a 2-form F on C^3, the ReOmega and ImOmega contractions differ by J.
F = AlgebraicForm.from_array(6, 2, rng.normal(size=15))
for name, val in check_g2_identities(F, s).items():
    print(f"  {name:28s} {val:.1e}")

# A second circle factor gives the Cayley 4-form, which is self-dual.
Psi = cayley_euclidean()
print(f"*Psi - Psi: {(hodge_star(Psi) - Psi).max_abs():.1e}")
sp = product_spin7(g2)
print(f"Spin(7) form from the product structure matches: {(sp.Psi - Psi).max_abs() < 1e-14}")

# Of the 7 Spin(7) instanton conditions on T^7 x S^1, those for a pullback
# coincide with the G2 ones; the remainder is redundant.
red = check_cayley_redundancy(AlgebraicForm.from_array(7, 2, rng.normal(size=21)))
print(f"Cayley redundancy residual: {red['redundancy']:.1e}")
