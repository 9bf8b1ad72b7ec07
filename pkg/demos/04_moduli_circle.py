"""Central endpoints trace a circle in the moduli space.

For an irreducible ``B`` the stabilizer is the centre U(1), and the endpoints
``exp(i beta) Id`` give iso-trivial instantons whose endpoint classes sit at
distance ``|exp(i b1) - exp(i b2)|`` from each other.
"""

import numpy as np

from g2lab.gauge import conjugacy_distance, stabilizer
from g2lab.isotrivial import admissible_gauge, assemble_isotrivial, moduli_maps
from g2lab.lattice import TorusLattice, random_connection

rng = np.random.default_rng(10)
Y = TorusLattice((5, 5, 5))
B = random_connection(rng, Y, 2, 1, 4, amplitude=0.7)
G = stabilizer(B)
print(f"stabilizer dimension {G.complex_dim} (irreducible: {G.irreducible()})")

betas = np.linspace(0, 2 * np.pi, 8, endpoint=False)
ref = admissible_gauge(B, np.eye(2)).endpoint_field()
print(" beta   distance   |e^(i beta) - 1|")
for b in betas:
    tau = admissible_gauge(B, np.exp(1j * b) * np.eye(2)).endpoint_field()
    d = conjugacy_distance(tau, ref, G).value
    print(f"{b:5.2f}   {d:.6f}   {abs(np.exp(1j * b) - 1):.6f}")

# rho is the restriction to t = 0, which equals B; tau is defined because B is irreducible.
m = moduli_maps(assemble_isotrivial(admissible_gauge(B, np.exp(1.0j) * np.eye(2)), B))
print(f"\nbeta = 1: |rho - B| = {(m.rho.A - B.A).sup_norm():.1e}, tau defined: {m.tau is not None}, "
      f"tau_B eigenvalue angles {np.round(np.angle(np.linalg.eigvals(np.asarray(m.tau_B).reshape(-1, 2, 2)[0])), 12)}")
