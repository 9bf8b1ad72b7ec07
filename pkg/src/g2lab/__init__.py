"""Numerical toolkit for gauge fields on flat tori.

Exact fiber algebra for G2 and Spin(7) forms, band-limited connections with
spectral calculus, gauge actions and stabilizers, iso-trivial connections on
``Y x S^1`` and the Chern-Simons functional with its gradient flow.
"""

from . import exterior, structures, lattice, gauge, isotrivial

__version__ = "0.1.0"

__all__ = ["exterior", "structures", "lattice", "gauge", "isotrivial", "chernsimons", "__version__"]


def __getattr__(name):
    if name == "chernsimons":
        from . import chernsimons

        return chernsimons
    raise AttributeError(name)
