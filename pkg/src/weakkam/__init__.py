"""Numerical weak-KAM toolkit on the torus.

Discounted and cohomology-modified Lax-Oleinik value iteration, conformal
Hamiltonian flows with their linearization, Green bundles, and a calculus
for semi-concave grid functions, cross-checked against closed forms for
the pendulum H(q, p) = p^2/2 + cos(2*pi*q).
"""

__version__ = "0.1.0"

from . import cli, dynamics, green, grid, lo_solver, pendulum_oracle, semiconcave

__all__ = [
    "cli",
    "dynamics",
    "green",
    "grid",
    "lo_solver",
    "pendulum_oracle",
    "semiconcave",
    "__version__",
]
