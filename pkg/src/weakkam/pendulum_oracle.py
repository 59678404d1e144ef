"""Closed forms for the pendulum H(q, p) = p^2/2 + cos(2 pi q).

Everything here is derived by independent quadrature / root finding so it
can referee the grid solvers:

  * c_of_e(e)  = integral_0^1 sqrt(2(e - cos 2 pi q)) dq, the cohomology
    value of the invariant circle at energy e >= 1 (strictly increasing,
    c(1) = 4/pi).
  * e_of_I(I)  = c^{-1}(I); also the critical value alpha for the form I,
    since H = e on the invariant graph.
  * u_I(q)     = integral_0^q (sqrt(2(e - cos 2 pi s)) - I) ds, the weak-KAM
    solution for the constant form I on the upper branch, with
    u_I'  = sqrt(2(e - cos 2 pi q)) - I,
    u_I'' = 2 pi sin(2 pi q) / sqrt(2(e - cos 2 pi q)).

At the separatrix value I = I_PLUS = 4/pi the second derivative simplifies
to 2 pi cos(pi q) on (0, 1); it is undefined at q = 0, where the one-sided
limits are +2 pi and -2 pi.
"""

from functools import lru_cache

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq

TWO_PI = 2.0 * np.pi
I_PLUS = 4.0 / np.pi

__all__ = [
    "I_PLUS",
    "PendulumCurve",
    "SingularPointError",
    "c_of_e",
    "e_of_I",
    "alpha_of_c",
    "oracle_u",
    "oracle_du",
    "oracle_d2u",
    "separatrix_d2u",
    "u_grid",
    "du_grid",
    "d2u_grid",
    "oracle_sup_d2_gap",
    "d21_gap",
]


class SingularPointError(ValueError):
    """Second derivative requested at the separatrix corner q = 0."""


class PendulumCurve:
    """Energy level e >= 1 of the pendulum and its cohomology value I = c(e)."""

    def __init__(self, e):
        if e < 1.0:
            raise ValueError("rotation levels require e >= 1")
        self.e = float(e)
        self.I = c_of_e(e)


def c_of_e(e):
    """Cohomology value of the energy-e invariant circle (adaptive quadrature)."""
    if e < 1.0:
        raise ValueError("c(e) is defined for e >= 1")
    val, err = quad(lambda q: np.sqrt(2.0 * (e - np.cos(TWO_PI * q))), 0.0, 1.0,
                    epsabs=1e-12, epsrel=1e-12, limit=200)
    if err > 1e-9:
        raise RuntimeError(f"quadrature for c(e) did not converge (err={err:g})")
    return val


@lru_cache(maxsize=1024)
def _e_of_I_cached(I):
    if I <= I_PLUS:
        return 1.0
    e_hi = max(2.0, I * I)
    while c_of_e(e_hi) < I:
        e_hi *= 2.0
    return brentq(lambda e: c_of_e(e) - I, 1.0, e_hi, xtol=1e-13, rtol=1e-15)


def e_of_I(I):
    """Inverse of c_of_e by bracketed root finding; also alpha(c = I)."""
    if I < I_PLUS - 1e-12:
        raise ValueError(f"I must be >= 4/pi = {I_PLUS:.10f}")
    return _e_of_I_cached(float(max(I, I_PLUS)))


def alpha_of_c(c):
    """Critical value of the pendulum for a constant form c (any real c)."""
    c = float(np.atleast_1d(c)[0]) if np.ndim(c) else float(c)
    return e_of_I(abs(c)) if abs(c) >= I_PLUS else 1.0


def oracle_du(I, q):
    """u_I'(q) = sqrt(2(e - cos 2 pi q)) - I, vectorized in q."""
    e = e_of_I(I)
    q = np.asarray(q, dtype=float)
    return np.sqrt(2.0 * (e - np.cos(TWO_PI * q))) - I


def oracle_u(I, q):
    """u_I(q) by adaptive quadrature of u_I' from 0 (scalar q in [0, 1])."""
    e = e_of_I(I)
    val, _ = quad(lambda s: np.sqrt(2.0 * (e - np.cos(TWO_PI * s))) - I, 0.0, float(q),
                  epsabs=1e-12, epsrel=1e-12, limit=200)
    return val


def separatrix_d2u(q):
    """u_{I+}'' on (0, 1): equals 2 pi cos(pi q); one-sided limits at 0 are +-2 pi."""
    return TWO_PI * np.cos(np.pi * np.asarray(q, dtype=float))


def oracle_d2u(I, q):
    """u_I''(q); raises SingularPointError at q = 0 when I = I_PLUS."""
    q = np.asarray(q, dtype=float)
    if abs(I - I_PLUS) <= 1e-12:
        at_corner = np.isclose(q % 1.0, 0.0, atol=1e-15)
        if np.any(at_corner):
            raise SingularPointError(
                "u'' undefined at q = 0 on the separatrix; one-sided limits are +-2 pi")
        return separatrix_d2u(q % 1.0)
    e = e_of_I(I)
    return TWO_PI * np.sin(TWO_PI * q) / np.sqrt(2.0 * (e - np.cos(TWO_PI * q)))


# ----------------------------------------------------------------------
# Grid sampling (per-cell Gauss-Legendre accumulation; independent of the
# solver quadratures)
# ----------------------------------------------------------------------
def du_grid(I, n):
    """u_I' sampled at q = j/n."""
    return oracle_du(I, np.arange(n) / n)


def d2u_grid(I, n):
    """u_I'' sampled at q = j/n (at I = I_PLUS the q = 0 entry is the
    symmetric average 0 of the one-sided limits, matching a centered stencil)."""
    q = np.arange(n) / n
    if abs(I - I_PLUS) <= 1e-12:
        out = separatrix_d2u(q)
        out[0] = 0.0
        return out
    return oracle_d2u(I, q)


def u_grid(I, n, order=8):
    """u_I at the grid points q = j/n via per-cell Gauss quadrature of u_I'.

    The accumulated total over one period vanishes because I = c(e); the
    residual closure defect is returned alongside the values.
    """
    nodes, weights = np.polynomial.legendre.leggauss(order)
    h = 1.0 / n
    cells = np.arange(n) * h
    pts = cells[:, None] + 0.5 * h * (nodes[None, :] + 1.0)
    vals = oracle_du(I, pts)
    increments = 0.5 * h * (vals @ weights)
    u = np.concatenate([[0.0], np.cumsum(increments)])
    closure = u[-1]
    return u[:-1], float(closure)


def oracle_sup_d2_gap(I, n_dense=20001):
    """Max over a dense grid of |u_I'' - u_{I+}''| and the witnessing q.

    The grid mixes uniform samples with points geometrically accumulating
    at both sides of the separatrix corner q = 0, where the gap peaks.
    """
    if I <= I_PLUS:
        raise ValueError("need I > I_PLUS")
    qs = np.concatenate([
        np.linspace(1e-9, 1.0 - 1e-9, n_dense),
        np.geomspace(1e-9, 0.45, 400),
        1.0 - np.geomspace(1e-9, 0.45, 400),
    ])
    gap = np.abs(oracle_d2u(I, qs) - separatrix_d2u(qs))
    k = int(np.argmax(gap))
    return float(gap[k]), float(qs[k])


def d21_gap(I):
    """integral_0^1 |u_I'' - u_{I+}''| dq by adaptive quadrature."""
    if I <= I_PLUS:
        raise ValueError("need I > I_PLUS")
    e = e_of_I(I)

    def integrand(q):
        d2_i = TWO_PI * np.sin(TWO_PI * q) / np.sqrt(2.0 * (e - np.cos(TWO_PI * q)))
        return abs(d2_i - TWO_PI * np.cos(np.pi * q))

    val, err = quad(integrand, 0.0, 1.0, epsabs=1e-10, epsrel=1e-10, limit=400)
    if err > 1e-7:
        raise RuntimeError(f"d21 quadrature did not converge (err={err:g})")
    return val
