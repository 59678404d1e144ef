"""Finite-difference calculus for semi-concave grid functions.

Gradients and Hessians are centered differences on the periodic grid.  A
grid point is treated as differentiable when forward and backward
differences agree (kink proxy), and as an Alexandrov point when its second
difference is stable under one grid-halving.  Masked-out points are never
silently integrated: every aggregate reports the unmeasured mass alongside
its value.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .grid import GridFunction, nearest_image, wrap_torus

__all__ = [
    "GradientField",
    "SymField",
    "GraphCloud",
    "D21Result",
    "ExceedResult",
    "SemiconcavityEstimate",
    "numeric_gradient",
    "numeric_hessian",
    "d21_distance",
    "d21_from_hessians",
    "graph_cloud",
    "hausdorff_distance",
    "one_sided_hausdorff",
    "fiberwise_sup_distance",
    "semiconcavity_constant",
    "leb_measure_exceed",
    "save_cloud",
    "load_cloud",
]


@dataclass
class GradientField:
    """Central-difference gradient with a kink mask and one-sided slopes."""

    grad: np.ndarray        # grid shape + (d,)
    reliable: np.ndarray    # grid shape, bool
    forward: np.ndarray     # grid shape + (d,)
    backward: np.ndarray    # grid shape + (d,)


@dataclass
class SymField:
    """Per-point symmetric d x d second derivative with an Alexandrov mask."""

    values: np.ndarray      # grid shape + (d, d)
    alexandrov: np.ndarray  # grid shape, bool
    gap: np.ndarray         # grid shape: |fine - coarse| stability gap
    stability_tol: float


@dataclass
class GraphCloud:
    """Finite sample of a (closure of a) gradient graph in T^d x R^d."""

    theta: np.ndarray       # (N, d)
    p: np.ndarray           # (N, d)
    source_tag: str = ""

    def __post_init__(self):
        self.theta = wrap_torus(np.atleast_2d(np.asarray(self.theta, dtype=float)))
        self.p = np.atleast_2d(np.asarray(self.p, dtype=float))
        if self.theta.size == 0:
            raise ValueError("graph cloud must be non-empty")
        if self.theta.shape != self.p.shape:
            raise ValueError("theta and p must have matching shapes")


@dataclass
class D21Result:
    value: float
    unmeasured_mass: float
    unreliable: bool

    def __float__(self):
        return self.value


@dataclass
class ExceedResult:
    measure: float
    unmeasured_mass: float

    def __float__(self):
        return self.measure


@dataclass
class SemiconcavityEstimate:
    K: float
    stencil_scale: float

    def __float__(self):
        return self.K


# ----------------------------------------------------------------------
# Gradient / Hessian
# ----------------------------------------------------------------------
def numeric_gradient(u):
    """Centered gradient with reliability mask.

    A point is unreliable on an axis when its forward and backward
    differences disagree by more than 5x the typical (median) smooth-point
    disagreement; both one-sided slopes are kept as super-differential
    representatives there.
    """
    vals = u.values
    h = u.h
    fwd = np.empty(vals.shape + (u.dim,))
    bwd = np.empty_like(fwd)
    for ax in range(u.dim):
        fwd[..., ax] = (np.roll(vals, -1, axis=ax) - vals) / h
        bwd[..., ax] = (vals - np.roll(vals, 1, axis=ax)) / h
    disagree = np.max(np.abs(fwd - bwd), axis=-1)
    scale = float(np.median(disagree))
    floor = 1e-9 * (1.0 + float(np.max(np.abs(fwd))) if fwd.size else 1.0)
    reliable = disagree <= 5.0 * scale + floor
    return GradientField(grad=0.5 * (fwd + bwd), reliable=reliable,
                         forward=fwd, backward=bwd)


def _second_differences(vals, n, dim):
    """All (d, d) centered second-difference blocks (mixed terms by diagonal stencils)."""
    h = 1.0 / n
    out = np.empty(vals.shape + (dim, dim))
    for i in range(dim):
        out[..., i, i] = (np.roll(vals, -1, axis=i) - 2.0 * vals
                          + np.roll(vals, 1, axis=i)) / h**2
        for j in range(i + 1, dim):
            pp = np.roll(np.roll(vals, -1, axis=i), -1, axis=j)
            mm = np.roll(np.roll(vals, 1, axis=i), 1, axis=j)
            pm = np.roll(np.roll(vals, -1, axis=i), 1, axis=j)
            mp = np.roll(np.roll(vals, 1, axis=i), -1, axis=j)
            mixed = (pp + mm - pm - mp) / (4.0 * h**2)
            out[..., i, j] = mixed
            out[..., j, i] = mixed
    return out


def _op_norm_field(m):
    """Spectral norm of each symmetric matrix in an (..., d, d) array."""
    if m.shape[-1] == 1:
        return np.abs(m[..., 0, 0])
    return np.max(np.abs(np.linalg.eigvalsh(m)), axis=-1)


def numeric_hessian(u, stability_tol=None):
    """Centered second differences plus an Alexandrov stability mask.

    The mask holds where the value changes by no more than ``stability_tol``
    when the grid is halved (coarse restriction, multilinearly brought back
    to the fine points).  The default tolerance is 10x the median stability
    gap, which tracks the smooth-point discretization error, plus a small
    absolute floor.  Requires even n for the halving comparison.
    """
    if u.n % 2 != 0:
        raise ValueError("Alexandrov mask needs an even grid size")
    fine = _second_differences(u.values, u.n, u.dim)
    coarse_vals = u.values[(slice(None, None, 2),) * u.dim]
    coarse = _second_differences(coarse_vals, u.n // 2, u.dim)
    # carry each coarse component back to the fine grid
    coarse_fine = np.empty_like(fine)
    pts = u.grid_coords()
    for i in range(u.dim):
        for j in range(u.dim):
            comp = GridFunction(coarse[..., i, j], dim=u.dim)
            coarse_fine[..., i, j] = comp(pts)
    gap = _op_norm_field(fine - coarse_fine)
    if stability_tol is None:
        scale = float(np.median(_op_norm_field(fine)))
        stability_tol = 10.0 * float(np.median(gap)) + 1e-7 * (1.0 + scale)
    mask = gap <= stability_tol
    return SymField(values=fine, alexandrov=mask, gap=gap,
                    stability_tol=float(stability_tol))


# ----------------------------------------------------------------------
# d_{2,1} and the Hessian-excess measure
# ----------------------------------------------------------------------
def d21_from_hessians(su, sv):
    """Aggregate |D2u - D2v| over the joint Alexandrov mask.

    Returns the grid integral (masked mean times masked volume fraction)
    with the excluded volume reported, and an unreliability flag when more
    than half the torus is unmeasured.
    """
    joint = su.alexandrov & sv.alexandrov
    total = joint.size
    n_ok = int(np.count_nonzero(joint))
    unmeasured = 1.0 - n_ok / total
    if n_ok == 0:
        return D21Result(0.0, 1.0, True)
    norms = _op_norm_field(su.values - sv.values)
    value = float(np.sum(norms[joint]) / total)
    return D21Result(value, unmeasured, unmeasured > 0.5)


def d21_distance(u, v, stability_tol=None):
    """Grid version of the integrated spectral-norm Hessian distance."""
    su = numeric_hessian(u, stability_tol)
    sv = numeric_hessian(v, stability_tol)
    return d21_from_hessians(su, sv)


def leb_measure_exceed(u, v, eps, stability_tol=None):
    """Volume fraction where D2u - D2v is NOT < eps * identity.

    Counted over doubly-Alexandrov grid points (a nonnegative eigenvalue of
    D2u - D2v - eps*I flags the point); the unmeasured volume is reported
    separately, never folded in.
    """
    su = numeric_hessian(u, stability_tol)
    sv = numeric_hessian(v, stability_tol)
    joint = su.alexandrov & sv.alexandrov
    total = joint.size
    unmeasured = 1.0 - int(np.count_nonzero(joint)) / total
    diff = su.values - sv.values
    eye = np.eye(u.dim)
    top = np.max(np.linalg.eigvalsh(0.5 * (diff + np.swapaxes(diff, -1, -2))
                                    - eps * eye), axis=-1)
    exceed = joint & (top >= 0.0)
    return ExceedResult(float(np.count_nonzero(exceed) / total), unmeasured)


# ----------------------------------------------------------------------
# Graph clouds and distances
# ----------------------------------------------------------------------
def graph_cloud(u, c=0.0, tag=""):
    """Sample the closure of the gradient graph {(theta, c + du)}.

    Reliable points contribute their centered gradient; at kink points both
    one-sided slopes are emitted per unreliable axis (all sign combinations),
    approximating the limits of super-differentials.
    """
    gf = numeric_gradient(u)
    c = np.atleast_1d(np.asarray(c, dtype=float)) * np.ones(u.dim)
    coords = u.grid_coords().reshape(-1, u.dim)
    grad = gf.grad.reshape(-1, u.dim)
    fwd = gf.forward.reshape(-1, u.dim)
    bwd = gf.backward.reshape(-1, u.dim)
    rel = gf.reliable.ravel()
    thetas = [coords[rel]]
    ps = [c + grad[rel]]
    bad = np.flatnonzero(~rel)
    for i in bad:
        axes_bad = np.flatnonzero(np.abs(fwd[i] - bwd[i]) > 0)
        if axes_bad.size == 0:
            axes_bad = np.arange(u.dim)
        for combo in range(2 ** axes_bad.size):
            p = grad[i].copy()
            for k, ax in enumerate(axes_bad):
                p[ax] = fwd[i, ax] if (combo >> k) & 1 else bwd[i, ax]
            thetas.append(coords[i:i + 1])
            ps.append((c + p)[None, :])
    return GraphCloud(np.vstack(thetas), np.vstack(ps), source_tag=tag)


def _cross_dist2(tha, pa, thb, pb):
    dth = nearest_image(tha[:, None, :] - thb[None, :, :])
    dp = pa[:, None, :] - pb[None, :, :]
    return np.sum(dth**2, axis=-1) + np.sum(dp**2, axis=-1)


def one_sided_hausdorff(a, b, chunk=2048):
    """sup over a of the distance to cloud b (torus-Euclidean product metric)."""
    worst = 0.0
    for start in range(0, a.theta.shape[0], chunk):
        sl = slice(start, start + chunk)
        d2 = _cross_dist2(a.theta[sl], a.p[sl], b.theta, b.p)
        worst = max(worst, float(np.sqrt(np.max(np.min(d2, axis=1)))))
    return worst


def hausdorff_distance(a, b):
    """Exact Hausdorff distance between finite clouds."""
    if a.theta.size == 0 or b.theta.size == 0:
        raise ValueError("clouds must be non-empty")
    return max(one_sided_hausdorff(a, b), one_sided_hausdorff(b, a))


def fiberwise_sup_distance(cloud, eta):
    """Max over cloud points of |p - eta(theta_cell)| with grid-cell fibers.

    ``eta`` is a continuous section sampled on the uniform grid, shape
    (n,)*d + (d,); each cloud point is bucketed into its cell by floor.
    """
    eta = np.asarray(eta, dtype=float)
    d = cloud.theta.shape[1]
    n = eta.shape[0]
    cells = np.floor(cloud.theta * n).astype(int) % n
    ref = eta[tuple(cells[:, k] for k in range(d))]
    return float(np.max(np.linalg.norm(cloud.p - ref, axis=1)))


# ----------------------------------------------------------------------
# Semi-concavity constant
# ----------------------------------------------------------------------
def semiconcavity_constant(u):
    """Smallest K with all stencil second differences <= 2K (grid proxy).

    Stencil directions are the axes plus, for d >= 2, the diagonals; the
    reported scale is the grid spacing of the stencil.
    """
    vals = u.values
    h = u.h
    worst = -np.inf
    dirs = [tuple(1 if k == ax else 0 for k in range(u.dim)) for ax in range(u.dim)]
    if u.dim >= 2:
        for signs in range(2 ** (u.dim - 1)):
            w = [1] + [1 if (signs >> k) & 1 else -1 for k in range(u.dim - 1)]
            dirs.append(tuple(w))
    for w in dirs:
        shifted_p = vals
        shifted_m = vals
        for ax, step in enumerate(w):
            if step:
                shifted_p = np.roll(shifted_p, -step, axis=ax)
                shifted_m = np.roll(shifted_m, step, axis=ax)
        wlen2 = (h**2) * sum(s * s for s in w)
        sec = (shifted_p - 2.0 * vals + shifted_m) / wlen2
        worst = max(worst, float(np.max(sec)))
    return SemiconcavityEstimate(K=worst / 2.0, stencil_scale=h)


# ----------------------------------------------------------------------
# Cloud CSV (columns theta_1..theta_d, p_1..p_d, source_tag)
# ----------------------------------------------------------------------
def save_cloud(path, cloud):
    d = cloud.theta.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"theta_{k+1}" for k in range(d)]
                   + [f"p_{k+1}" for k in range(d)] + ["source_tag"])
        for th, p in zip(cloud.theta, cloud.p):
            w.writerow(["%.17g" % x for x in th] + ["%.17g" % x for x in p]
                       + [cloud.source_tag])


def load_cloud(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    d = sum(1 for name in header if name.startswith("theta_"))
    data = rows[1:]
    theta = np.array([[float(x) for x in r[:d]] for r in data])
    p = np.array([[float(x) for x in r[d:2 * d]] for r in data])
    tag = data[0][2 * d] if data else ""
    return GraphCloud(theta, p, source_tag=tag)
