"""Tonelli Hamiltonian models on T^d x R^d and their conformal flows.

The flow integrated here is

    dq/dt =  dH/dp(q, p),      dp/dt = -dH/dq(q, p) - lambda * p

for a discount rate lambda >= 0 (lambda = 0 is the plain Hamiltonian
flow).  Positions live on the torus [0, 1)^d, momenta in R^d.  Built-in
models are mechanical, H = |p|^2/2 + V(q), with V a truncated Fourier
series, which covers the pendulum V = cos(2 pi q) and the free case V = 0.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.integrate import solve_ivp

from .grid import nearest_image, wrap_torus

TWO_PI = 2.0 * np.pi

__all__ = [
    "HamiltonianModel",
    "PhasePoint",
    "TangentFrame",
    "FlowParams",
    "EvaluationError",
    "IntegrationError",
    "FrameDegenerateError",
    "UnboundedModelError",
    "mechanical_model",
    "pendulum_model",
    "free_model",
    "model_from_name",
    "reversed_model",
    "shifted_model",
    "legendre",
    "legendre_inverse",
    "integrate_flow",
    "flow_solution",
    "integrate_with_tangent",
    "euler_lagrange_residual",
    "velocity_bound",
    "validate_model",
]


class EvaluationError(RuntimeError):
    """A model evaluator produced a non-finite value."""


class IntegrationError(RuntimeError):
    """Adaptive integration failed (step-size underflow / blow-up)."""

    def __init__(self, message, t_reached):
        super().__init__(f"{message} (time reached: {t_reached:.6g})")
        self.t_reached = t_reached


class FrameDegenerateError(RuntimeError):
    """A propagated tangent frame lost rank."""


class UnboundedModelError(RuntimeError):
    """The velocity-bound doubling search exceeded its cap."""


# ----------------------------------------------------------------------
# Domain types
# ----------------------------------------------------------------------
@dataclass
class HamiltonianModel:
    """Evaluator bundle for a Tonelli Hamiltonian and its Legendre dual.

    Evaluators are vectorized over leading axes: q and p (or v) have shape
    (..., dim), values come back with shape (...).  ``eval_grad`` returns
    (H_q, H_p); ``eval_hess`` returns the blocks (H_qq, H_qp, H_pp), each
    (..., dim, dim), with H_qp[i, j] = d2H / dq_i dp_j.  The (p, q) mixed
    block is recovered as H_qp transposed.
    """

    dim: int
    eval_H: Callable
    eval_grad: Callable
    eval_hess: Callable
    eval_L: Callable
    eval_Lv: Callable
    kind_tag: str = "custom"


@dataclass
class PhasePoint:
    """Point of T*T^d: torus position q (wrapped to [0,1)^d), covector p."""

    q: np.ndarray
    p: np.ndarray

    def __post_init__(self):
        self.q = wrap_torus(np.atleast_1d(np.asarray(self.q, dtype=float)))
        self.p = np.atleast_1d(np.asarray(self.p, dtype=float))
        if self.q.shape != self.p.shape:
            raise ValueError("q and p must have the same shape")
        if not np.all(np.isfinite(self.p)):
            raise ValueError("momentum must be finite")


@dataclass
class TangentFrame:
    """d columns of tangent vectors, split into horizontal X and vertical Y.

    The carried plane is the column span of the stacked [X; Y] (2d x d).
    """

    X: np.ndarray
    Y: np.ndarray

    def __post_init__(self):
        self.X = np.atleast_2d(np.asarray(self.X, dtype=float))
        self.Y = np.atleast_2d(np.asarray(self.Y, dtype=float))

    @classmethod
    def vertical(cls, dim):
        """The fiber direction: X = 0, Y = identity."""
        return cls(np.zeros((dim, dim)), np.eye(dim))

    def stacked(self):
        return np.vstack([self.X, self.Y])

    def lagrangian_defect(self):
        """Norm of X^T Y - Y^T X (zero exactly for Lagrangian planes)."""
        m = self.X.T @ self.Y - self.Y.T @ self.X
        return float(np.linalg.norm(m))

    def min_singular_value(self):
        return float(np.linalg.svd(self.stacked(), compute_uv=False)[-1])


@dataclass
class FlowParams:
    """Integration controls: discount rate, max step, local error per unit time."""

    lam: float = 0.0
    dt_max: float = np.inf
    tol: float = 1e-10

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("discount rate must be >= 0")
        if not self.dt_max > 0:
            raise ValueError("dt_max must be > 0")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")


# ----------------------------------------------------------------------
# Built-in models
# ----------------------------------------------------------------------
def mechanical_model(terms, dim=1, kind_tag="mechanical"):
    """Mechanical Hamiltonian H = |p|^2/2 + V(q) with a Fourier potential.

    ``terms`` is a list of (k, a, b): V(q) = sum a*cos(2 pi k.q) + b*sin(2 pi k.q),
    each k an integer vector of length ``dim`` (bare ints accepted for dim 1).
    """
    ks = []
    ca = []
    cb = []
    for k, a, b in terms:
        kvec = np.atleast_1d(np.asarray(k, dtype=float))
        if kvec.shape != (dim,):
            raise ValueError(f"wave vector {k} does not match dim={dim}")
        ks.append(kvec)
        ca.append(float(a))
        cb.append(float(b))
    ks = np.asarray(ks, dtype=float).reshape(len(terms), dim)
    ca = np.asarray(ca)
    cb = np.asarray(cb)

    def V(q):
        q = np.asarray(q, dtype=float)
        if not terms:
            return np.zeros(q.shape[:-1])
        phase = TWO_PI * (q @ ks.T)
        return np.cos(phase) @ ca + np.sin(phase) @ cb

    def V_grad(q):
        q = np.asarray(q, dtype=float)
        if not terms:
            return np.zeros_like(q)
        phase = TWO_PI * (q @ ks.T)
        coef = -np.sin(phase) * ca + np.cos(phase) * cb
        return TWO_PI * (coef @ ks)

    def V_hess(q):
        q = np.asarray(q, dtype=float)
        out_shape = q.shape[:-1] + (dim, dim)
        if not terms:
            return np.zeros(out_shape)
        phase = TWO_PI * (q @ ks.T)
        coef = -np.cos(phase) * ca - np.sin(phase) * cb
        kk = ks[:, :, None] * ks[:, None, :]
        return TWO_PI**2 * np.einsum("...m,mij->...ij", coef, kk)

    def eval_H(q, p):
        p = np.asarray(p, dtype=float)
        return 0.5 * np.sum(p * p, axis=-1) + V(q)

    def eval_grad(q, p):
        p = np.asarray(p, dtype=float)
        return V_grad(q), p.copy()

    def eval_hess(q, p):
        q = np.asarray(q, dtype=float)
        shape = q.shape[:-1] + (dim, dim)
        zero = np.zeros(shape)
        eye = np.broadcast_to(np.eye(dim), shape).copy()
        return V_hess(q), zero, eye

    def eval_L(q, v):
        v = np.asarray(v, dtype=float)
        return 0.5 * np.sum(v * v, axis=-1) - V(q)

    def eval_Lv(q, v):
        return np.asarray(v, dtype=float).copy()

    return HamiltonianModel(dim, eval_H, eval_grad, eval_hess, eval_L, eval_Lv, kind_tag)


def pendulum_model():
    """H(q, p) = p^2/2 + cos(2 pi q) on T^1 x R."""
    return mechanical_model([(1, 1.0, 0.0)], dim=1, kind_tag="pendulum")


def free_model(dim=1):
    """H(q, p) = |p|^2/2 (zero potential)."""
    return mechanical_model([], dim=dim, kind_tag="free")


def model_from_name(name, dim=1):
    """Build a model from its selector string.

    Accepted forms: "pendulum", "free", "mechanical:<json>" where <json> is
    a list of [k, a, b] Fourier terms (k an integer or integer list).
    """
    import json as _json

    if name == "pendulum":
        if dim != 1:
            raise ValueError("pendulum model is 1-dimensional")
        return pendulum_model()
    if name == "free":
        return free_model(dim)
    if name.startswith("mechanical:"):
        try:
            terms = _json.loads(name[len("mechanical:"):])
            terms = [(t[0], t[1], t[2]) for t in terms]
        except Exception as exc:
            raise ValueError(f"bad mechanical potential spec: {exc}") from exc
        return mechanical_model(terms, dim=dim)
    raise ValueError(f"unknown model name: {name!r}")


def reversed_model(model):
    """Velocity-reversed twin: Lagrangian (q, v) -> L(q, -v), H(q, p) -> H(q, -p)."""
    def eval_H(q, p):
        return model.eval_H(q, -np.asarray(p, dtype=float))

    def eval_grad(q, p):
        hq, hp = model.eval_grad(q, -np.asarray(p, dtype=float))
        return hq, -hp

    def eval_hess(q, p):
        hqq, hqp, hpp = model.eval_hess(q, -np.asarray(p, dtype=float))
        return hqq, -hqp, hpp

    def eval_L(q, v):
        return model.eval_L(q, -np.asarray(v, dtype=float))

    def eval_Lv(q, v):
        return -model.eval_Lv(q, -np.asarray(v, dtype=float))

    return HamiltonianModel(model.dim, eval_H, eval_grad, eval_hess, eval_L, eval_Lv,
                            model.kind_tag + "~reversed")


def shifted_model(model, c):
    """Momentum-shift twin H'(q, p) = H(q, p + c); its Lagrangian is L - c.v.

    This is the Hamiltonian seen by the cohomology-modified problem with
    constant form c, so its conformal flow carries the characteristics of
    the modified semi-group in the shifted momentum p - c.
    """
    c = np.atleast_1d(np.asarray(c, dtype=float))
    if c.shape != (model.dim,):
        raise ValueError("form vector must have length dim")

    def eval_H(q, p):
        return model.eval_H(q, np.asarray(p, dtype=float) + c)

    def eval_grad(q, p):
        return model.eval_grad(q, np.asarray(p, dtype=float) + c)

    def eval_hess(q, p):
        return model.eval_hess(q, np.asarray(p, dtype=float) + c)

    def eval_L(q, v):
        v = np.asarray(v, dtype=float)
        return model.eval_L(q, v) - v @ c

    def eval_Lv(q, v):
        return model.eval_Lv(q, v) - c

    return HamiltonianModel(model.dim, eval_H, eval_grad, eval_hess, eval_L, eval_Lv,
                            model.kind_tag + "~shifted")


def validate_model(model, rng, n_samples=50, p_scale=2.0):
    """Spot-check model invariants on random phase points.

    Returns a dict of worst-case defects: Cholesky success of H_pp,
    Legendre round-trip error, and Hessian block symmetry.
    """
    defects = {"legendre": 0.0, "sym_qq": 0.0, "sym_pp": 0.0}
    for _ in range(n_samples):
        q = rng.random(model.dim)
        p = p_scale * rng.standard_normal(model.dim)
        hqq, hqp, hpp = model.eval_hess(q, p)
        np.linalg.cholesky(hpp)  # raises if not positive definite
        defects["sym_qq"] = max(defects["sym_qq"], float(np.max(np.abs(hqq - hqq.T))))
        defects["sym_pp"] = max(defects["sym_pp"], float(np.max(np.abs(hpp - hpp.T))))
        _, hp = model.eval_grad(q, p)
        p_back = model.eval_Lv(q, hp)
        defects["legendre"] = max(defects["legendre"], float(np.max(np.abs(p_back - p))))
    return defects


# ----------------------------------------------------------------------
# Legendre transform
# ----------------------------------------------------------------------
def legendre(model, x):
    """(q, p) -> (q, v) with v = dH/dp(q, p)."""
    _, hp = model.eval_grad(x.q, x.p)
    if not np.all(np.isfinite(hp)):
        raise EvaluationError("non-finite dH/dp in Legendre map")
    return x.q.copy(), hp


def legendre_inverse(model, q, v):
    """(q, v) -> (q, p) with p = dL/dv(q, v)."""
    q = np.atleast_1d(np.asarray(q, dtype=float))
    v = np.atleast_1d(np.asarray(v, dtype=float))
    p = model.eval_Lv(q, v)
    if not np.all(np.isfinite(p)):
        raise EvaluationError("non-finite dL/dv in inverse Legendre map")
    return PhasePoint(q, p)


# ----------------------------------------------------------------------
# Flow integration
# ----------------------------------------------------------------------
def _flow_rhs(model, lam):
    d = model.dim

    def rhs(t, y):
        hq, hp = model.eval_grad(y[:d], y[d:])
        return np.concatenate([hp, -hq - lam * y[d:]])

    return rhs


def _run_ivp(rhs, y0, t, params, events=None):
    sol = solve_ivp(
        rhs,
        (0.0, t),
        y0,
        method="RK45",
        rtol=params.tol,
        atol=params.tol * 1e-2,
        max_step=params.dt_max,
        dense_output=True,
        events=events,
    )
    if sol.status == -1 or not np.all(np.isfinite(sol.y[:, -1])):
        raise IntegrationError("flow integration failed", t_reached=sol.t[-1])
    return sol


def integrate_flow(model, x, t, params):
    """phi_t^lambda(x) by adaptive embedded Runge-Kutta (negative t = backward)."""
    if not np.isfinite(t):
        raise ValueError("t must be finite")
    if t == 0.0:
        return PhasePoint(x.q.copy(), x.p.copy())
    d = model.dim
    sol = _run_ivp(_flow_rhs(model, params.lam), np.concatenate([x.q, x.p]), t, params)
    y = sol.y[:, -1]
    return PhasePoint(y[:d], y[d:])


def flow_solution(model, x, t, params):
    """Dense flow solution on [0, t] (or [t, 0] for t < 0); returns the ivp result.

    The interpolant ``sol.sol(s)`` gives [q(s), p(s)] with q unreduced; wrap
    before use on the torus if needed.
    """
    if t == 0.0:
        raise ValueError("dense solution needs t != 0")
    return _run_ivp(_flow_rhs(model, params.lam), np.concatenate([x.q, x.p]), t, params)


def variational_rhs(model, lam):
    """Joint RHS for (q, p, X, Y): the flow plus its linearization.

    Columns of (X, Y) evolve by  Xdot = H_pq X + H_pp Y,
    Ydot = -H_qq X - H_qp Y - lambda Y,  with H_pq = H_qp^T.
    """
    d = model.dim

    def rhs(t, y):
        q, p = y[:d], y[d:2 * d]
        hq, hp = model.eval_grad(q, p)
        hqq, hqp, hpp = model.eval_hess(q, p)
        X = y[2 * d:2 * d + d * d].reshape(d, d)
        Y = y[2 * d + d * d:].reshape(d, d)
        Xdot = hqp.T @ X + hpp @ Y
        Ydot = -hqq @ X - hqp @ Y - lam * Y
        return np.concatenate([hp, -hq - lam * p, Xdot.ravel(), Ydot.ravel()])

    return rhs


def integrate_with_tangent(model, x, t, params, frame):
    """Propagate a phase point together with a tangent frame for time t."""
    d = model.dim
    if frame.min_singular_value() < 1e-12:
        raise FrameDegenerateError("input frame is rank deficient")
    if t == 0.0:
        return PhasePoint(x.q.copy(), x.p.copy()), TangentFrame(frame.X.copy(), frame.Y.copy())
    y0 = np.concatenate([x.q, x.p, frame.X.ravel(), frame.Y.ravel()])
    sol = _run_ivp(variational_rhs(model, params.lam), y0, t, params)
    y = sol.y[:, -1]
    out = TangentFrame(y[2 * d:2 * d + d * d].reshape(d, d), y[2 * d + d * d:].reshape(d, d))
    if out.min_singular_value() < 1e-12 * max(1.0, np.linalg.norm(out.stacked())):
        raise FrameDegenerateError("frame lost rank during propagation")
    return PhasePoint(y[:d], y[d:2 * d]), out


# ----------------------------------------------------------------------
# Euler-Lagrange residual
# ----------------------------------------------------------------------
def euler_lagrange_residual(model, qs, vs, dt, lam=0.0):
    """Max finite-difference residual of d/dt(L_v) - L_q + lambda L_v over interior nodes.

    The curve is sampled on a uniform mesh with spacing dt: qs, vs have
    shape (m, dim) with m >= 5.  L_q is obtained from the Legendre identity
    L_q(q, v) = -H_q(q, L_v(q, v)).
    """
    qs = np.atleast_2d(np.asarray(qs, dtype=float).reshape(-1, model.dim))
    vs = np.atleast_2d(np.asarray(vs, dtype=float).reshape(-1, model.dim))
    if qs.shape[0] < 5:
        raise ValueError("need at least 5 mesh nodes")
    lv = model.eval_Lv(qs, vs)
    hq, _ = model.eval_grad(qs, lv)
    lq = -hq
    dlv = (lv[2:] - lv[:-2]) / (2.0 * dt)
    res = dlv - lq[1:-1] + lam * lv[1:-1]
    return float(np.max(np.linalg.norm(res, axis=-1)))


# ----------------------------------------------------------------------
# A priori velocity bound
# ----------------------------------------------------------------------
def _unit_directions(dim):
    if dim == 1:
        return np.array([[1.0], [-1.0]])
    if dim == 2:
        ang = np.linspace(0.0, 2.0 * np.pi, 16, endpoint=False)
        return np.stack([np.cos(ang), np.sin(ang)], axis=-1)
    dirs = []
    for vec in np.ndindex(*(3,) * dim):
        v = np.array(vec, dtype=float) - 1.0
        if np.any(v):
            dirs.append(v / np.linalg.norm(v))
    return np.asarray(dirs)


def _q_grid(dim, n):
    axes = np.meshgrid(*([np.arange(n) / n] * dim), indexing="ij")
    return np.stack(axes, axis=-1).reshape(-1, dim)


def _raw_velocity_bound(model, t, lam, qs, dirs, cap):
    diam = np.sqrt(model.dim) / 2.0
    v0 = diam / t
    # max of L over the comparison ball ||v|| <= diam/t (convexity: on the sphere)
    cand = qs[:, None, :] + 0.0 * dirs[None, :, :]
    lmax = float(np.max(model.eval_L(cand, v0 * np.broadcast_to(dirs, cand.shape))))
    lmax = max(lmax, float(np.max(model.eval_L(qs, np.zeros_like(qs)))))
    m_l = max(lmax, 0.0)
    eps = 0.1 * (1.0 + m_l)
    threshold = (m_l + eps) * (1.0 + np.exp((lam + eps) * t)) + eps
    r = 2.0 * v0
    while True:
        lmin = float(np.min(model.eval_L(cand, r * np.broadcast_to(dirs, cand.shape))))
        if lmin >= threshold:
            return r
        r *= 2.0
        if r > cap:
            raise UnboundedModelError(
                f"no speed below {cap:g} dominates the action threshold {threshold:g}")


def velocity_bound(model, t, lam=0.0, n_qgrid=48, cap=1e9):
    """Speed bound for minimizers over any horizon >= t.

    Uses the superlinearity threshold with eps = 0.1*(1 + M_L) and a
    doubling search in ||v||.  Because a bound valid at horizon s also
    bounds minimizers over any longer horizon, the result is minimized
    over the power-of-two horizons s = 2^k <= t, which makes it exactly
    non-increasing in t.
    """
    if not t > 0:
        raise ValueError("horizon must be > 0")
    qs = _q_grid(model.dim, max(8, n_qgrid // model.dim))
    dirs = _unit_directions(model.dim)
    horizons = [t]
    s = 2.0 ** np.floor(np.log2(t))
    while s >= 2.0 ** -6:
        if s < t:
            horizons.append(s)
        s /= 2.0
    return min(_raw_velocity_bound(model, s, lam, qs, dirs, cap) for s in horizons)
