"""Pushed-vertical planes, Green bundles, and conjugate-point detection.

A plane transverse to the vertical is recorded by its height: the symmetric
matrix S with the plane equal to {(dq, S dq)}.  Pushing the vertical fiber
at phi_{-t}(x) forward to x gives the plane G_t(x) with height Y X^{-1},
where (X, Y) solves the variational equations seeded at (0, I).

For numerical stability the base orbit is integrated once (backward for
G_t with t > 0, forward for negative durations) and stored as a dense
interpolant; the frame is then propagated along the stored path with
periodic QR renormalization, so hyperbolic growth never feeds back into
the base point.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import FlowParams, PhasePoint, flow_solution
from .grid import wrap_torus
from .semiconcave import numeric_gradient, numeric_hessian

__all__ = [
    "ConjugatePointError",
    "OrbitUnboundedError",
    "GreenMonotonicityError",
    "GreenResult",
    "ConjugateReport",
    "MonotonicityReport",
    "RegularityReport",
    "height_of_pushed_vertical",
    "riccati_height",
    "green_plus",
    "green_minus",
    "monotonicity_check",
    "check_height_monotonicity",
    "detect_conjugate_points",
    "upper_green_regularity_test",
    "symmetrize",
]


class ConjugatePointError(RuntimeError):
    """det X vanished strictly inside the propagation window."""

    def __init__(self, time):
        super().__init__(f"conjugate point at t = {time:.8f}")
        self.time = time


class OrbitUnboundedError(RuntimeError):
    """The monitored orbit left the configured momentum ball."""


class GreenMonotonicityError(RuntimeError):
    """Heights failed to be monotone along a doubling sweep (numerical breakdown)."""


@dataclass
class GreenResult:
    """Limit-height estimate from a doubling sweep of pushed verticals."""

    height: np.ndarray
    t_used: float
    converged: bool
    cauchy_gap: float


@dataclass
class ConjugateReport:
    """Zero crossings of det X on a window, sorted, with the smallest |det X| seen."""

    times: list
    min_abs_det: float


@dataclass
class MonotonicityReport:
    ok: bool
    worst_margin: float
    details: list = field(default_factory=list)


@dataclass
class RegularityReport:
    """Per-sample |H(G) - D2u| plus the fraction exceeding the tolerance."""

    discrepancies: np.ndarray
    exceed_fraction: float
    invalid_count: int
    sample_indices: np.ndarray


def symmetrize(S):
    return 0.5 * (S + S.T)


def _spectral_norm(S):
    return float(np.max(np.abs(np.linalg.eigvalsh(symmetrize(S)))))


def _eig_min(S):
    return float(np.min(np.linalg.eigvalsh(symmetrize(S))))


# ----------------------------------------------------------------------
# Frame propagation along a stored base path
# ----------------------------------------------------------------------
def _propagate_frame_on_path(model, path, span, lam, X0, Y0, tol,
                             direction=1.0, skip=1e-6, chunk=None):
    """Integrate the variational equations for (X, Y) along a known base path.

    ``path(s)`` returns (q, p) for s in [0, span]; the frame ODE is driven
    with d/ds = direction * (variational field), so direction = -1 runs the
    linearization backward in physical time.  Frames are QR-renormalized at
    chunk boundaries (plane-preserving, det-sign-preserving).  Returns
    (X, Y, crossing_times, min_abs_det) with crossings of det X located by
    the integrator's root finder, ignoring s <= skip.
    """
    d = model.dim
    # a vertical seed leaves with X ~ (direction * s) H_pp, so det X starts
    # with this sign; the event placeholder below must match it to avoid a
    # spurious crossing at the skip boundary.
    start_sign = float(direction) ** d

    def rhs(s, z):
        q, p = path(s)
        hqq, hqp, hpp = model.eval_hess(q, p)
        X = z[:d * d].reshape(d, d)
        Y = z[d * d:].reshape(d, d)
        Xdot = hqp.T @ X + hpp @ Y
        Ydot = -hqq @ X - hqp @ Y - lam * Y
        return direction * np.concatenate([Xdot.ravel(), Ydot.ravel()])

    def det_event(s, z):
        if s <= skip:
            return start_sign
        return np.linalg.det(z[:d * d].reshape(d, d))

    det_event.terminal = False
    det_event.direction = 0

    # renormalization cadence: frequent enough to stop hyperbolic overflow,
    # coarse enough that long non-hyperbolic sweeps stay cheap; a chunk whose
    # frame leaves the safe range is retried in halves.
    if chunk is None:
        chunk = min(16.0, max(1.0, span / 64.0))

    X, Y = np.array(X0, dtype=float), np.array(Y0, dtype=float)
    crossings = []
    min_abs_det = np.inf
    s = 0.0
    step = chunk
    while s < span - 1e-14:
        s_next = min(s + step, span)
        sol = solve_ivp(rhs, (s, s_next), np.concatenate([X.ravel(), Y.ravel()]),
                        method="RK45", rtol=tol, atol=tol, dense_output=True,
                        events=det_event)
        z = sol.y[:, -1]
        if sol.status == -1 or not np.all(np.isfinite(z)):
            if s_next - s > 1e-6:
                step = (s_next - s) / 2.0
                continue
            raise RuntimeError(f"frame propagation failed near s = {sol.t[-1]:.6g}")
        crossings.extend(float(te) for te in sol.t_events[0])
        for ss in np.linspace(s, s_next, 33)[1:]:
            dd = abs(np.linalg.det(sol.sol(ss)[:d * d].reshape(d, d)))
            if ss > skip:
                min_abs_det = min(min_abs_det, dd)
        X = z[:d * d].reshape(d, d)
        Y = z[d * d:].reshape(d, d)
        # renormalize: right-multiply by R^{-1} from QR of the stacked frame.
        Q, R = np.linalg.qr(np.vstack([X, Y]))
        signs = np.sign(np.diag(R))
        signs[signs == 0] = 1.0
        Q = Q * signs
        X, Y = Q[:d], Q[d:]
        s = s_next
        step = chunk
    return X, Y, sorted(crossings), float(min_abs_det)


def _backward_path(model, x, t, lam, tol, p_cap):
    """Dense backward orbit of x over [-t, 0], reparametrized to s in [0, t].

    path(s) is the orbit point at physical time s - t (so s = t is x).
    """
    params = FlowParams(lam=lam, tol=tol)
    sol = flow_solution(model, x, -t, params)
    d = model.dim
    pmax = float(np.max(np.abs(sol.y[d:, :])))
    if pmax > p_cap:
        raise OrbitUnboundedError(f"backward orbit momentum reached {pmax:.3g}")

    def path(s):
        y = sol.sol(-(t - s))
        return y[:d], y[d:]

    return path


def _forward_path(model, x, t, lam, tol, p_cap):
    """Dense forward orbit over [0, t]; path(s) is the point at time t - s."""
    params = FlowParams(lam=lam, tol=tol)
    sol = flow_solution(model, x, t, params)
    d = model.dim
    pmax = float(np.max(np.abs(sol.y[d:, :])))
    if pmax > p_cap:
        raise OrbitUnboundedError(f"forward orbit momentum reached {pmax:.3g}")

    def path(s):
        y = sol.sol(t - s)
        return y[:d], y[d:]

    return path


def _height_from_frame(X, Y):
    """Height Y X^{-1} of the carried plane plus its pre-symmetrization defect."""
    S = np.linalg.solve(X.T, Y.T).T
    asym = float(np.max(np.abs(S - S.T)))
    return symmetrize(S), asym


def height_of_pushed_vertical(model, x, t, lam=0.0, tol=1e-10, p_cap=1e6):
    """Height of G_t(x): the vertical at phi_{-t}(x) pushed forward to x.

    Requires t > 0 and no conjugate point on (0, t]; a sign change of det X
    strictly inside the window raises ConjugatePointError with the time.
    """
    if not t > 0:
        raise ValueError("duration must be > 0")
    path = _backward_path(model, x, t, lam, tol, p_cap)
    X, Y, crossings, _ = _propagate_frame_on_path(
        model, path, t, lam, np.zeros((model.dim,) * 2), np.eye(model.dim), tol)
    interior = [c for c in crossings if c < t - 1e-10]
    if interior:
        raise ConjugatePointError(interior[0])
    S, _ = _height_from_frame(X, Y)
    return S


def height_of_negative_duration(model, x, t, lam=0.0, tol=1e-10, p_cap=1e6):
    """Height of G_{-t}(x), t > 0: the vertical at phi_t(x) pushed backward to x."""
    if not t > 0:
        raise ValueError("duration must be > 0")
    path = _forward_path(model, x, t, lam, tol, p_cap)
    X, Y, crossings, _ = _propagate_frame_on_path(
        model, path, t, lam, np.zeros((model.dim,) * 2), np.eye(model.dim), tol,
        direction=-1.0)
    interior = [c for c in crossings if c < t - 1e-10]
    if interior:
        raise ConjugatePointError(interior[0])
    S, _ = _height_from_frame(X, Y)
    return S


def riccati_height(model, x, t, lam=0.0, s0=1e-4, tol=1e-10, p_cap=1e6):
    """Independent route to H(G_t(x)): integrate the matrix Riccati equation

        dS/ds = -H_qq - H_qp S - S H_pq - S H_pp S - lambda S

    along the same backward-stored orbit, seeded with the small-duration
    asymptote S(s0) = H_pp^{-1} / s0.
    """
    if not t > s0 > 0:
        raise ValueError("need t > s0 > 0")
    d = model.dim
    path = _backward_path(model, x, t, lam, tol, p_cap)
    q0, p0 = path(s0)
    _, _, hpp0 = model.eval_hess(q0, p0)
    S0 = np.linalg.inv(hpp0) / s0

    def rhs(s, z):
        q, p = path(s)
        hqq, hqp, hpp = model.eval_hess(q, p)
        S = z.reshape(d, d)
        dS = -hqq - hqp @ S - S @ hqp.T - S @ hpp @ S - lam * S
        return dS.ravel()

    sol = solve_ivp(rhs, (s0, t), S0.ravel(), method="RK45", rtol=tol, atol=tol)
    if sol.status != 0:
        raise RuntimeError("Riccati integration failed (conjugate point in window?)")
    return symmetrize(sol.y[:, -1].reshape(d, d))


# ----------------------------------------------------------------------
# Green bundles by doubling sweeps
# ----------------------------------------------------------------------
def _doubling_sweep(model, x, lam, t_max, tol, t0, side, flow_tol, p_cap):
    heights = []
    t = t0
    last = None
    gap = np.inf
    mono_worst = 0.0
    while t <= t_max * (1 + 1e-12):
        if side > 0:
            S = height_of_pushed_vertical(model, x, t, lam, tol=flow_tol, p_cap=p_cap)
        else:
            S = height_of_negative_duration(model, x, t, lam, tol=flow_tol, p_cap=p_cap)
        heights.append((t, S))
        if last is not None:
            # G_t decreases toward G_+ as t grows; G_{-t} increases toward G_-.
            step = (last - S) if side > 0 else (S - last)
            mono_worst = min(mono_worst, _eig_min(step))
            slack = 1e-7 * (1.0 + _spectral_norm(last))
            if _eig_min(step) < -slack:
                raise GreenMonotonicityError(
                    f"height sweep lost monotonicity at t = {t:g} "
                    f"(eig margin {_eig_min(step):.3e})")
            gap = _spectral_norm(S - last)
            if gap <= tol:
                return GreenResult(S, t, True, gap), heights
        last = S
        t *= 2.0
    return GreenResult(last, t / 2.0, False, gap), heights


def green_plus(model, x, lam=0.0, t_max=2.0**14, tol=1e-6, t0=1.0,
               flow_tol=1e-10, p_cap=1e6):
    """Limit of H(G_t(x)) over a doubling schedule t in {t0, 2 t0, ...}.

    Heights must decrease (matrix order) along the sweep; convergence is the
    Cauchy gap between successive heights dropping below tol.  A conjugate
    point on the backward orbit raises; failure to converge by t_max only
    clears the flag.
    """
    result, _ = _doubling_sweep(model, x, lam, t_max, tol, t0, +1, flow_tol, p_cap)
    return result


def green_minus(model, x, lam=0.0, t_max=2.0**14, tol=1e-6, t0=1.0,
                flow_tol=1e-10, p_cap=1e6):
    """Mirror of green_plus along the forward orbit; heights increase toward G_-."""
    result, _ = _doubling_sweep(model, x, lam, t_max, tol, t0, -1, flow_tol, p_cap)
    return result


# ----------------------------------------------------------------------
# Monotonicity checking
# ----------------------------------------------------------------------
def check_height_monotonicity(plus, minus, tol=1e-7):
    """Order checks on sampled heights; pure so fixtures can be injected.

    ``plus``/``minus`` are lists of (duration, height) with positive
    durations ascending; plus-heights must decrease, minus-heights increase,
    and every plus-height must dominate every minus-height.  Violations are
    collected in the report, not raised.
    """
    details = []
    worst = np.inf
    for (t1, s1), (t2, s2) in zip(plus, plus[1:]):
        m = _eig_min(s1 - s2)
        worst = min(worst, m)
        if m < -tol:
            details.append(f"G_{t1:g} > G_{t2:g} fails (eig margin {m:.3e})")
    for (t1, s1), (t2, s2) in zip(minus, minus[1:]):
        m = _eig_min(s2 - s1)
        worst = min(worst, m)
        if m < -tol:
            details.append(f"G_-{t2:g} > G_-{t1:g} fails (eig margin {m:.3e})")
    if plus and minus:
        m = _eig_min(plus[-1][1] - minus[-1][1])
        worst = min(worst, m)
        if m < -tol:
            details.append(f"positive/negative-side ordering fails (eig margin {m:.3e})")
    if worst is np.inf:
        worst = 0.0
    return MonotonicityReport(ok=not details, worst_margin=float(worst), details=details)


def monotonicity_check(model, x, lam, times, tol=1e-7, flow_tol=1e-10, p_cap=1e6):
    """Sample H(G_{+-t}(x)) at the given positive durations and order-check them."""
    times = sorted(float(t) for t in times)
    if not times or times[0] <= 0:
        raise ValueError("durations must be positive")
    plus = [(t, height_of_pushed_vertical(model, x, t, lam, tol=flow_tol, p_cap=p_cap))
            for t in times]
    minus = [(t, height_of_negative_duration(model, x, t, lam, tol=flow_tol, p_cap=p_cap))
             for t in times]
    return check_height_monotonicity(plus, minus, tol=tol)


def detect_conjugate_points(model, x, lam, t, flow_tol=1e-10, p_cap=1e6):
    """Zero crossings of det X on [0, t] for the vertical frame seeded at x.

    Crossing times come from the integrator's event root finder (resolution
    well below 1e-8); an empty list means no conjugate point on the window.
    """
    if not t > 0:
        raise ValueError("window length must be > 0")
    params = FlowParams(lam=lam, tol=flow_tol)
    sol = flow_solution(model, x, t, params)
    d = model.dim
    if float(np.max(np.abs(sol.y[d:, :]))) > p_cap:
        raise OrbitUnboundedError("orbit momentum exceeded the configured cap")

    def path(s):
        y = sol.sol(s)
        return y[:d], y[d:]

    _, _, crossings, min_det = _propagate_frame_on_path(
        model, path, t, lam, np.zeros((d, d)), np.eye(d), flow_tol)
    return ConjugateReport(times=[c for c in crossings if c < t - 1e-10],
                           min_abs_det=min_det)


# ----------------------------------------------------------------------
# Green regularity of solution fields
# ----------------------------------------------------------------------
def _limit_height_on_free_window(fn, model, x, lam, t_max, green_tol):
    """Green limit for one sample, shrinking to the conjugate-free window.

    Grid-sampled solution fields sit O(h^2) off the invariant set, so their
    orbits may hit a conjugate point at some finite time even though the
    underlying field has none.  The heights on the window before that time
    are still Cauchy-converged proxies of the limit (hyperbolic shadowing),
    so on a conjugate interruption the sweep retries capped just below the
    crossing.  Returns None when no converged value is obtainable.
    """
    t_hi = t_max
    for _ in range(4):
        try:
            res = fn(model, x, lam=lam, t_max=t_hi, tol=green_tol,
                     t0=min(1.0, t_hi / 4.0))
            return res.height if res.converged else None
        except ConjugatePointError as err:
            t_hi = 0.9 * err.time
            if t_hi < 0.25:
                return None
        except (OrbitUnboundedError, GreenMonotonicityError):
            return None
    return None


def upper_green_regularity_test(model, u, tol, sample_indices=None, c=0.0, lam=0.0,
                                side="plus", t_max=256.0, green_tol=1e-5,
                                max_samples=None):
    """Compare H(G_+(theta, c + du)) with the grid Hessian D2u of a solution field.

    Only grid points carrying a stable (Alexandrov-masked) Hessian and a
    reliable gradient are sampled; a sample whose orbit yields no converged
    limit height (conjugate point too early, unbounded orbit, no Cauchy
    convergence) is excluded and counted.  Returns the per-sample height
    discrepancies and the fraction exceeding ``tol`` (a proxy for the
    measure of the irregular set).  Use side="minus" for the
    lower-regularity variant.
    """
    from .dynamics import shifted_model  # local import to keep module deps one-way

    gf = numeric_gradient(u)
    hf = numeric_hessian(u)
    mask = hf.alexandrov & gf.reliable.reshape(hf.alexandrov.shape)
    idx_all = np.flatnonzero(mask.ravel())
    if sample_indices is not None:
        idx = np.asarray(sample_indices, dtype=int)
        idx = idx[mask.ravel()[idx]]
    else:
        idx = idx_all
    if max_samples is not None and idx.size > max_samples:
        stride = int(np.ceil(idx.size / max_samples))
        idx = idx[::stride]

    coords = u.grid_coords().reshape(-1, u.dim)
    grads = gf.grad.reshape(-1, u.dim)
    hesss = hf.values.reshape(-1, u.dim, u.dim)
    work = shifted_model(model, np.atleast_1d(c) * np.ones(u.dim)) if np.any(c) else model
    fn = green_plus if side == "plus" else green_minus

    discrepancies = []
    kept = []
    invalid = 0
    for i in idx:
        # the shifted model flows the reduced momentum p - c, i.e. du itself
        x = PhasePoint(coords[i], grads[i])
        height = _limit_height_on_free_window(fn, work, x, lam, t_max, green_tol)
        if height is None:
            invalid += 1
            continue
        discrepancies.append(_spectral_norm(height - hesss[i]))
        kept.append(i)
    discrepancies = np.asarray(discrepancies)
    exceed = float(np.mean(discrepancies > tol)) if discrepancies.size else 0.0
    return RegularityReport(discrepancies, exceed, invalid, np.asarray(kept, dtype=int))
