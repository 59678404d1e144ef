import numpy as np
import pytest

from weakkam import dynamics
from weakkam.dynamics import (FlowParams, HamiltonianModel, IntegrationError,
                              PhasePoint, TangentFrame, UnboundedModelError,
                              euler_lagrange_residual, free_model,
                              integrate_flow, integrate_with_tangent, legendre,
                              legendre_inverse, mechanical_model,
                              model_from_name, reversed_model, shifted_model,
                              validate_model, velocity_bound)

TOL = 1e-10


# ----------------------------------------------------------------------
# models
# ----------------------------------------------------------------------
def test_model_invariants_on_random_samples(pendulum, free, rng):
    for model in (pendulum, free, mechanical_model([(1, 0.3, 0.1), (2, -0.2, 0.0)])):
        defects = validate_model(model, rng)
        assert defects["legendre"] < 1e-10
        assert defects["sym_qq"] < 1e-12
        assert defects["sym_pp"] < 1e-12


def test_pendulum_potential_values(pendulum):
    q = np.array([0.0])
    assert pendulum.eval_H(q, np.array([0.0])) == pytest.approx(1.0)
    assert pendulum.eval_H(np.array([0.5]), np.array([0.0])) == pytest.approx(-1.0)
    assert pendulum.eval_L(q, np.array([2.0])) == pytest.approx(2.0 - 1.0)


def test_model_from_name_parsing():
    assert model_from_name("pendulum").kind_tag == "pendulum"
    assert model_from_name("free", dim=2).dim == 2
    m = model_from_name("mechanical:[[1, 1.0, 0.0]]")
    q = np.array([0.3])
    assert m.eval_H(q, np.array([0.0])) == pytest.approx(np.cos(2 * np.pi * 0.3))
    with pytest.raises(ValueError):
        model_from_name("mechanical:not json")
    with pytest.raises(ValueError):
        model_from_name("rotor")
    with pytest.raises(ValueError):
        model_from_name("pendulum", dim=2)


def test_phase_point_wraps_and_validates():
    x = PhasePoint(1.25, 0.5)
    assert x.q[0] == pytest.approx(0.25)
    with pytest.raises(ValueError):
        PhasePoint(0.0, np.inf)


# ----------------------------------------------------------------------
# Legendre transform
# ----------------------------------------------------------------------
def test_legendre_trivial_examples(pendulum):
    mech = mechanical_model([(1, 0.5, 0.0)])
    q, v = legendre(mech, PhasePoint(0.4, 0.3))
    assert q[0] == pytest.approx(0.4) and v[0] == pytest.approx(0.3)
    q, v = legendre(pendulum, PhasePoint(0.0, 0.0))
    assert v[0] == 0.0
    x = legendre_inverse(pendulum, 0.25, -1.0)
    assert x.q[0] == pytest.approx(0.25) and x.p[0] == pytest.approx(-1.0)


def test_legendre_round_trip_random(pendulum, rng):
    worst = 0.0
    for _ in range(100):
        x = PhasePoint(rng.random(1), 3.0 * rng.standard_normal(1))
        q, v = legendre(pendulum, x)
        back = legendre_inverse(pendulum, q, v)
        worst = max(worst, abs(back.p[0] - x.p[0]), abs(back.q[0] - x.q[0]))
    assert worst < 1e-10


# ----------------------------------------------------------------------
# flow
# ----------------------------------------------------------------------
def test_free_flow_straight_line(free):
    y = integrate_flow(free, PhasePoint(0.2, 0.5), 1.0, FlowParams())
    assert y.q[0] == pytest.approx(0.7, abs=1e-10)
    assert y.p[0] == pytest.approx(0.5, abs=1e-12)


def test_discounted_free_flow_closed_form(free):
    # closed form of qdot = p, pdot = -p from (0, 1)
    y = integrate_flow(free, PhasePoint(0.0, 1.0), 1.0, FlowParams(lam=1.0))
    assert y.q[0] == pytest.approx(1.0 - np.exp(-1.0), abs=1e-8)
    assert y.p[0] == pytest.approx(np.exp(-1.0), abs=1e-8)


def test_pendulum_fixed_point_stays(pendulum):
    for t in (0.5, -2.0, 7.0):
        y = integrate_flow(pendulum, PhasePoint(0.0, 0.0), t, FlowParams())
        assert abs(y.q[0]) < 1e-12 and abs(y.p[0]) < 1e-12


def test_energy_drift_composition_inversion(pendulum, rng):
    params = FlowParams(tol=TOL)
    for _ in range(5):
        x = PhasePoint(rng.random(1), rng.uniform(-2.5, 2.5, size=1))
        e0 = pendulum.eval_H(x.q, x.p)
        for t in (1.0, 5.0, 10.0):
            y = integrate_flow(pendulum, x, t, params)
            assert abs(pendulum.eval_H(y.q, y.p) - e0) <= 10 * TOL * t + 1e-13
        s, t = rng.uniform(-2, 2, size=2)
        a = integrate_flow(pendulum, integrate_flow(pendulum, x, t, params), s, params)
        b = integrate_flow(pendulum, x, s + t, params)
        gap = abs(dynamics.nearest_image(a.q - b.q)[0]) + abs(a.p[0] - b.p[0])
        assert gap <= 10 * TOL * 10
        back = integrate_flow(pendulum, integrate_flow(pendulum, x, t, params), -t, params)
        gap = abs(dynamics.nearest_image(back.q - x.q)[0]) + abs(back.p[0] - x.p[0])
        assert gap <= 10 * TOL * 10


def test_integration_error_carries_reached_time():
    # a deliberately singular (non-Tonelli) field that blows up near q = 1/2
    def bad_grad(q, p):
        return np.atleast_1d(1.0 / (0.5 - q[..., 0]) ** 3), np.ones_like(np.atleast_1d(p))

    model = HamiltonianModel(
        dim=1,
        eval_H=lambda q, p: np.zeros(np.shape(q)[:-1]),
        eval_grad=bad_grad,
        eval_hess=lambda q, p: (np.zeros((1, 1)), np.zeros((1, 1)), np.eye(1)),
        eval_L=lambda q, v: np.zeros(np.shape(q)[:-1]),
        eval_Lv=lambda q, v: v,
        kind_tag="singular",
    )
    with pytest.raises(IntegrationError) as err:
        integrate_flow(model, PhasePoint(0.4, 0.0), 1.0, FlowParams(tol=1e-8))
    assert 0.0 <= err.value.t_reached <= 1.0


# ----------------------------------------------------------------------
# tangent propagation
# ----------------------------------------------------------------------
def test_tangent_free_closed_form(free):
    x = PhasePoint(0.0, 0.0)
    _, fr = integrate_with_tangent(free, x, 1.0, FlowParams(), TangentFrame.vertical(1))
    assert fr.X[0, 0] == pytest.approx(1.0, abs=1e-10)
    assert fr.Y[0, 0] == pytest.approx(1.0, abs=1e-12)


def test_tangent_identity_at_t_zero(pendulum):
    frame = TangentFrame(np.array([[2.0]]), np.array([[-1.0]]))
    y, fr = integrate_with_tangent(pendulum, PhasePoint(0.3, 0.7), 0.0, FlowParams(), frame)
    assert fr.X[0, 0] == 2.0 and fr.Y[0, 0] == -1.0
    assert y.q[0] == pytest.approx(0.3)


def test_symplectic_invariant_preserved(pendulum, rng):
    # X^T Y - Y^T X is conserved for lambda = 0 (vanishes on Lagrangian frames)
    params = FlowParams(tol=TOL)
    for _ in range(3):
        x = PhasePoint(rng.random(1), 2.0 * rng.standard_normal(1))
        frame = TangentFrame.vertical(1)
        for t in (1.0, 10.0):
            _, fr = integrate_with_tangent(pendulum, x, t, params, frame)
            assert fr.lagrangian_defect() < 1e-9 * max(1.0, np.linalg.norm(fr.stacked()))


def test_conformal_factor_scales_symplectic_form():
    # in d = 2 a non-Lagrangian frame has nonzero X^T Y - Y^T X, which the
    # discounted flow contracts by exactly e^{-lambda t}
    model = free_model(dim=2)
    lam, t = 0.3, 2.0
    X0 = np.eye(2)
    Y0 = np.array([[0.0, 1.0], [-1.0, 0.5]])
    frame = TangentFrame(X0, Y0)
    omega0 = X0.T @ Y0 - Y0.T @ X0
    _, fr = integrate_with_tangent(model, PhasePoint([0.1, 0.2], [0.3, -0.4]), t,
                                   FlowParams(lam=lam, tol=1e-11), frame)
    omega_t = fr.X.T @ fr.Y - fr.Y.T @ fr.X
    assert np.allclose(omega_t, np.exp(-lam * t) * omega0, atol=1e-9)


# ----------------------------------------------------------------------
# Euler-Lagrange residual
# ----------------------------------------------------------------------
def test_el_residual_constant_speed_line(free):
    ts = np.linspace(0, 1, 11)
    qs = (0.1 + 0.4 * ts).reshape(-1, 1)
    vs = np.full((11, 1), 0.4)
    assert euler_lagrange_residual(free, qs, vs, ts[1] - ts[0]) < 1e-12


def test_el_residual_on_integrated_orbit(pendulum):
    from weakkam.dynamics import flow_solution
    lam = 0.1
    sol = flow_solution(pendulum, PhasePoint(0.2, 1.7), 1.0, FlowParams(lam=lam, tol=1e-12))
    for h, bound in ((1e-2, 2e-2), (1e-3, 2e-4)):
        ts = np.arange(0.0, 1.0 + h / 2, h)
        ys = sol.sol(ts)
        qs, ps = ys[0].reshape(-1, 1), ys[1].reshape(-1, 1)
        vs = ps.copy()  # mechanical: v = p
        res = euler_lagrange_residual(pendulum, qs, vs, h, lam=lam)
        assert res < bound  # O(h^2) consistency


def test_el_residual_flags_non_solution(pendulum):
    ts = np.linspace(0, 1, 101)
    qs = (ts**2).reshape(-1, 1)
    vs = (2 * ts).reshape(-1, 1)
    assert euler_lagrange_residual(pendulum, qs, vs, ts[1] - ts[0], lam=0.1) > 0.5


def test_el_residual_needs_five_nodes(free):
    with pytest.raises(ValueError):
        euler_lagrange_residual(free, np.zeros((4, 1)), np.zeros((4, 1)), 0.1)


# ----------------------------------------------------------------------
# velocity bound
# ----------------------------------------------------------------------
def test_velocity_bound_free(free):
    r = velocity_bound(free, 1.0)
    assert r >= 2 * 0.5  # at least twice the diameter over the horizon
    assert np.isfinite(r)
    assert r == pytest.approx(2.0)


def test_velocity_bound_pendulum_finite(pendulum):
    r = velocity_bound(pendulum, 1.0)
    assert np.isfinite(r) and r > 1.0


def test_velocity_bound_monotone_in_horizon(pendulum, free):
    for model in (pendulum, free):
        bounds = [velocity_bound(model, t) for t in (0.25, 0.5, 1.0, 2.0, 4.0, 8.0)]
        assert all(b1 >= b2 - 1e-12 for b1, b2 in zip(bounds, bounds[1:]))


def test_velocity_bound_unbounded_model_errors():
    # Lagrangian bounded above cannot dominate the threshold: search must cap out
    model = HamiltonianModel(
        dim=1,
        eval_H=lambda q, p: np.zeros(np.shape(q)[:-1]),
        eval_grad=lambda q, p: (np.zeros_like(q), np.zeros_like(p)),
        eval_hess=lambda q, p: (np.zeros((1, 1)), np.zeros((1, 1)), np.eye(1)),
        eval_L=lambda q, v: np.zeros(np.shape(q)[:-1]),
        eval_Lv=lambda q, v: v,
        kind_tag="flat",
    )
    with pytest.raises(UnboundedModelError):
        velocity_bound(model, 1.0, cap=1e4)


# ----------------------------------------------------------------------
# derived models
# ----------------------------------------------------------------------
def test_reversed_model_mirrors_lagrangian(pendulum, rng):
    rev = reversed_model(pendulum)
    q = rng.random((5, 1))
    v = rng.standard_normal((5, 1))
    assert np.allclose(rev.eval_L(q, v), pendulum.eval_L(q, -v))
    assert np.allclose(rev.eval_Lv(q, v), -pendulum.eval_Lv(q, -v))
    defects = validate_model(rev, rng)
    assert defects["legendre"] < 1e-10


def test_shifted_model_absorbs_form(pendulum, rng):
    c = 1.5
    sh = shifted_model(pendulum, c)
    q = rng.random((5, 1))
    v = rng.standard_normal((5, 1))
    assert np.allclose(sh.eval_L(q, v), pendulum.eval_L(q, v) - c * v[..., 0])
    defects = validate_model(sh, rng)
    assert defects["legendre"] < 1e-10
