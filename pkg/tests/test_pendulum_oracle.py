import numpy as np
import pytest

from weakkam import pendulum_oracle as po

I_PLUS = po.I_PLUS


def test_c_at_separatrix_is_four_over_pi():
    # sqrt(2(1 - cos 2 pi q)) = 2|sin pi q| integrates to 4/pi
    assert po.c_of_e(1.0) == pytest.approx(4.0 / np.pi, abs=1e-8)


def test_c_asymptotics_sqrt_2e():
    e = 1e6
    assert po.c_of_e(e) / np.sqrt(2 * e) == pytest.approx(1.0, abs=1e-3)


def test_c_strictly_increasing():
    es = np.linspace(1.0, 8.0, 30)
    cs = [po.c_of_e(e) for e in es]
    assert all(c2 > c1 for c1, c2 in zip(cs, cs[1:]))


def test_c_domain_error():
    with pytest.raises(ValueError):
        po.c_of_e(0.5)
    with pytest.raises(ValueError):
        po.e_of_I(1.0)


def test_e_of_I_round_trips():
    assert po.e_of_I(I_PLUS) == pytest.approx(1.0, abs=1e-8)
    assert po.c_of_e(po.e_of_I(1.5)) == pytest.approx(1.5, abs=1e-9)
    assert po.e_of_I(po.c_of_e(2.0)) == pytest.approx(2.0, abs=1e-9)


def test_du_values():
    # at the separatrix, u' = 2 sin(pi q) - 4/pi
    assert po.oracle_du(I_PLUS, 0.5) == pytest.approx(2.0 - 4.0 / np.pi, abs=1e-10)
    assert po.oracle_du(1.5, 0.0) == pytest.approx(
        np.sqrt(2 * (po.e_of_I(1.5) - 1.0)) - 1.5, abs=1e-9)


def test_d2u_separatrix_simplification():
    # raw form 2 pi sin(2 pi q)/sqrt(2(1 - cos 2 pi q)) == 2 pi cos(pi q) on (0,1)
    qs = np.linspace(0.01, 0.99, 53)
    raw = 2 * np.pi * np.sin(2 * np.pi * qs) / np.sqrt(2 * (1 - np.cos(2 * np.pi * qs)))
    assert np.allclose(raw, po.separatrix_d2u(qs), atol=1e-10)
    assert po.oracle_d2u(I_PLUS, 0.25) == pytest.approx(2 * np.pi * np.cos(np.pi / 4), abs=1e-12)
    assert po.oracle_d2u(I_PLUS, 0.25) == pytest.approx(4.442882938158366, abs=1e-10)


def test_d2u_singular_at_corner():
    with pytest.raises(po.SingularPointError):
        po.oracle_d2u(I_PLUS, 0.0)


def test_u_vanishes_at_zero_and_closes_periodically():
    assert po.oracle_u(1.5, 0.0) == 0.0
    for I in (I_PLUS, 1.4, 2.0):
        _, closure = po.u_grid(I, 512)
        assert abs(closure) < 1e-9  # mean-zero because I = c(e)


def test_u_grid_matches_pointwise_quadrature():
    I = 1.5
    vals, _ = po.u_grid(I, 64)
    for j in (7, 20, 41):
        assert vals[j] == pytest.approx(po.oracle_u(I, j / 64), abs=1e-10)


def test_hj_identity_on_graph():
    # (I + u_I')^2/2 + cos(2 pi q) = e at all sampled q
    for I in (I_PLUS, 1.5, 2.5):
        e = po.e_of_I(I)
        qs = np.linspace(0, 1, 1000, endpoint=False)
        resid = 0.5 * (I + po.oracle_du(I, qs)) ** 2 + np.cos(2 * np.pi * qs) - e
        assert np.max(np.abs(resid)) < 1e-9


def test_du_matches_finite_difference_of_u():
    I = 1.7
    h = 1e-5
    for q in (0.2, 0.55, 0.9):
        fd = (po.oracle_u(I, q + h) - po.oracle_u(I, q - h)) / (2 * h)
        assert fd == pytest.approx(po.oracle_du(I, q), abs=1e-8)


def test_du_minimum_at_zero_with_flat_second_derivative():
    I = 1.5
    qs = np.linspace(0, 1, 1001, endpoint=False)
    dus = po.oracle_du(I, qs)
    assert np.argmin(dus) == 0
    assert po.oracle_d2u(I, 0.0) == pytest.approx(0.0, abs=1e-12)


def test_separatrix_d2u_exceeds_half_near_zero():
    qs = np.linspace(1e-6, 0.45, 300)
    assert np.all(po.separatrix_d2u(qs) > 0.5)


def test_sup_d2_gap_lower_bound():
    for I in (I_PLUS + 1e-3, I_PLUS + 1e-6):
        gap, witness = po.oracle_sup_d2_gap(I)
        assert gap >= 0.25
        # the witness sits where u_I'' is flat but u_{I+}'' is near +-2 pi
        assert min(witness, 1 - witness) < 0.1


def test_d21_gap_decreases_to_zero():
    gaps = [po.d21_gap(I_PLUS + d) for d in (0.1, 0.03, 0.01, 0.003)]
    assert all(g2 < g1 for g1, g2 in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.2 * gaps[0]


def test_alpha_of_c():
    assert po.alpha_of_c(0.0) == pytest.approx(1.0)
    assert po.alpha_of_c(1.0) == pytest.approx(1.0)  # inside the pinned zone
    assert po.alpha_of_c(1.5) == pytest.approx(po.e_of_I(1.5))
    assert po.alpha_of_c(-1.5) == pytest.approx(po.e_of_I(1.5))


def test_pendulum_curve_type():
    curve = po.PendulumCurve(1.5)
    assert curve.I == pytest.approx(po.c_of_e(1.5))
    with pytest.raises(ValueError):
        po.PendulumCurve(0.9)
