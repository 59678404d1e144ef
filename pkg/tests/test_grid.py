import numpy as np
import pytest

from weakkam.grid import GridFunction, nearest_image, wrap_torus


def test_wrap_and_nearest_image():
    assert wrap_torus(1.25) == pytest.approx(0.25)
    assert wrap_torus(-0.25) == pytest.approx(0.75)
    assert nearest_image(0.9) == pytest.approx(-0.1)
    assert nearest_image(-0.9) == pytest.approx(0.1)
    # half-period ties resolve consistently to -1/2
    assert nearest_image(0.5) == pytest.approx(-0.5)
    d = nearest_image(np.array([0.3, -0.4, 1.1]))
    assert np.allclose(d, [0.3, -0.4, 0.1])


def test_interpolation_matches_grid_values_and_periodicity():
    n = 32
    theta = np.arange(n) / n
    u = GridFunction(np.sin(2 * np.pi * theta))
    assert np.allclose(u(theta), u.values)
    assert u(0.0) == pytest.approx(u(1.0))
    assert u(0.5 / n) == pytest.approx(0.5 * (u.values[0] + u.values[1]))
    # smooth function interpolates to O(h^2)
    qs = np.linspace(0, 1, 257)
    assert np.max(np.abs(u(qs) - np.sin(2 * np.pi * qs))) < 2.0 / n**2 * (2 * np.pi) ** 2


def test_interpolation_2d():
    n = 16
    f = lambda th: np.cos(2 * np.pi * th[..., 0]) * np.sin(2 * np.pi * th[..., 1])
    u = GridFunction.from_callable(f, n, dim=2)
    pts = np.array([[0.2, 0.7], [0.0, 0.0], [0.99, 0.01]])
    assert np.max(np.abs(u(pts) - f(pts))) < 0.2
    assert u(np.array([1.0, 1.0])) == pytest.approx(u(np.array([0.0, 0.0])))


def test_validation_errors():
    with pytest.raises(ValueError):
        GridFunction(np.array([[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]), dim=2)
    with pytest.raises(ValueError):
        GridFunction(np.array([0.0, np.nan, 1.0]))


def test_save_load_round_trip_is_bit_exact(tmp_path, rng):
    u = GridFunction(rng.standard_normal((24, 24)), dim=2)
    path = tmp_path / "field.grid"
    u.save(path, c=[0.25, -1.0 / 3.0], lam=0.1, alpha=np.pi)
    v, header = GridFunction.load(path)
    assert np.array_equal(u.values, v.values)  # bit-exact per the 17-digit format
    assert header["n"] == 24 and header["d"] == 2
    assert header["c"] == [0.25, -1.0 / 3.0]
    assert header["lambda"] == 0.1
    assert header["alpha"] == pytest.approx(np.pi, abs=0)
