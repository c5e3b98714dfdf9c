import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mfblq.errors import NotSymmetric, Singular
from mfblq.numerics import (Grid, MatrixPath, integrate_ode, node_matvec, quad_trapezoid,
                            solve_linear, sym_eig_min, symmetrize)


def test_grid_rejects_too_few_steps():
    with pytest.raises(ValueError):
        Grid(1.0, 1)
    with pytest.raises(ValueError):
        Grid(0.0, 10)


def test_grid_times_and_half_lattice():
    g = Grid(2.0, 4)
    np.testing.assert_allclose(g.times, [0, 0.5, 1.0, 1.5, 2.0])
    assert g.half_index(0.75) == 3
    assert g.half_index(0.3) is None


def test_backward_linear_ode_matches_closed_form():
    # ẋ = 4x − 2, x(1) = 0  ⇒  x(0) = (1 − e⁻⁴)/2
    g = Grid(1.0, 2000)
    path = integrate_ode(lambda t, y: 4 * y - 2, np.array([0.0]), g, "backward")
    assert abs(path.values[0, 0] - (1 - math.exp(-4)) / 2) <= 1e-10
    assert path.values[-1, 0] == 0.0


def test_forward_exponential():
    g = Grid(1.0, 2000)
    path = integrate_ode(lambda t, y: y, np.array([1.0]), g, "forward")
    np.testing.assert_allclose(path.values[:, 0], np.exp(g.times), rtol=1e-10)


def rk4_order_factor(N: int = 50) -> float:
    errs = []
    for n in (N, 2 * N):
        path = integrate_ode(lambda t, y: y, np.array([1.0]), Grid(1.0, n), "forward")
        errs.append(abs(path.values[-1, 0] - math.e))
    return errs[0] / errs[1]


def test_rk4_order_factor():
    assert 12 <= rk4_order_factor() <= 20


def test_backward_then_forward_round_trip():
    g = Grid(1.0, 400)
    rhs = lambda t, y: np.array([[0.0, 1.0], [-1.0, 0.1]]) @ y + np.sin(t)  # noqa: E731
    back = integrate_ode(rhs, np.array([1.0, -0.5]), g, "backward")
    fwd = integrate_ode(rhs, back.values[0], g, "forward")
    np.testing.assert_allclose(fwd.values[-1], [1.0, -0.5], atol=1e-9)


def test_projection_is_applied():
    g = Grid(1.0, 10)
    path = integrate_ode(lambda t, y: np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((2, 2)), g,
                         project=symmetrize)
    np.testing.assert_allclose(path.values[-1], [[0.0, 0.5], [0.5, 0.0]])


def test_hermite_interpolation_reproduces_cubic():
    g = Grid(1.0, 5)
    f = lambda t: t ** 3 - 2 * t  # noqa: E731
    df = lambda t: 3 * t ** 2 - 2  # noqa: E731
    path = MatrixPath(g, f(g.times)[:, None], df(g.times)[:, None])
    ts = np.linspace(0, 1, 37)
    np.testing.assert_allclose(path.at(ts)[:, 0], f(ts), atol=1e-13)


def test_trapezoid_exact_on_linear():
    g = Grid(1.0, 7)
    assert quad_trapezoid(np.ones(8), g) == pytest.approx(1.0, abs=1e-15)
    assert quad_trapezoid(g.times, g) == pytest.approx(0.5, abs=1e-15)
    assert quad_trapezoid(3 - 2 * g.times, g) == pytest.approx(2.0, abs=1e-14)


def test_trapezoid_converges_on_smooth_integrand():
    g = Grid(1.0, 2000)
    assert abs(quad_trapezoid((2 - g.times) ** -2, g) - 0.5) <= 1e-6


def test_solve_linear_scalar_cases():
    np.testing.assert_allclose(solve_linear([[2.0]], [1.0]), [0.5])
    np.testing.assert_allclose(solve_linear([[0.509158]], [1.0]), [1 / 0.509158])
    assert solve_linear([[0.509158]], [1.0])[0] == pytest.approx(1.964026, abs=1e-6)


def test_solve_linear_singular():
    with pytest.raises(Singular):
        solve_linear([[1.0, 2.0], [2.0, 4.0]], [1.0, 0.0])
    with pytest.raises(Singular):
        solve_linear([[0.0]], [1.0])


def test_sym_eig_min():
    assert sym_eig_min(np.zeros((2, 2))) == 0.0
    assert sym_eig_min(np.diag([2.0, -1.0])) == pytest.approx(-1.0)
    with pytest.raises(NotSymmetric):
        sym_eig_min(np.array([[0.0, 1.0], [0.0, 0.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 4), st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_node_matvec_matches_einsum(P, i, j, seed):
    rng = np.random.default_rng(seed)
    M = rng.standard_normal((5, i, j))
    X = rng.standard_normal((P, 5, j))
    np.testing.assert_allclose(node_matvec(M, X), np.einsum("kij,pkj->pki", M, X), atol=1e-13)


@settings(max_examples=50, deadline=None)
@given(st.floats(-3, 3), st.floats(0.1, 2.0))
def test_rk4_linear_scalar_property(rate, T):
    # RK4 on ẏ = ay is the degree-4 Taylor polynomial of e^{ah} per step
    g = Grid(T, 200)
    path = integrate_ode(lambda t, y: rate * y, np.array([1.0]), g)
    z = rate * g.h
    step = 1 + z + z * z / 2 + z ** 3 / 6 + z ** 4 / 24
    assert path.values[-1, 0] == pytest.approx(step ** 200, rel=1e-12)
