import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ex61_spec, ex62_spec, random_affine, random_spec
from mfblq.errors import Singular
from mfblq.model import ProblemSpec, TerminalData, specs_equal
from mfblq.numerics import MatrixPath
from mfblq.processes import AffineProcess, solve_state_affine
from mfblq.reduction import (equivalent_coeffs, equivalent_cost_shift, equivalent_spec, is_normal_form,
                             map_control, reduce)
from mfblq.verify import evaluate_cost


def c0(cf):
    return float(cf.at(0.0)[0, 0])


def test_normal_form_is_fixed_point():
    spec = ex61_spec()
    normal = reduce(spec, spec.grid(100))
    assert is_normal_form(spec)
    assert specs_equal(normal.spec, spec)
    assert normal.offset() == 0.0
    assert not normal.phi.values.any()


def test_reduction_with_running_state_weight():
    spec = ProblemSpec.build(1, 1, Q=1.0, R22=1.0, terminal=TerminalData([1.0], [0.0]))
    grid = spec.grid(200)
    normal = reduce(spec, grid)
    np.testing.assert_allclose(normal.phi.values[:, 0, 0], -grid.times, atol=1e-12)
    np.testing.assert_allclose(normal.spec.R11.at(grid.times)[:, 0, 0], -grid.times, atol=1e-12)
    assert normal.offset() == pytest.approx(-0.5, abs=1e-12)
    assert is_normal_form(normal.spec)


def test_reduction_is_idempotent():
    spec = random_spec(np.random.default_rng(3), 2, 2)
    grid = spec.grid(100)
    once = reduce(spec, grid)
    twice = reduce(once.spec, grid)
    assert twice.offset() == 0.0
    assert specs_equal(twice.spec, once.spec)


def test_reduce_rejects_singular_control_weight():
    spec = ProblemSpec.build(1, 1, R22=1.0, R22_hat=-1.0)
    with pytest.raises(Singular) as err:
        reduce(spec, spec.grid(10))
    assert err.value.equation == "R22_tilde"


# ---------------------------------------------------------------- control map

def test_map_control_identity_without_cross_weight():
    spec = ex61_spec()
    grid = spec.grid(50)
    normal = reduce(spec, grid)
    u = AffineProcess.constant(grid, [0.3], [-0.7])
    Z = AffineProcess.constant(grid, [1.0], [2.0])
    u0 = map_control(normal, u, "to_normal", Z)
    np.testing.assert_array_equal(u0.a.values, u.a.values)
    np.testing.assert_array_equal(u0.b.values, u.b.values)


def test_map_control_centered_shift():
    spec = ProblemSpec.build(1, 1, R22=2.0, R12=1.0)
    grid = spec.grid(50)
    normal = reduce(spec, grid)
    c = 0.8
    u = AffineProcess.constant(grid, [0.0], [0.0])
    Z = AffineProcess.constant(grid, [0.0], [c])
    u0 = map_control(normal, u, "to_normal", Z)
    np.testing.assert_allclose(u0.b.values, c / 2, atol=1e-15)
    np.testing.assert_allclose(u0.a.values, 0.0)


def test_map_control_round_trip():
    rng = np.random.default_rng(11)
    spec = random_spec(rng, 2, 2)
    grid = spec.grid(100)
    normal = reduce(spec, grid)
    u = random_affine(rng, grid, 2)
    Z = solve_state_affine(spec, u, check=False).Z_process
    back = map_control(normal, map_control(normal, u, "to_normal", Z), "to_original", Z)
    np.testing.assert_allclose(back.a.values, u.a.values, atol=1e-12)
    np.testing.assert_allclose(back.b.values, u.b.values, atol=1e-12)


def test_map_control_rejects_bad_direction():
    spec = ex61_spec()
    grid = spec.grid(10)
    u = AffineProcess.zeros(grid, 1)
    with pytest.raises(ValueError):
        map_control(reduce(spec, grid), u, "sideways", u)


# ---------------------------------------------------------------- J_h family

def test_equivalent_coeffs_ex62():
    e = equivalent_coeffs(ex62_spec(), (3.0, 2.0))
    assert (c0(e.Q_h), c0(e.S1_h), c0(e.S2_h), c0(e.N1_h)) == (6.0, -1.0, 0.0, 1.0)
    assert (c0(e.Qt_h), c0(e.S1t_h), c0(e.S2t_h)) == (8.0, 0.0, 0.0)
    # R̃11 + H = (−2 + 1) + 3
    assert c0(e.N1t_h) == 2.0


def test_equivalent_coeffs_zero_h_is_identity():
    spec = ex62_spec()
    e = equivalent_coeffs(spec, (0.0, 0.0))
    assert c0(e.Q_h) == 0.0 and c0(e.Qt_h) == 0.0
    assert c0(e.S1_h) == c0(spec.S1) and c0(e.N1_h) == c0(spec.R11)
    assert c0(e.N1t_h) == c0(spec.R11) + c0(spec.R11_hat)


def test_equivalent_coeffs_use_supplied_derivative():
    spec = ProblemSpec.build(1, 1, R22=1.0)
    e = equivalent_coeffs(spec, (0.0, 0.0, 5.0, 7.0))
    assert c0(e.Q_h) == 5.0 and c0(e.Qt_h) == 7.0


def test_equivalent_coeffs_shape_check():
    with pytest.raises(ValueError):
        equivalent_coeffs(ProblemSpec.build(2, 1, R22=1.0), (np.eye(3), np.eye(2)))


def test_equivalent_cost_shift():
    spec = ex62_spec()
    assert equivalent_cost_shift(spec, (0.0, 0.0)) == 0.0
    assert equivalent_cost_shift(ProblemSpec.build(1, 1, R22=1.0), (1.0, 1.0), TerminalData([1.0], [0.0])) == 0.5
    assert equivalent_cost_shift(spec, (3.0, 2.0), TerminalData([0.0], [1.0])) == 1.5


def test_h_identity_on_ex62():
    spec = ex62_spec()
    grid = spec.grid(400)
    u = AffineProcess.constant(grid, [0.4], [-1.1])
    J = evaluate_cost(spec, u)
    Jh = evaluate_cost(equivalent_spec(spec, (3.0, 2.0)), u)
    assert J == pytest.approx(Jh - equivalent_cost_shift(spec, (3.0, 2.0)), abs=1e-6)


@settings(max_examples=12, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.booleans(), st.integers(0, 2**31))
def test_reduction_cost_identity(n, m, varying, seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, n, m, varying)
    grid = spec.grid(400)
    normal = reduce(spec, grid)
    u = random_affine(rng, grid, m)
    Z = solve_state_affine(spec, u, check=False).Z_process
    u0 = map_control(normal, u, "to_normal", Z)
    assert evaluate_cost(spec, u) == pytest.approx(evaluate_cost(normal.spec, u0) - normal.offset(), abs=1e-6)


@settings(max_examples=12, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.booleans(), st.integers(0, 2**31))
def test_equivalent_cost_identity(n, m, varying, seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, n, m, varying)
    grid = spec.grid(400)
    H, Ht = (0.5 * (a + a.T) for a in rng.standard_normal((2, n, n)))
    Hd = 0.5 * (lambda a: a + a.T)(rng.standard_normal((n, n)))
    t = grid.times
    # H(t) = H + tḢ as a sampled path with its exact derivative
    Hpath = MatrixPath(grid, H[None] + t[:, None, None] * Hd[None])
    h = (Hpath, Ht, Hd, np.zeros((n, n)))
    u = random_affine(rng, grid, m)
    J = evaluate_cost(spec, u)
    Jh = evaluate_cost(equivalent_spec(spec, h), u)
    assert J == pytest.approx(Jh - equivalent_cost_shift(spec, h), abs=1e-6)
