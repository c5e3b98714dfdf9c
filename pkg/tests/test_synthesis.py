import numpy as np
import pytest

from conftest import ex61_spec, ex62_spec
from mfblq.model import ProblemSpec
from mfblq.reduction import equivalent_cost_shift, equivalent_spec, reduce
from mfblq.riccati import solve_pi_lambda
from mfblq.processes import simulate_adjoint
from mfblq.synthesis import forward_value, synthesize
from mfblq.verify import mc_cost


def test_law_ex61(sol61):
    law, ric = sol61.law, sol61.ric
    np.testing.assert_allclose(law.K.values[:, 0, 0], 1.0, atol=1e-8)
    np.testing.assert_allclose(law.K_tilde.values[:, 0, 0], 1 - ric.upsilon_tilde.values[:, 0, 0], atol=1e-8)
    # u = −(X − E[X]) − (1 − Υ̃)E[X] + E[η] = −X + Υ̃E[X] + E[η]
    np.testing.assert_allclose(law.c_tilde.values, sol61.eta.eta.a.values, atol=1e-14)
    assert not law.c.values.any()


def test_law_ex62(sol62):
    law, ric, eta = sol62.law, sol62.ric, sol62.eta.eta
    U, Ut = ric.upsilon.values[:, 0, 0], ric.upsilon_tilde.values[:, 0, 0]
    np.testing.assert_allclose(law.K.values[:, 0, 0], 1 - 3 * U, atol=1e-12)
    np.testing.assert_allclose(law.K_tilde.values[:, 0, 0], 2 - 4 * Ut, atol=1e-12)
    np.testing.assert_allclose(law.c.values[:, 0], 3 * eta.b.values[:, 0], atol=1e-12)
    np.testing.assert_allclose(law.c_tilde.values[:, 0], 4 * eta.a.values[:, 0], atol=1e-12)


def test_zero_problem():
    spec = ProblemSpec.build(1, 1, R22=1.0)
    sol = synthesize(spec, spec.grid(50))
    for p in (sol.law.K, sol.law.K_tilde, sol.law.c, sol.law.c_tilde):
        assert not p.values.any()
    assert sol.value.total == 0.0


def test_value_ex61(sol61):
    assert sol61.value.total == pytest.approx(-0.25, abs=1e-6)
    assert sol61.value_original == sol61.value.total


def test_value_ex61_brownian_terminal(sol61_w):
    # η = e^{2(t−1)}W, β = e^{2(t−1)}; only the β and fluctuation terms survive
    assert sol61_w.value.total == pytest.approx(-1.0, abs=1e-6)


def test_value_ex61_brownian_terminal_against_monte_carlo(sol61_w):
    sol = sol61_w
    ens = simulate_adjoint(sol.normal, sol.ric, sol.eta, seed=4, P=20_000)
    mc = mc_cost(sol.normal, sol.law, ens)
    assert abs(mc.mean - sol.value.total) <= 3 * mc.stderr


def test_breakdown_sums_to_total(sol62):
    terms = sol62.value.terms
    assert sum(terms.values()) == pytest.approx(sol62.value.total, abs=1e-12)
    assert set(terms) >= {"g", "rho1", "rho2", "beta", "eta_fluctuation", "eta_mean"}


@pytest.mark.parametrize("h", [(3.0, 2.0), (0.5, -0.3)])
def test_value_invariant_under_reduction(h):
    spec = ex62_spec()
    grid = spec.grid(1000)
    base = synthesize(spec, grid).value_original
    shifted = synthesize(equivalent_spec(spec, h), grid)
    assert shifted.offset != 0.0
    assert shifted.value_original - equivalent_cost_shift(spec, h) == pytest.approx(base, abs=1e-6)


def test_forward_value():
    spec = ProblemSpec.build(2, 1, R22=1.0)
    normal = reduce(spec, spec.grid(20))
    pi = solve_pi_lambda(normal, 10.0)
    assert forward_value(normal, pi, np.zeros(2)) == 0.0
    assert forward_value(normal, pi, np.array([1.0, 0.0])) == 5.0


def test_forward_value_nonnegative_ex61():
    spec = ex61_spec()
    normal = reduce(spec, spec.grid(2000))
    assert forward_value(normal, solve_pi_lambda(normal, 1e4), 1.0) >= 0.0
