import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import ex61_spec, ex62_spec, random_spec
from mfblq.errors import ParseError
from mfblq.model import (CoeffFn, ProblemSpec, TerminalData, emit_problem, parse_problem, specs_equal,
                         tilde, validate)


def test_example_specs_validate():
    assert validate(ex61_spec()).passed
    assert validate(ex62_spec()).passed


def test_nonsymmetric_weight_is_rejected():
    spec = ProblemSpec.build(2, 1, R22=1.0, R11=np.array([[1.0, 2.0], [0.0, 1.0]]))
    rep = validate(spec)
    assert not rep.passed
    assert any(v.startswith("symmetry: R11") for v in rep.violations)


def test_wrong_shape_is_rejected():
    with pytest.raises(ValueError):
        ProblemSpec.build(1, 1, B=np.ones((1, 2)))
    spec = ProblemSpec.build(1, 1, R22=1.0)
    bad = ProblemSpec(**{**spec.__dict__, "B": CoeffFn.constant(np.ones((1, 2)))})
    rep = validate(bad)
    assert any(v.startswith("dimension: B") for v in rep.violations)


def test_tilde_sums():
    t = tilde(ex61_spec())
    assert t.A.value[0, 0] == 0.0
    assert t.B.value[0, 0] == 1.0
    assert t.R22.value[0, 0] == 1.0
    t = tilde(ex62_spec())
    assert t.S1.value[0, 0] == -2.0
    assert t.S2.value[0, 0] == -4.0


def test_tilde_without_hats_is_plain():
    spec = ProblemSpec.build(2, 1, A=np.array([[1.0, 2.0], [3.0, 4.0]]), R22=1.0)
    t = tilde(spec)
    np.testing.assert_array_equal(t.A.value, spec.A.value)
    np.testing.assert_array_equal(t.R22.value, spec.R22.value)


def test_sampled_coefficient_exact_at_samples_and_linear_between():
    cf = CoeffFn.sampled([0.0, 0.5, 1.0], [[[1.0]], [[3.0]], [[2.0]]])
    np.testing.assert_array_equal(cf.at(np.array([0.0, 0.5, 1.0]))[:, 0, 0], [1.0, 3.0, 2.0])
    assert cf.at(0.25)[0, 0] == pytest.approx(2.0)
    assert cf.at(0.75)[0, 0] == pytest.approx(2.5)


def test_parse_example_file(problem_files):
    spec = problem_files["ex61"]
    assert (spec.n, spec.m, spec.T) == (1, 1, 1.0)
    assert specs_equal(spec, ex61_spec())
    assert specs_equal(problem_files["ex62"], ex62_spec())


def test_parse_errors():
    with pytest.raises(ParseError):
        parse_problem("[dimensions]\nn = 1\n")
    with pytest.raises(ParseError):
        parse_problem("[dimensions]\nn = 1\nm = 1\n[cost]\nR23 = [[1.0]]\n")
    with pytest.raises(ParseError):
        parse_problem("[dimensions]\nn = 2\nm = 1\n[cost]\nR11 = [[1.0, 2.0], [0.0, 1.0]]\n")
    with pytest.raises(ParseError):
        parse_problem("not toml [")


def test_parse_symmetrizes_within_tolerance():
    text = "[dimensions]\nn = 2\nm = 1\n[cost]\nR11 = [[1.0, 2.0], [2.0000000000000004, 1.0]]\nR22 = [[1.0]]\n"
    spec = parse_problem(text)
    np.testing.assert_array_equal(spec.R11.value, spec.R11.value.T)


def test_sampled_round_trip():
    cf = CoeffFn.sampled([0.0, 0.3, 1.0], np.arange(12.0).reshape(3, 2, 2) / 7)
    spec = ProblemSpec.build(2, 1, A=cf, R22=1.0, terminal=TerminalData([0.1, 0.2], [0.3, 0.4]))
    assert specs_equal(parse_problem(emit_problem(spec)), spec)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.booleans(), st.integers(0, 2**31))
def test_round_trip_bitwise(n, m, varying, seed):
    spec = random_spec(np.random.default_rng(seed), n, m, varying)
    assert specs_equal(parse_problem(emit_problem(spec)), spec)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2**31))
def test_tilde_is_linear(n, m, seed):
    rng = np.random.default_rng(seed)
    a, b = random_spec(rng, n, m), random_spec(rng, n, m)
    ta, tb = tilde(a), tilde(b)
    both = ProblemSpec.build(n, m, **{k: getattr(a, k).value + getattr(b, k).value
                                      for k in ("A", "A_hat", "S1", "S1_hat", "R22", "R22_hat")})
    tab = tilde(both)
    np.testing.assert_allclose(tab.A.value, ta.A.value + tb.A.value, atol=1e-14)
    np.testing.assert_allclose(tab.S1.value, ta.S1.value + tb.S1.value, atol=1e-14)
    np.testing.assert_allclose(tab.R22.value, ta.R22.value + tb.R22.value, atol=1e-14)
