import csv
import math

import numpy as np
import pytest

from conftest import ex61_spec, ex62_spec, random_spec
from mfblq.model import ProblemSpec, TerminalData
from mfblq.numerics import MatrixPath
from mfblq.processes import (AffineProcess, brownian_increments, eta_drift_residual, eta_pathwise_residual,
                             ensemble_summary, simulate_adjoint, solve_eta, solve_state_affine,
                             write_summary_csv)
from mfblq.reduction import reduce
from mfblq.riccati import solve_upsilon
from mfblq.synthesis import synthesize


def eta_for(spec, N=2000, zeta=None):
    normal = reduce(spec, spec.grid(N))
    ric = solve_upsilon(normal)
    return normal, ric, solve_eta(normal, ric, zeta)


# ---------------------------------------------------------------- affine processes

def test_affine_second_moment():
    grid = ex61_spec().grid(10)
    v = AffineProcess.constant(grid, [1.0, 2.0], [0.5, -1.0])
    mom = v.second_moment()
    t = grid.times[:, None, None]
    expected = np.outer([1, 2], [1, 2])[None] + t * np.outer([0.5, -1], [0.5, -1])[None]
    np.testing.assert_allclose(mom, expected)
    np.testing.assert_array_equal(v.mean(), v.a.values)


# ---------------------------------------------------------------- η

def test_eta_ex61_deterministic_terminal():
    normal, ric, sol = eta_for(ex61_spec(1.0, 0.0))
    t = normal.grid.times
    assert not sol.eta.b.values.any() and not sol.beta.values.any()
    np.testing.assert_allclose(sol.eta.a.values[:, 0], 1 / (2 - t), atol=1e-8)
    assert sol.eta.a.values[0, 0] == pytest.approx(0.5, abs=1e-8)


def test_eta_zero_data():
    normal, ric, sol = eta_for(ex62_spec(0.0, 0.0), N=100)
    assert not sol.eta.a.values.any() and not sol.eta.b.values.any()


def test_eta_ex61_brownian_terminal():
    normal, ric, sol = eta_for(ex61_spec(0.0, 1.0))
    t = normal.grid.times
    np.testing.assert_allclose(sol.eta.b.values[:, 0], np.exp(2 * (t - 1)), atol=1e-8)
    assert not sol.eta.a.values.any()


def test_eta_terminal_exact():
    normal, ric, sol = eta_for(ex62_spec(0.3, -0.7), N=200)
    assert sol.eta.a.values[-1, 0] == 0.3 and sol.eta.b.values[-1, 0] == -0.7


@pytest.mark.parametrize("seed", range(3))
def test_eta_coefficient_residual(seed):
    spec = random_spec(np.random.default_rng(seed), 2, 2, scale=0.3)
    normal, ric, sol = eta_for(spec, N=400)
    assert sol.residual <= 1e-8
    assert eta_drift_residual(normal, ric, sol) <= 1e-8


def test_eta_pathwise_check_converges():
    spec = random_spec(np.random.default_rng(5), 2, 1, scale=0.3)
    errs = []
    for N in (200, 800):
        normal, ric, sol = eta_for(spec, N=N)
        errs.append(eta_pathwise_residual(normal, ric, sol, 1000, 3)["mean_abs_error"])
    assert errs[1] < errs[0] / 2


# ---------------------------------------------------------------- state

def test_state_zero():
    spec = ex61_spec(0.0, 0.0)
    grid = spec.grid(50)
    Y, Z = solve_state_affine(spec, AffineProcess.zeros(grid, 1))
    assert not Y.a.values.any() and not Y.b.values.any() and not Z.values.any()


def test_state_ex61_brownian_terminal():
    spec = ex61_spec(0.0, 1.0)
    grid = spec.grid(2000)
    sol = solve_state_affine(spec, AffineProcess.zeros(grid, 1))
    t = grid.times
    np.testing.assert_allclose(sol.Y.b.values[:, 0], np.exp(2 * (t - 1)), atol=1e-10)
    assert not sol.Y.a.values.any()
    assert sol.Z.values[0, 0] == pytest.approx(math.exp(-2), abs=1e-10)
    assert sol.residual <= 1e-8


def test_state_constant_control():
    spec = ProblemSpec.build(1, 1, B=1.0, R22=1.0)
    grid = spec.grid(100)
    sol = solve_state_affine(spec, AffineProcess.constant(grid, [1.0], [0.0]))
    np.testing.assert_allclose(sol.Y.a.values[:, 0], grid.times - 1, atol=1e-13)
    assert not sol.Y.b.values.any()
    assert sol.Y.a.values[0, 0] == pytest.approx(-1.0, abs=1e-13)


@pytest.mark.parametrize("seed", range(3))
def test_state_residual_random(seed):
    rng = np.random.default_rng(seed)
    spec = random_spec(rng, 3, 2, time_varying=True)
    grid = spec.grid(400)
    t = grid.times[:, None]
    u = AffineProcess(MatrixPath(grid, np.sin(t) * rng.standard_normal(2)), MatrixPath(grid, t * np.ones(2)))
    sol = solve_state_affine(spec, u)
    assert sol.residual <= 1e-8
    np.testing.assert_array_equal(sol.Y.a.values[-1], spec.terminal.zeta0)
    np.testing.assert_array_equal(sol.Y.b.values[-1], spec.terminal.zeta1)


# ---------------------------------------------------------------- adjoint X

def test_adjoint_zero_data():
    spec = ProblemSpec.build(1, 1, A=1.0, C=1.0, S1=-1.0, R22=1.0)
    sol = synthesize(spec, spec.grid(50))
    ens = simulate_adjoint(sol.normal, sol.ric, sol.eta, seed=1, P=20)
    assert not ens.paths.any()


def test_adjoint_diffusion_free_paths_equal_mean():
    # every diffusion coefficient vanishes for this example
    sol = synthesize(ex61_spec(), ex61_spec().grid(200))
    ens = simulate_adjoint(sol.normal, sol.ric, sol.eta, seed=1, P=30)
    np.testing.assert_array_equal(ens.paths, np.broadcast_to(ens.mean.values, ens.paths.shape))


def test_adjoint_mean_matches_mean_ode():
    spec = ex62_spec()
    sol = synthesize(spec, spec.grid(200))
    ens = simulate_adjoint(sol.normal, sol.ric, sol.eta, seed=3, P=100_000)
    parts = ens.map_chunks(lambda c: (c.Xc.sum(0), (c.Xc ** 2).sum(0)))
    s1 = sum(p[0] for p in parts) / ens.P
    s2 = sum(p[1] for p in parts) / ens.P
    se = np.sqrt((s2 - s1 ** 2) / ens.P)
    inner = slice(1, None)
    assert np.all(np.abs(s1[inner]) <= 3 * se[inner])


def test_brownian_streams_depend_only_on_path_index():
    grid = ex61_spec().grid(16)
    full = brownian_increments(9, 0, 10, grid)
    np.testing.assert_array_equal(brownian_increments(9, 4, 7, grid), full[4:7])
    assert not np.array_equal(brownian_increments(10, 0, 10, grid), full)


def test_ensemble_reproducible_across_workers():
    spec = ex62_spec()
    sol = synthesize(spec, spec.grid(100))
    runs = [simulate_adjoint(sol.normal, sol.ric, sol.eta, seed=5, P=300, workers=w, chunk_size=32)
            for w in (1, 8)]
    np.testing.assert_array_equal(runs[0].paths, runs[1].paths)
    np.testing.assert_array_equal(runs[0].brownian, runs[1].brownian)
    again = simulate_adjoint(sol.normal, sol.ric, sol.eta, seed=5, P=300, chunk_size=100)
    np.testing.assert_array_equal(again.paths, runs[0].paths)


def test_reconstruction_at_terminal_time():
    # Y(T) = ζ pathwise since Υ(T) = 0 and η(T) = ζ
    spec = ex62_spec()
    sol = synthesize(spec, spec.grid(100))
    ens = simulate_adjoint(sol.normal, sol.ric, sol.eta, seed=2, P=50)
    chunk = next(ens.iter_chunks())
    Y, _ = ens.reconstruct(chunk)
    np.testing.assert_allclose(Y[:, -1, 0], 1.0 + chunk.W[:, -1], atol=1e-12)


def test_ensemble_summary_csv(tmp_path):
    spec = ex62_spec()
    sol = synthesize(spec, spec.grid(50))
    ens = simulate_adjoint(sol.normal, sol.ric, sol.eta, seed=2, P=64)
    summary = ensemble_summary(ens)
    np.testing.assert_allclose(summary["mean"], ens.paths.mean(0), atol=1e-12)
    write_summary_csv(summary, tmp_path / "x.csv")
    with open(tmp_path / "x.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0][0] == "t" and len(rows) > 2
