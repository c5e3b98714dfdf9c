from pathlib import Path

import numpy as np
import pytest

from mfblq.model import CoeffFn, ProblemSpec, TerminalData, load_problem
from mfblq.numerics import MatrixPath
from mfblq.processes import AffineProcess
from mfblq.synthesis import synthesize

PROBLEMS = Path(__file__).resolve().parent.parent / "problems"


def ex61_spec(zeta0=1.0, zeta1=0.0) -> ProblemSpec:
    """Scalar indefinite example with mean-field weights in state and cost."""
    return ProblemSpec.build(
        1, 1, 1.0, terminal=TerminalData([zeta0], [zeta1]),
        A=2.0, A_hat=-2.0, B=2.0, B_hat=-1.0,
        S2_hat=-1.0, R11=-1.0, R11_hat=-1.0, R22=2.0, R22_hat=-1.0)


def ex62_spec(zeta0=1.0, zeta1=1.0) -> ProblemSpec:
    """Scalar example whose convexity is certified through h = (3, 2)."""
    return ProblemSpec.build(
        1, 1, 1.0, terminal=TerminalData([zeta0], [zeta1]),
        A=1.0, A_hat=1.0, B=1.0, B_hat=1.0, C=1.0,
        S1=-4.0, S1_hat=2.0, S2=-3.0, S2_hat=-1.0, R11=-2.0, R11_hat=1.0, R22=1.0)


def zero_spec() -> ProblemSpec:
    return ProblemSpec.build(1, 1, 1.0, R22=1.0)


@pytest.fixture(scope="session")
def problems_dir() -> Path:
    return PROBLEMS


@pytest.fixture(scope="session")
def ex61():
    return ex61_spec()


@pytest.fixture(scope="session")
def ex62():
    return ex62_spec()


@pytest.fixture(scope="session")
def sol61():
    spec = ex61_spec()
    return synthesize(spec, spec.grid(2000))


@pytest.fixture(scope="session")
def sol61_w():
    spec = ex61_spec(0.0, 1.0)
    return synthesize(spec, spec.grid(2000))


@pytest.fixture(scope="session")
def sol62():
    spec = ex62_spec()
    return synthesize(spec, spec.grid(2000))


@pytest.fixture(scope="session")
def problem_files(problems_dir):
    return {name: load_problem(problems_dir / f"{name}.toml") for name in ("ex61", "ex62", "zero")}


def _sym(a):
    return 0.5 * (a + a.T)


def random_spec(rng: np.random.Generator, n: int, m: int, time_varying: bool = False,
                scale: float = 0.5) -> ProblemSpec:
    """A valid spec with small random data and R22, R̃22 bounded away from singular."""
    def mat(r, c, sym=False):
        a = scale * rng.standard_normal((r, c))
        return _sym(a) if sym else a

    def coeff(r, c=None, sym=False):
        base = mat(r, c, sym) if c is not None else scale * rng.standard_normal(r)
        if not time_varying:
            return base
        slope = mat(r, c, sym) if c is not None else scale * rng.standard_normal(r)
        ts = np.linspace(0.0, 1.0, 5)
        return CoeffFn.sampled(ts, [base + t * slope for t in ts])

    def spd(k):
        a = rng.standard_normal((k, k))
        return a @ a.T / k + np.eye(k)

    kw = {}
    for name in ("A", "A_hat", "C", "C_hat", "S1", "S1_hat"):
        kw[name] = coeff(n, n)
    for name in ("B", "B_hat", "S2", "S2_hat", "R12", "R12_hat"):
        kw[name] = coeff(n, m)
    for name in ("Q", "Q_hat", "R11", "R11_hat"):
        kw[name] = coeff(n, n, sym=True)
    kw["R22"] = spd(m)
    kw["R22_hat"] = 0.3 * _sym(rng.standard_normal((m, m)))
    kw["G"], kw["G_hat"] = mat(n, n, True), mat(n, n, True)
    kw["g"] = scale * rng.standard_normal(n)
    for name, k in (("f", n), ("q", n), ("rho1", n), ("rho2", m)):
        kw[name] = coeff(k)
    zeta = TerminalData(rng.standard_normal(n), rng.standard_normal(n))
    return ProblemSpec.build(n, m, 1.0, terminal=zeta, **kw)


def random_affine(rng: np.random.Generator, grid, m: int):
    """u = a(t) + b(t)W with a, b quadratic in t."""
    t = grid.times[:, None]
    a = rng.standard_normal((3, m))
    b = rng.standard_normal((3, m))
    return AffineProcess(MatrixPath(grid, a[0] + a[1] * t + a[2] * t * t),
                         MatrixPath(grid, b[0] + b[1] * t + b[2] * t * t))
