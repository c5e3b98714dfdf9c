"""Riccati terminal-value problems, the auxiliary Φ flows, and the λ-limit cross-check."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from types import SimpleNamespace
from typing import Optional, Sequence

import numpy as np

from .errors import NotDecreasing, SolveError
from .model import TILDE_BASES, VECTOR_COEFFS, ProblemSpec
from .numerics import Grid, MatrixPath, integrate_ode, solve_linear, symmetrize

# Π_λ is stiff for large λ; each grid interval is split so that the
# local stiffness estimate times the substep stays below this.
PI_SUBSTEP_TARGET = 0.05
PI_MAX_SUBSTEPS = 4000


class StageCoeffs:
    """Coefficient lookup at RK4 stage times.

    Values on the node/midpoint lattice are tabulated once; other times (only
    reached by substepping) are evaluated directly.
    """

    _names = tuple(TILDE_BASES) + tuple(b + "t" for b in TILDE_BASES) + tuple(VECTOR_COEFFS)

    def __init__(self, spec: ProblemSpec, grid: Grid):
        self.spec = spec
        self.grid = grid
        self.constant = spec.is_constant
        if self.constant:
            tab = spec.table([0.0])
            self._one = SimpleNamespace(**{k: getattr(tab, k)[0] for k in self._names})
        else:
            tab = spec.table(grid.half_times)
            self._rows = [SimpleNamespace(**{k: getattr(tab, k)[j] for k in self._names})
                          for j in range(2 * grid.N + 1)]

    def __call__(self, t: float) -> SimpleNamespace:
        if self.constant:
            return self._one
        j = self.grid.half_index(t)
        if j is not None:
            return self._rows[j]
        tab = self.spec.table([t])
        return SimpleNamespace(**{k: getattr(tab, k)[0] for k in self._names})

    def nodes(self):
        """Table at grid nodes (arrays with a leading node axis)."""
        return self.spec.table(self.grid.times)


def _solve(mat, rhs, equation, t):
    try:
        return solve_linear(mat, rhs)
    except SolveError as exc:
        raise exc.located(equation, t) from None


# ----------------------------------------------------------------- Φ flows

def solve_phi(spec: ProblemSpec, grid: Grid) -> tuple[MatrixPath, MatrixPath]:
    """Forward flows Φ̇ = −ΦA − AᵀΦ − Q, Φ(0) = −G and the tilde analogue."""
    co = StageCoeffs(spec, grid)
    n = spec.n

    def rhs(t, y):
        c = co(t)
        P, Pt = y[0], y[1]
        return np.stack([-P @ c.A - c.A.T @ P - c.Q, -Pt @ c.At - c.At.T @ Pt - c.Qt])

    init = np.stack([-spec.G, -(spec.G + spec.G_hat)]).reshape(2, n, n)
    path = integrate_ode(rhs, init, grid, "forward", project=symmetrize)
    return (MatrixPath(grid, path.values[:, 0], path.slopes[:, 0]),
            MatrixPath(grid, path.values[:, 1], path.slopes[:, 1]))


# ---------------------------------------------------------- Υ, Υ̃ equations

@dataclass
class RiccatiSolution:
    """Υ, Υ̃ and the grid-minimum certificates of positivity and invertibility."""

    upsilon: MatrixPath
    upsilon_tilde: MatrixPath
    cert: dict
    terminal: float = 0.0

    @property
    def grid(self) -> Grid:
        return self.upsilon.grid


def upsilon_rhs(c, U, Ut, t=None):
    """Right-hand sides (dΥ/dt, dΥ̃/dt) in normal form, coefficients c at one time."""
    n = U.shape[0]
    eye = np.eye(n)
    LU = _solve(eye + U @ c.R11, U, "upsilon", t)
    G1 = c.C + U @ c.S1
    K = _solve(c.R22, c.B.T + c.S2.T @ U, "upsilon", t)
    dU = U @ c.A.T + c.A @ U - G1 @ LU @ G1.T - (c.B + U @ c.S2) @ K
    LUt = _solve(eye + U @ c.R11t, U, "upsilon_tilde", t)
    G1t = c.Ct + Ut @ c.S1t
    Kt = _solve(c.R22t, c.Bt.T + c.S2t.T @ Ut, "upsilon_tilde", t)
    dUt = Ut @ c.At.T + c.At @ Ut - G1t @ LUt @ G1t.T - (c.Bt + Ut @ c.S2t) @ Kt
    return dU, dUt


def solve_upsilon(normal, terminal: float = 0.0) -> RiccatiSolution:
    """Backward RK4 for Υ and Υ̃ with Υ(T) = Υ̃(T) = terminal·I.

    The two equations are integrated as one block-triangular system (Υ̃'s
    equation reads Υ but not vice versa), so each RK4 stage of Υ̃ sees the
    exact stage value of Υ.
    """
    spec, grid = normal.spec, normal.grid
    n = spec.n
    co = StageCoeffs(spec, grid)

    def rhs(t, y):
        dU, dUt = upsilon_rhs(co(t), y[0], y[1], t)
        return np.stack([dU, dUt])

    init = np.stack([terminal * np.eye(n), terminal * np.eye(n)])
    path = integrate_ode(rhs, init, grid, "backward", project=symmetrize)
    ups = MatrixPath(grid, path.values[:, 0], path.slopes[:, 0])
    upt = MatrixPath(grid, path.values[:, 1], path.slopes[:, 1])
    cert = upsilon_certificates(co.nodes(), ups.values, upt.values)
    return RiccatiSolution(ups, upt, cert, float(terminal))


def upsilon_certificates(tab, U, Ut) -> dict:
    """Grid minima of the positivity / invertibility quantities."""
    n = U.shape[-1]
    eye = np.eye(n)
    M = eye + U @ tab.R11
    Mt = eye + U @ tab.R11t
    W = symmetrize(np.linalg.solve(M, U))
    Wt = symmetrize(np.linalg.solve(Mt, U))
    return {
        "min_eig_upsilon": float(np.linalg.eigvalsh(U).min()),
        "min_eig_upsilon_tilde": float(np.linalg.eigvalsh(Ut).min()),
        "min_inv_margin_R11": float(np.linalg.svd(M, compute_uv=False).min()),
        "min_inv_margin_R11_tilde": float(np.linalg.svd(Mt, compute_uv=False).min()),
        "min_eig_weighted": float(np.linalg.eigvalsh(W).min()),
        "min_eig_weighted_tilde": float(np.linalg.eigvalsh(Wt).min()),
    }


def upsilon_residual(normal, ric: RiccatiSolution) -> float:
    """Max over interior nodes of |centered difference − right-hand side|."""
    grid = ric.grid
    co = StageCoeffs(normal.spec, grid)
    U, Ut = ric.upsilon.values, ric.upsilon_tilde.values
    h = grid.h
    worst = 0.0
    for k in range(1, grid.N):
        dU, dUt = upsilon_rhs(co(grid.times[k]), U[k], Ut[k])
        fd = (U[k + 1] - U[k - 1]) / (2 * h)
        fdt = (Ut[k + 1] - Ut[k - 1]) / (2 * h)
        worst = max(worst, np.abs(fd - dU).max(), np.abs(fdt - dUt).max())
    return float(worst)


def gain_bundle(tab, U, Ut) -> SimpleNamespace:
    """Feedback building blocks from Υ, Υ̃, batched over a leading time axis.

    LU = (I+ΥR11)⁻¹Υ, Lam = (I+ΥR11)⁻¹ and tilde versions (with Υ, not Υ̃,
    inside the inverse); K = R22⁻¹(Bᵀ+S2ᵀΥ), Kt = R̃22⁻¹(B̃ᵀ+S̃2ᵀΥ̃);
    F, Ft are the adjoint drift matrices and Mf, Mm the quadratic η weights.
    """
    T = lambda x: np.swapaxes(x, -1, -2)  # noqa: E731
    eye = np.broadcast_to(np.eye(U.shape[-1]), U.shape)
    M, Mt = eye + U @ tab.R11, eye + U @ tab.R11t
    Lam, Lamt = np.linalg.solve(M, eye), np.linalg.solve(Mt, eye)
    LU, LUt = symmetrize(Lam @ U), symmetrize(Lamt @ U)
    K = np.linalg.solve(tab.R22, T(tab.B) + T(tab.S2) @ U)
    Kt = np.linalg.solve(tab.R22t, T(tab.Bt) + T(tab.S2t) @ Ut)
    R22S2 = np.linalg.solve(tab.R22, T(tab.S2))
    R22S2t = np.linalg.solve(tab.R22t, T(tab.S2t))
    CU = T(tab.C) + T(tab.S1) @ U          # Cᵀ + S1ᵀΥ
    CUt = T(tab.Ct) + T(tab.S1t) @ Ut      # C̃ᵀ + S̃1ᵀΥ̃
    F = T(tab.A) - tab.S1 @ LU @ CU - tab.S2 @ K
    Ft = T(tab.At) - tab.S1t @ LUt @ CUt - tab.S2t @ Kt
    Mf = tab.S1 @ LU @ T(tab.S1) + tab.S2 @ R22S2
    Mm = tab.S1t @ LUt @ T(tab.S1t) + tab.S2t @ R22S2t
    return SimpleNamespace(U=U, Ut=Ut, Lam=Lam, Lamt=Lamt, LU=LU, LUt=LUt, K=K, Kt=Kt,
                           R22S2=R22S2, R22S2t=R22S2t, CU=CU, CUt=CUt, F=F, Ft=Ft,
                           Mf=symmetrize(Mf), Mm=symmetrize(Mm))


# ------------------------------------------------------------- Π_λ equations

@dataclass
class PiSolution:
    lam: float
    pi: MatrixPath
    pi_tilde: MatrixPath
    weight_cert: float
    substeps: int = 0


def pi_rhs(c, P, Pt, t=None):
    """Right-hand sides (dΠ/dt, dΠ̃/dt) in normal form."""
    W1 = P @ c.C + c.S1
    W2 = P @ c.B + c.S2
    dP = (-P @ c.A - c.A.T @ P + W1 @ _solve(c.R11 + P, W1.T, "pi", t)
          + W2 @ _solve(c.R22, W2.T, "pi", t))
    W1t = Pt @ c.Ct + c.S1t
    W2t = Pt @ c.Bt + c.S2t
    dPt = (-Pt @ c.At - c.At.T @ Pt + W1t @ _solve(c.R11t + P, W1t.T, "pi_tilde", t)
           + W2t @ _solve(c.R22t, W2t.T, "pi_tilde", t))
    return dP, dPt


def _stiffness_substeps(t, y, k1, dt) -> int:
    scale = max(float(np.abs(y).max()), 1.0)
    sigma = 2.0 * float(np.abs(k1).max()) / scale
    m = math.ceil(abs(dt) * sigma / PI_SUBSTEP_TARGET)
    return int(min(max(m, 1), PI_MAX_SUBSTEPS))


def solve_pi_lambda(normal, lam: float) -> PiSolution:
    """Backward RK4 for Π_λ and Π̃_λ from λI.

    Grid intervals are split into equal substeps chosen from a stiffness
    estimate at the interval start, which keeps large λ stable while staying a
    deterministic function of the state.
    """
    if not lam > 0:
        raise ValueError("lambda must be positive")
    spec, grid = normal.spec, normal.grid
    n = spec.n
    co = StageCoeffs(spec, grid)
    counter = [0]

    def rhs(t, y):
        dP, dPt = pi_rhs(co(t), y[0], y[1], t)
        return np.stack([dP, dPt])

    def substeps(t, y, k1, dt):
        m = _stiffness_substeps(t, y, k1, dt)
        counter[0] += m
        return m

    init = np.stack([lam * np.eye(n), lam * np.eye(n)])
    path = integrate_ode(rhs, init, grid, "backward", project=symmetrize, substeps=substeps)
    pi = MatrixPath(grid, path.values[:, 0], path.slopes[:, 0])
    pit = MatrixPath(grid, path.values[:, 1], path.slopes[:, 1])
    tab = co.nodes()
    blocks = [np.linalg.eigvalsh(symmetrize(tab.R11 + pi.values)).min(),
              np.linalg.eigvalsh(symmetrize(tab.R22)).min(),
              np.linalg.eigvalsh(symmetrize(tab.R11t + pi.values)).min(),
              np.linalg.eigvalsh(symmetrize(tab.R22t)).min()]
    return PiSolution(float(lam), pi, pit, float(min(blocks)), counter[0])


# ------------------------------------------------------------ λ-limit report

@dataclass
class LimitReport:
    lambdas: list
    gaps: list
    gaps_tilde: list
    rates: list
    rates_tilde: list
    decreasing: bool
    inverse_monotone: bool
    pi_increasing: bool
    above_limit: bool
    lambda0_estimate: Optional[float]
    failures: dict = field(default_factory=dict)
    min_eig_pi_increment: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lambdas": self.lambdas, "gaps": self.gaps, "gaps_tilde": self.gaps_tilde,
            "rates": self.rates, "rates_tilde": self.rates_tilde,
            "decreasing": self.decreasing, "inverse_monotone": self.inverse_monotone,
            "pi_increasing": self.pi_increasing, "above_limit": self.above_limit,
            "lambda0_estimate": self.lambda0_estimate, "failures": self.failures,
            "min_eig_pi_increment": self.min_eig_pi_increment,
        }


def _sup_gap(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.abs(np.linalg.eigvalsh(symmetrize(a - b))).max())


def upsilon_via_limit(normal, ladder: Sequence[float] = (10.0, 1e2, 1e3, 1e4),
                      ric: Optional[RiccatiSolution] = None, *, strict: bool = True,
                      psd_tol: float = 1e-10) -> LimitReport:
    """Compare Π_λ⁻¹, Π̃_λ⁻¹ with Υ, Υ̃ along an increasing λ ladder."""
    ladder = [float(x) for x in ladder]
    if any(b <= a for a, b in zip(ladder, ladder[1:])):
        raise ValueError("ladder must be strictly increasing")
    if ric is None:
        ric = solve_upsilon(normal)
    n = normal.spec.n
    eye = np.eye(n)
    sols, failures = [], {}
    for lam in ladder:
        try:
            sols.append(solve_pi_lambda(normal, lam))
        except SolveError as exc:
            failures[repr(lam)] = str(exc)
    lambdas = [s.lam for s in sols]
    invs = [np.linalg.solve(s.pi.values, np.broadcast_to(eye, s.pi.values.shape)) for s in sols]
    invts = [np.linalg.solve(s.pi_tilde.values, np.broadcast_to(eye, s.pi.values.shape)) for s in sols]
    gaps = [_sup_gap(iv, ric.upsilon.values) for iv in invs]
    gaps_t = [_sup_gap(iv, ric.upsilon_tilde.values) for iv in invts]

    def rates(g):
        out = []
        for i in range(len(g) - 1):
            if g[i] > 0 and g[i + 1] > 0:
                out.append(math.log(g[i] / g[i + 1]) / math.log(lambdas[i + 1] / lambdas[i]))
            else:
                out.append(float("nan"))
        return out

    dec = all(b < a for a, b in zip(gaps, gaps[1:])) and all(b < a for a, b in zip(gaps_t, gaps_t[1:]))
    inv_mono = all(np.linalg.eigvalsh(symmetrize(a - b)).min() >= -psd_tol for a, b in zip(invs, invs[1:]))
    incr = [float(np.linalg.eigvalsh(symmetrize(b.pi.values - a.pi.values)).min()) for a, b in zip(sols, sols[1:])]
    above = all(np.linalg.eigvalsh(symmetrize(iv - ric.upsilon.values)).min() >= -psd_tol for iv in invs)
    rep = LimitReport(lambdas, gaps, gaps_t, rates(gaps), rates(gaps_t), dec, bool(inv_mono),
                      all(x > 0 for x in incr), bool(above), lambdas[0] if lambdas else None,
                      failures, incr)
    if strict and not (dec and inv_mono):
        raise NotDecreasing(f"ladder gaps not monotone: gaps={gaps}, gaps_tilde={gaps_t}")
    return rep
