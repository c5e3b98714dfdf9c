"""Optimal feedback law, optimal value, and the forward-problem value."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .model import ProblemSpec, TerminalData
from .numerics import Grid, MatrixPath, gregory_weights, node_matvec
from .processes import EtaSolution, _inv_apply, _mv, solve_eta
from .reduction import NormalFormProblem, reduce
from .riccati import PiSolution, RiccatiSolution, gain_bundle, solve_upsilon

_T = lambda x: np.swapaxes(x, -1, -2)  # noqa: E731


@dataclass
class ControlLaw:
    """u = −K(X − E[X]) − K̃E[X] + c·W + c̃.

    K = R22⁻¹(Bᵀ+S2ᵀΥ), K̃ = R̃22⁻¹(B̃ᵀ+S̃2ᵀΥ̃), c = −R22⁻¹S2ᵀb_η,
    c̃ = −R̃22⁻¹(S̃2ᵀa_η + ρ2).
    """

    K: MatrixPath
    K_tilde: MatrixPath
    c: MatrixPath
    c_tilde: MatrixPath

    def evaluate(self, Xc: np.ndarray, m: np.ndarray, W: np.ndarray) -> np.ndarray:
        """Pathwise control from fluctuations Xc (P, N+1, n), mean m (N+1, n), Brownian W (P, N+1)."""
        return (-node_matvec(self.K.values, Xc) + self.mean(m)[None]
                + W[..., None] * self.c.values[None])

    def mean(self, m: np.ndarray) -> np.ndarray:
        return -_mv(self.K_tilde.values, m) + self.c_tilde.values

    def affine_map(self, m: np.ndarray) -> tuple:
        """(coefficient on X°, coefficient on W, constant) per node."""
        return -self.K.values, self.c.values, self.mean(m)

    def with_gain_shift(self, delta: float) -> "ControlLaw":
        """Law with delta added to every entry of K (a deliberately suboptimal law)."""
        return ControlLaw(MatrixPath(self.K.grid, self.K.values + delta), self.K_tilde, self.c, self.c_tilde)


def build_control_law(normal: NormalFormProblem, ric: RiccatiSolution, eta_beta: EtaSolution,
                      rho2=None) -> ControlLaw:
    """Feedback gains and affine offsets on the grid."""
    grid = normal.grid
    tab = normal.spec.table(grid.times)
    if rho2 is not None:
        tab.rho2 = np.broadcast_to(np.asarray(rho2, float), tab.rho2.shape)
    gb = gain_bundle(tab, ric.upsilon.values, ric.upsilon_tilde.values)
    a, b = eta_beta.eta.a.values, eta_beta.eta.b.values
    c = -_mv(gb.R22S2, b)
    ct = -_inv_apply(tab.R22t, _mv(_T(tab.S2t), a) + tab.rho2)
    return ControlLaw(MatrixPath(grid, gb.K), MatrixPath(grid, gb.Kt), MatrixPath(grid, c), MatrixPath(grid, ct))


@dataclass
class ValueBreakdown:
    """Optimal value split into the integrand groups of the value formula."""

    terms: dict

    @property
    def total(self) -> float:
        return float(sum(self.terms.values()))

    def to_dict(self) -> dict:
        return {"total": self.total, "terms": dict(self.terms)}


def optimal_value(normal: NormalFormProblem, ric: RiccatiSolution, eta_beta: EtaSolution,
                  g=None, q=None, rho1=None, rho2=None) -> ValueBreakdown:
    """Closed-form value for affine η = a + bW and deterministic inhomogeneities.

    Expectations use E[η] = a, η − E[η] = bW, β = b deterministic, E[W(t)²] = t.
    Time integrals use the end-corrected trapezoid rule, the same quadrature as
    the cost evaluations in verify. Inhomogeneities default to those of the
    normal-form spec.
    """
    spec, grid = normal.spec, normal.grid
    tab = spec.table(grid.times)
    for name, val in (("q", q), ("rho1", rho1), ("rho2", rho2)):
        if val is not None:
            setattr(tab, name, np.broadcast_to(np.asarray(val, float), getattr(tab, name).shape))
    g = spec.g if g is None else np.asarray(g, float)
    gb = gain_bundle(tab, ric.upsilon.values, ric.upsilon_tilde.values)
    a, b = eta_beta.eta.a.values, eta_beta.eta.b.values
    t = grid.times
    dot = lambda x, y: np.einsum("ki,ki->k", x, y)  # noqa: E731
    w = gregory_weights(grid)
    integ = lambda v: 0.5 * float(v @ w)  # noqa: E731
    Lrt = _T(gb.Lamt)                                  # (I + R̃11Υ)⁻¹
    terms = {
        "g": 0.5 * float(g @ (2 * a[0] - gb.Ut[0] @ g)),
        "rho1": integ(-dot(tab.rho1, _mv(gb.LUt, tab.rho1))),
        "rho2": integ(-dot(tab.rho2, _inv_apply(tab.R22t, tab.rho2))),
        "beta": integ(dot(b, _mv(Lrt @ tab.R11t, b))),
        "eta_fluctuation": integ(-t * dot(b, _mv(gb.Mf, b))),
        "eta_mean": integ(-dot(a, _mv(gb.Mm, a))),
        "rho1_beta_cross": integ(2 * dot(tab.rho1, _mv(gb.Lamt, b))),
        # centered inhomogeneities and β − E[β] vanish for deterministic data
        "eta_cross_fluctuation": 0.0,
        "eta_cross_mean": integ(-2 * dot(a, _mv(tab.S1t @ gb.Lamt, _mv(gb.U, tab.rho1) - b)
                                        + _mv(tab.S2t, _inv_apply(tab.R22t, tab.rho2)) - tab.q)),
    }
    return ValueBreakdown(terms)


def forward_value(normal: NormalFormProblem, pi: PiSolution, xi) -> float:
    """½⟨Π̃_λ(0)ξ, ξ⟩ for deterministic ξ (the centered term vanishes)."""
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    return 0.5 * float(xi @ pi.pi_tilde.values[0] @ xi)


@dataclass
class Solution:
    """Everything produced by the semi-analytic pipeline for one problem."""

    spec: ProblemSpec
    normal: NormalFormProblem
    ric: RiccatiSolution
    eta: EtaSolution
    law: ControlLaw
    value: ValueBreakdown
    zeta: TerminalData

    @property
    def offset(self) -> float:
        return float(self.normal.offset(self.zeta))

    @property
    def value_original(self) -> float:
        """Optimal value of the original problem: normal-form value minus the offset."""
        return self.value.total - self.offset


def synthesize(spec: ProblemSpec, grid: Grid, zeta: Optional[TerminalData] = None) -> Solution:
    """Reduce, solve the Riccati pair and η, and assemble law and value."""
    zeta = spec.terminal if zeta is None else zeta
    normal = reduce(spec, grid)
    ric = solve_upsilon(normal)
    eta = solve_eta(normal, ric, zeta)
    law = build_control_law(normal, ric, eta)
    value = optimal_value(normal, ric, eta)
    return Solution(spec, normal, ric, eta, law, value, zeta)
