"""Independent checks: exact affine cost, Monte Carlo cost, stationarity, perturbation fits, convexity."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import SolveError
from .model import ProblemSpec, TerminalData
from .numerics import Grid, MatrixPath, gregory_weights, node_matvec, sym_eig_min
from .processes import AffineProcess, PathEnsemble, _mv, solve_state_affine
from .reduction import NormalFormProblem, equivalent_spec, reduce
from .riccati import solve_upsilon
from .synthesis import ControlLaw

DEFAULT_EPSILONS = (-0.2, -0.1, 0.0, 0.1, 0.2)
EIG_TOL = 1e-8
MC_SIGMAS = 3.0
# deterministic identities are held to this; it also covers Monte Carlo estimates with zero spread
DETERMINISTIC_TOL = 1e-6
C2_REL_TOL = 0.10

_T = lambda x: np.swapaxes(x, -1, -2)  # noqa: E731


# ------------------------------------------------------------ cost blocks

def _block(Q, S1, S2, R11, R12, R22) -> np.ndarray:
    top = np.concatenate([Q, S1, S2], axis=-1)
    mid = np.concatenate([_T(S1), R11, R12], axis=-1)
    bot = np.concatenate([_T(S2), _T(R12), R22], axis=-1)
    return np.concatenate([top, mid, bot], axis=-2)


@dataclass
class CostModel:
    """Weights of the quadratic cost on θ = (Y, Z, u), tabulated on the grid nodes."""

    grid: Grid
    M: np.ndarray        # (N+1, d, d) plain weight
    M_hat: np.ndarray    # (N+1, d, d) weight on the means
    lin: np.ndarray      # (N+1, d) = (q, ρ1, ρ2)
    G: np.ndarray
    G_hat: np.ndarray
    g: np.ndarray
    w: np.ndarray        # quadrature weights

    @classmethod
    def build(cls, spec: ProblemSpec, grid: Grid) -> "CostModel":
        tab = spec.table(grid.times)
        M = _block(tab.Q, tab.S1, tab.S2, tab.R11, tab.R12, tab.R22)
        Mt = _block(tab.Qt, tab.S1t, tab.S2t, tab.R11t, tab.R12t, tab.R22t)
        lin = np.concatenate([tab.q, tab.rho1, tab.rho2], axis=-1)
        return cls(grid, M, Mt - M, lin, spec.G, spec.G_hat, spec.g, gregory_weights(grid))


def _theta(Y, Z, u) -> np.ndarray:
    return np.concatenate([Y, Z, u], axis=-1)


def _qf(M, x, y=None) -> np.ndarray:
    """⟨Mx, y⟩ over the last axis, batched over the node axis."""
    y = x if y is None else y
    return np.einsum("...ki,kij,...kj->...k", y, M, x)


# ------------------------------------------------------------ exact cost

def evaluate_cost(spec: ProblemSpec, u: AffineProcess, zeta: Optional[TerminalData] = None) -> float:
    """J(ζ; u) for affine u = u_a + u_b·W and affine ζ, using closed-form second moments.

    With Y = p + rW and Z = r, θ = θ̄ + Wθ_b where θ̄ = (p, r, u_a) and θ_b = (r, 0, u_b),
    so E⟨Mθ,θ⟩ + ⟨M̂E θ, E θ⟩ = ⟨M̃θ̄,θ̄⟩ + t⟨Mθ_b,θ_b⟩.
    """
    grid = u.grid
    state = solve_state_affine(spec, u, zeta, check=False)
    model = CostModel.build(spec, grid)
    p, r = state.Y.a.values, state.Y.b.values
    tb = _theta(p, r, u.a.values)
    tw = _theta(r, np.zeros_like(r), u.b.values)
    integrand = (_qf(model.M + model.M_hat, tb) + grid.times * _qf(model.M, tw)
                 + 2 * np.einsum("ki,ki->k", model.lin, tb))
    p0 = p[0]
    terminal = p0 @ (model.G + model.G_hat) @ p0 + 2 * model.g @ p0
    return float(0.5 * (terminal + integrand @ model.w))


def state_response(spec: ProblemSpec, v: AffineProcess):
    """(δθ̄, δθ_b, δY(0)) of the homogeneous problem driven by v alone."""
    st = solve_state_affine(spec.homogeneous(), v, TerminalData.zero(spec.n), check=False)
    p, r = st.Y.a.values, st.Y.b.values
    return _theta(p, r, v.a.values), _theta(r, np.zeros_like(r), v.b.values), p[0]


def random_affine_family(grid: Grid, m: int, count: int, seed: int) -> list:
    """Affine controls a(t) + b(t)W with a, b linear in t and unit-normal coefficients."""
    rng = np.random.default_rng(seed)
    s = (grid.times / grid.T)[:, None]
    out = []
    for _ in range(count):
        a0, a1, b0, b1 = rng.standard_normal((4, m))
        out.append(AffineProcess(MatrixPath(grid, a0 + a1 * s), MatrixPath(grid, b0 + b1 * s)))
    return out


def control_energy(v: AffineProcess) -> float:
    """∫E|v|² = ∫(|a|² + t|b|²)."""
    grid = v.grid
    a, b = v.a.values, v.b.values
    return float(((a * a).sum(-1) + grid.times * (b * b).sum(-1)) @ gregory_weights(grid))


# ------------------------------------------------------------ Monte Carlo cost

@dataclass
class MCCostReport:
    mean: float
    stderr: float
    paths: int

    def __iter__(self):
        yield self.mean
        yield self.stderr

    def to_dict(self) -> dict:
        return asdict(self)


def _original_maps(normal: NormalFormProblem, grid: Grid):
    tab = normal.original.table(grid.times)
    return (np.linalg.solve(tab.R22, _T(tab.R12)), np.linalg.solve(tab.R22t, _T(tab.R12t)))


def _dot(x, y) -> np.ndarray:
    return np.einsum("ki,ki->k", x, y)


@dataclass
class PathFunctional:
    """Per-path integral ∫[X°ᵀ·XX·X° + W·XW·X° + WW·W² + X·X° + Wc·W + one]dt + const.

    Every quadratic cost quantity of θ = αX° + βW + γ (per-node α, β, γ) has this
    form, so a whole batch of them costs one product per feature and path.
    """

    XX: np.ndarray
    XW: np.ndarray
    WW: np.ndarray
    X: np.ndarray
    Wc: np.ndarray
    one: np.ndarray
    const: float = 0.0

    @classmethod
    def from_theta(cls, alpha, beta, gamma, Q=None, L0=None, L1=None, c0=None, c1=None, c2=None,
                   const: float = 0.0) -> "PathFunctional":
        """∫[θᵀQθ + 2θ·L0 + 2W·θ·L1 + c0 + c1·W + c2·W²]dt + const."""
        K, d, n = alpha.shape
        zd, zk = np.zeros((K, d)), np.zeros(K)
        Q = np.zeros((K, d, d)) if Q is None else Q
        L0 = zd if L0 is None else L0
        L1 = zd if L1 is None else L1
        aT = _T(alpha)
        Qb, Qg = _mv(Q, beta), _mv(Q, gamma)
        return cls(
            XX=aT @ Q @ alpha,
            XW=2 * _mv(aT, Qb + L1),
            WW=_dot(beta, Qb) + 2 * _dot(beta, L1) + (zk if c2 is None else c2),
            X=2 * _mv(aT, Qg + L0),
            Wc=2 * _dot(beta, Qg + L0) + 2 * _dot(gamma, L1) + (zk if c1 is None else c1),
            one=_dot(gamma, Qg) + 2 * _dot(gamma, L0) + (zk if c0 is None else c0),
            const=float(const))

    def __add__(self, other: "PathFunctional") -> "PathFunctional":
        return PathFunctional(self.XX + other.XX, self.XW + other.XW, self.WW + other.WW,
                              self.X + other.X, self.Wc + other.Wc, self.one + other.one,
                              self.const + other.const)


def evaluate_functionals(fs: Sequence[PathFunctional], Xc: np.ndarray, W: np.ndarray,
                         w: np.ndarray) -> np.ndarray:
    """Values of each functional on each path, shape (P, len(fs)), trapezoid in time."""
    n = Xc.shape[-1]
    col = lambda get: np.stack([w * get(f) for f in fs], axis=1)  # noqa: E731
    xs = [np.ascontiguousarray(Xc[..., i]) for i in range(n)]
    out = np.broadcast_to(np.array([f.const + w @ f.one for f in fs]), (W.shape[0], len(fs))).copy()
    out += W @ col(lambda f: f.Wc)
    out += (W * W) @ col(lambda f: f.WW)
    for i in range(n):
        out += xs[i] @ col(lambda f: f.X[:, i])
        out += (xs[i] * W) @ col(lambda f: f.XW[:, i])
        for j in range(i, n):
            coef = (lambda f: f.XX[:, i, i]) if i == j else (lambda f: f.XX[:, i, j] + f.XX[:, j, i])
            out += (xs[i] * xs[j]) @ col(coef)
    return out


def _cost_pass(ens: PathEnsemble, law: ControlLaw, spec: ProblemSpec, to_original=None, directions=()):
    """One pass over the ensemble collecting per-path cost pieces.

    Y, Z and u are affine in (X°, W) node by node, so each per-path quantity is a
    PathFunctional. Per path the cost under u* + εv is an exact quadratic in ε
    (the state is linear in the control), so every ε shares the paths and only
    the coefficient pieces are needed. Mean-field terms use sample means; their
    influence on the standard error is linearized at the exact means.
    """
    grid = ens.grid
    model = CostModel.build(spec, grid)
    maps = ens.affine_maps()
    ua, uw, u0 = law.affine_map(ens.mean.values)
    if to_original is not None:
        K12, K12t = to_original
        za, zw, z0 = maps["Z"]
        ua, uw, u0 = ua - K12 @ za, uw - _mv(K12, zw), u0 - _mv(K12t, z0)
    alpha = np.concatenate([maps["Y"][0], maps["Z"][0], ua], axis=1)
    beta = _theta(maps["Y"][1], maps["Z"][1], uw)
    gamma = _theta(maps["Y"][2], maps["Z"][2], u0)       # = exact mean of θ
    y0 = gamma[0, :spec.n]                               # Y(0) is deterministic
    ft = lambda **kw: PathFunctional.from_theta(alpha, beta, gamma, **kw)  # noqa: E731
    phi = ft(Q=0.5 * model.M, L0=0.5 * model.lin, const=0.5 * (y0 @ model.G @ y0) + model.g @ y0)
    fs = [phi, phi + ft(L0=0.5 * _mv(model.M_hat, gamma), const=y0 @ model.G_hat @ y0)]
    dirs = [state_response(spec, v) for v in directions]
    for dbar, db, dy0 in dirs:
        lin = ft(L0=0.5 * _mv(model.M, dbar), L1=0.5 * _mv(model.M, db),
                 c0=_dot(model.lin, dbar), c1=_dot(model.lin, db),
                 const=(model.G @ y0 + model.g) @ dy0)
        quad = ft(c0=0.5 * _qf(model.M, dbar), c1=_qf(model.M, db, dbar), c2=0.5 * _qf(model.M, db),
                  const=0.5 * dy0 @ model.G @ dy0)
        Mh_dbar = _mv(model.M_hat, dbar)
        fs += [lin, quad,
               lin + ft(L0=0.5 * Mh_dbar, c1=_dot(_mv(model.M_hat, gamma), db),
                        const=y0 @ model.G_hat @ dy0),
               quad + ft(c1=_dot(Mh_dbar, db))]
    w = model.w

    def part(chunk):
        return (evaluate_functionals(fs, chunk.Xc, chunk.W, w), chunk.Xc.sum(0), chunk.W.sum(0))

    parts = ens.map_chunks(part)
    vals = np.concatenate([p[0] for p in parts])
    P = ens.P
    x_s = sum(p[1] for p in parts) / P
    W_s = sum(p[2] for p in parts) / P
    res = {"phi": vals[:, 0], "infl": vals[:, 1], "model": model, "dirs": dirs,
           "th_s": _mv(alpha, x_s) + W_s[:, None] * beta + gamma, "W_s": W_s}
    if dirs:
        rest = vals[:, 2:].reshape(P, len(dirs), 4)
        res.update(lin=rest[..., 0], quad=rest[..., 1], infl_lin=rest[..., 2], infl_quad=rest[..., 3])
    return res


def _mf_value(model: CostModel, th_s: np.ndarray, n: int) -> float:
    y0 = th_s[0, :n]
    return 0.5 * float(_qf(model.M_hat, th_s) @ model.w + y0 @ model.G_hat @ y0)


def _stderr(x: np.ndarray) -> float:
    return float(np.std(x, ddof=1) / math.sqrt(len(x))) if len(x) > 1 else 0.0


def mc_cost(normal: NormalFormProblem, law: ControlLaw, ensemble: PathEnsemble,
            map_to_original: bool = False) -> MCCostReport:
    """Monte Carlo cost of the feedback law along the ensemble.

    Without mapping the cost is the normal-form one; with map_to_original the
    control is mapped back and the original problem's weights are used.
    """
    spec = normal.original if map_to_original else normal.spec
    maps = _original_maps(normal, ensemble.grid) if map_to_original else None
    res = _cost_pass(ensemble, law, spec, maps)
    mean = float(res["phi"].mean()) + _mf_value(res["model"], res["th_s"], spec.n)
    return MCCostReport(mean, _stderr(res["infl"]), ensemble.P)


def mc_agrees(report: MCCostReport, reference: float) -> bool:
    """|mean − reference| within MC_SIGMAS standard errors plus the deterministic tolerance."""
    return abs(report.mean - reference) <= MC_SIGMAS * report.stderr + DETERMINISTIC_TOL


# ------------------------------------------------------------ perturbation fits

@dataclass
class QuadraticFitReport:
    epsilons: list
    costs: list
    c0: float
    c1: float
    c2: float
    stderr_c1: float
    stderr_c2: float
    J0: float
    fit_residual: float
    pairing: Optional[float] = None
    c1_ok: bool = False
    c2_nonneg: bool = False
    c2_rel_error: float = 0.0
    c2_half_rel_error: float = 0.0

    @property
    def c2_ok(self) -> bool:
        return self.c2_rel_error <= C2_REL_TOL

    @property
    def passed(self) -> bool:
        return self.c1_ok and self.c2_nonneg and self.c2_ok

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(c2_ok=self.c2_ok, passed=self.passed)
        return d


@dataclass
class PerturbationReport:
    fits: list
    J_star: float
    J_star_stderr: float
    paths: int

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.fits)

    def to_dict(self) -> dict:
        return {"fits": [f.to_dict() for f in self.fits], "J_star": self.J_star,
                "J_star_stderr": self.J_star_stderr, "paths": self.paths, "passed": self.passed}


def _rel(x: float, ref: float) -> float:
    if ref == 0.0:
        return 0.0 if x == 0.0 else math.inf
    return abs(x - ref) / abs(ref)


def perturbation_test(normal: NormalFormProblem, law: ControlLaw, ensemble: PathEnsemble,
                      directions: Sequence[AffineProcess], epsilons=DEFAULT_EPSILONS,
                      pairings: Optional[Sequence[float]] = None) -> PerturbationReport:
    """Fit J(u* + εv) = c0 + c1ε + c2ε² over ε for each direction v, all on one ensemble.

    J₀(0; v) is computed exactly on the homogeneous problem. At the optimum the
    linear coefficient vanishes and the quadratic one equals J₀(0; v).
    """
    spec = normal.spec
    res = _cost_pass(ensemble, law, spec, None, directions)
    model, th_s, W_s = res["model"], res["th_s"], res["W_s"]
    j_star = float(res["phi"].mean()) + _mf_value(model, th_s, spec.n)
    eps = np.asarray(epsilons, dtype=float)
    design = np.stack([np.ones_like(eps), eps, eps * eps], axis=1)
    fits = []
    for k, (v, (dbar, db, dy0)) in enumerate(zip(directions, res["dirs"])):
        dth_s = dbar + W_s[:, None] * db
        mf_lin = float(np.einsum("ki,ki->k", _mv(model.M_hat, th_s), dth_s) @ model.w
                       + th_s[0, :spec.n] @ model.G_hat @ dy0)
        mf_quad = 0.5 * float(_qf(model.M_hat, dth_s) @ model.w + dy0 @ model.G_hat @ dy0)
        lin = float(res["lin"][:, k].mean()) + mf_lin
        quad = float(res["quad"][:, k].mean()) + mf_quad
        # fit the ε-dependent part so a null direction gives exactly zero coefficients
        delta = lin * eps + quad * eps * eps
        coef, *_ = np.linalg.lstsq(design, delta, rcond=None)
        resid = float(np.abs(design @ coef - delta).max())
        costs = j_star + delta
        c0, c1, c2 = j_star + float(coef[0]), float(coef[1]), float(coef[2])
        se1, se2 = _stderr(res["infl_lin"][:, k]), _stderr(res["infl_quad"][:, k])
        J0 = evaluate_cost(spec.homogeneous(), v, TerminalData.zero(spec.n))
        fits.append(QuadraticFitReport(
            epsilons=eps.tolist(), costs=costs.tolist(), c0=c0, c1=c1, c2=c2,
            stderr_c1=se1, stderr_c2=se2, J0=J0, fit_residual=resid,
            pairing=None if pairings is None else float(pairings[k]),
            c1_ok=abs(c1) <= MC_SIGMAS * se1 + 1e-12, c2_nonneg=c2 >= 0.0,
            c2_rel_error=_rel(c2, J0), c2_half_rel_error=_rel(c2, J0 / 2)))
    return PerturbationReport(fits, j_star, _stderr(res["infl"]), ensemble.P)


# ------------------------------------------------------------ stationarity

@dataclass
class StationarityReport:
    sup_residual: float
    node_profile: np.ndarray
    paths_used: int
    sample_mean_profile: np.ndarray
    terminal_mismatch: float
    pairings: list = field(default_factory=list)
    pairing_stderr: list = field(default_factory=list)

    @property
    def sup_mean_residual(self) -> float:
        return float(self.node_profile.max())

    @property
    def sup_sample_mean_residual(self) -> float:
        return float(self.sample_mean_profile.max())

    def to_dict(self) -> dict:
        return {"sup_residual": self.sup_residual, "sup_mean_residual": self.sup_mean_residual,
                "sup_sample_mean_residual": self.sup_sample_mean_residual,
                "node_profile": self.node_profile.tolist(),
                "sample_mean_profile": self.sample_mean_profile.tolist(),
                "paths_used": self.paths_used, "terminal_mismatch": self.terminal_mismatch,
                "pairings": list(self.pairings), "pairing_stderr": list(self.pairing_stderr)}


def stationarity_residual(normal: NormalFormProblem, law: ControlLaw, ensemble: PathEnsemble,
                          rho2=None, directions: Sequence[AffineProcess] = ()
                          ) -> StationarityReport:
    """Pathwise residual of BᵀX + B̂ᵀE[X] + S2ᵀY + Ŝ2ᵀE[Y] + R12ᵀZ + R̂12ᵀE[Z] + R22u + R̂22E[u] + ρ2.

    X comes from the ensemble, Z from the reconstruction formula, u from the law,
    and Y from an independent Euler–Maruyama run of the state equation started at
    the reconstructed Y(0). The node profile uses exact means; the second profile
    uses ensemble sample means. Optional directions v give E∫⟨residual, v⟩dt.
    """
    spec, grid = normal.spec, ensemble.grid
    tab = spec.table(grid.times)
    if rho2 is not None:
        tab.rho2 = np.broadcast_to(np.asarray(rho2, float), tab.rho2.shape)
    m = ensemble.mean.values
    zbar = ensemble.z_mean()
    ubar = law.mean(m)
    h, N = grid.h, grid.N
    ybar = np.empty_like(m)
    ybar[0] = ensemble.y_mean()[0]
    for k in range(N):
        ybar[k + 1] = ybar[k] + h * (tab.At[k] @ ybar[k] + tab.Bt[k] @ ubar[k] + tab.Ct[k] @ zbar[k] + tab.f[k])
    mean_part = (_mv(_T(tab.Bt), m) + _mv(_T(tab.S2t), ybar) + _mv(_T(tab.R12t), zbar)
                 + _mv(tab.R22t, ubar) + tab.rho2)
    hats = {k: getattr(spec, k + "_hat").at(grid.times) for k in ("A", "B", "C")}
    BT, S2T, R12T = _T(tab.B), _T(tab.S2), _T(tab.R12)
    # η(T) = ζ, so the terminal value of the affine η is (ζ0, ζ1)
    zeta_T = (ensemble.eta.eta.a.values[-1], ensemble.eta.eta.b.values[-1])
    vs = [(v.a.values, v.b.values) for v in directions]
    w = gregory_weights(grid)

    def forward_y(Z, u, dW):
        P = Z.shape[0]
        Y = np.empty_like(Z)
        Y[:, 0] = ybar[0]
        for k in range(N):
            drift = (Y[:, k] @ tab.A[k].T + hats["A"][k] @ ybar[k] + u[:, k] @ tab.B[k].T
                     + hats["B"][k] @ ubar[k] + Z[:, k] @ tab.C[k].T + hats["C"][k] @ zbar[k] + tab.f[k])
            Y[:, k + 1] = Y[:, k] + h * drift + Z[:, k] * dW[:, k, None]
        return Y

    def centered(chunk):
        _, Z = ensemble.reconstruct(chunk)
        u = law.evaluate(chunk.Xc, m, chunk.W)
        Y = forward_y(Z, u, chunk.dW)
        return Y, Z, u

    def sums(chunk):
        Y, Z, u = centered(chunk)
        return chunk.Xc.sum(0), Y.sum(0), Z.sum(0), u.sum(0)

    # pass 1: sample means
    parts = ensemble.map_chunks(sums)
    P = ensemble.P
    xs, ys, zs, us = (sum(p[i] for p in parts) / P for i in range(4))
    m_s = m + xs
    sample_shift = (_mv(_T(tab.Bt), m_s - m) + _mv(_T(tab.S2t), ys - ybar)
                    + _mv(_T(tab.R12t), zs - zbar) + _mv(tab.R22t, us - ubar))

    def plain(Xc, Yc, Zc, uc):
        return (node_matvec(BT, Xc) + node_matvec(S2T, Yc)
                + node_matvec(R12T, Zc) + node_matvec(tab.R22, uc))

    def residuals(chunk):
        Y, Z, u = centered(chunk)
        r = plain(chunk.Xc, Y - ybar, Z - zbar, u - ubar) + mean_part[None]
        # sample-mean version: plain part about sample means, mean part at sample means
        r_s = plain(chunk.Xc - xs, Y - ys, Z - zs, u - us) + (mean_part + sample_shift)[None]
        norms = np.linalg.norm(r, axis=-1)
        zT = zeta_T[0] + chunk.W[:, -1, None] * zeta_T[1]
        out = {"abs": norms.sum(0), "sup": float(norms.max()),
               "abs_s": np.linalg.norm(r_s, axis=-1).sum(0),
               "term": float(np.linalg.norm(Y[:, -1] - zT, axis=-1).sum())}
        if vs:
            out["pair"] = np.stack([(np.einsum("pki,ki->pk", r, a) + chunk.W * np.einsum("pki,ki->pk", r, b)) @ w
                                    for a, b in vs], -1)
        return out

    parts = ensemble.map_chunks(residuals)
    profile = sum(p["abs"] for p in parts) / P
    profile_s = sum(p["abs_s"] for p in parts) / P
    pair_mean, pair_se = [], []
    if vs:
        pr = np.concatenate([p["pair"] for p in parts])
        pair_mean = [float(x) for x in pr.mean(0)]
        pair_se = [_stderr(pr[:, j]) for j in range(pr.shape[1])]
    return StationarityReport(
        sup_residual=max(p["sup"] for p in parts), node_profile=profile, paths_used=P,
        sample_mean_profile=profile_s, terminal_mismatch=sum(p["term"] for p in parts) / P,
        pairings=pair_mean, pairing_stderr=pair_se)


# ------------------------------------------------------------ convexity

CERT_EIG_KEYS = ("min_eig_upsilon", "min_eig_upsilon_tilde", "min_eig_weighted", "min_eig_weighted_tilde")
CERT_INV_KEYS = ("min_inv_margin_R11", "min_inv_margin_R11_tilde")


@dataclass
class ConvexityCertificate:
    passed: bool
    margins: dict
    alpha_empirical: float
    routes: dict = field(default_factory=dict)
    failure: Optional[dict] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _min_eig(stack: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (stack + _T(stack))).min())


def convexity_certificate(spec: ProblemSpec, grid: Grid, h=None, family_size: int = 32,
                          seed: int = 7) -> ConvexityCertificate:
    """Sufficient uniform-convexity check.

    Riccati route: R22, R̃22 ≫ 0, Υ, Υ̃ ≥ 0, I + ΥR11 and I + ΥR̃11 invertible and
    (I + ΥR11)⁻¹Υ, (I + ΥR̃11)⁻¹Υ ≥ 0. With h, the equivalent cost J_h (equal to J
    on the homogeneous problem) is formed first and a weight route is added: the
    transformed weights M_h, M̃_h ≫ 0 and G_h, G̃_h ≥ 0 bound J_h(0;u) below by a
    multiple of ∫E|u|² directly. alpha_empirical is min J₀(0;v)/∫E|v|² over a
    seeded family of affine v.
    """
    work = equivalent_spec(spec, h) if h is not None else spec
    tab = work.table(grid.times)
    margins = {"min_eig_R22": sym_eig_min(tab.R22), "min_eig_R22_tilde": sym_eig_min(tab.R22t)}
    r22_ok = margins["min_eig_R22"] >= EIG_TOL and margins["min_eig_R22_tilde"] >= EIG_TOL
    failure = None
    try:
        normal = reduce(work, grid)
        ric = solve_upsilon(normal)
        margins.update({k: ric.cert[k] for k in CERT_EIG_KEYS + CERT_INV_KEYS})
        riccati_ok = (all(margins[k] >= -EIG_TOL for k in CERT_EIG_KEYS)
                      and all(margins[k] >= EIG_TOL for k in CERT_INV_KEYS))
    except SolveError as exc:
        failure = {"equation": exc.equation, "time": exc.time, "message": str(exc)}
        margins.update({k: None for k in CERT_EIG_KEYS + CERT_INV_KEYS})
        riccati_ok = False
    routes = {"riccati": bool(r22_ok and riccati_ok)}
    if h is not None:
        model = CostModel.build(work, grid)
        margins.update({
            "min_eig_weight_h": _min_eig(model.M),
            "min_eig_weight_h_tilde": _min_eig(model.M + model.M_hat),
            "min_eig_G_h": _min_eig(work.G[None]),
            "min_eig_G_h_tilde": _min_eig((work.G + work.G_hat)[None])})
        routes["weights"] = bool(r22_ok and margins["min_eig_weight_h"] >= EIG_TOL
                                 and margins["min_eig_weight_h_tilde"] >= EIG_TOL
                                 and margins["min_eig_G_h"] >= -EIG_TOL
                                 and margins["min_eig_G_h_tilde"] >= -EIG_TOL)
    hom = spec.homogeneous()
    zero = TerminalData.zero(spec.n)
    ratios = [evaluate_cost(hom, v, zero) / control_energy(v)
              for v in random_affine_family(grid, spec.m, family_size, seed)]
    return ConvexityCertificate(any(routes.values()), margins, float(min(ratios)), routes, failure)
