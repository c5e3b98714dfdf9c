"""Affine-in-Brownian solutions of the linear mean-field BSDEs and Monte Carlo for the adjoint X."""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterator, Optional

import numpy as np

from .model import ProblemSpec, TerminalData
from .numerics import Grid, MatrixPath, integrate_linear_ode, integrate_ode, node_matvec
from .riccati import RiccatiSolution, gain_bundle

DEFAULT_CHUNK = 2048


def _mv(M, v):
    """Batched matrix-vector product over leading axes."""
    return (M @ v[..., None])[..., 0]


@dataclass
class AffineProcess:
    """V(t) = a(t) + b(t)·W(t) with deterministic vector paths a, b."""

    a: MatrixPath
    b: MatrixPath

    @property
    def grid(self) -> Grid:
        return self.a.grid

    @property
    def dim(self) -> int:
        return self.a.shape[0]

    @classmethod
    def constant(cls, grid: Grid, a, b) -> "AffineProcess":
        return cls(MatrixPath.constant(grid, np.atleast_1d(np.asarray(a, float))),
                   MatrixPath.constant(grid, np.atleast_1d(np.asarray(b, float))))

    @classmethod
    def zeros(cls, grid: Grid, dim: int) -> "AffineProcess":
        return cls.constant(grid, np.zeros(dim), np.zeros(dim))

    def mean(self) -> np.ndarray:
        return self.a.values

    def second_moment(self) -> np.ndarray:
        """E[VVᵀ] at each node: aaᵀ + t·bbᵀ."""
        a, b = self.a.values, self.b.values
        t = self.grid.times[:, None, None]
        return a[:, :, None] * a[:, None, :] + t * b[:, :, None] * b[:, None, :]

    def sample(self, W: np.ndarray) -> np.ndarray:
        """Pathwise values for Brownian paths W of shape (P, N+1)."""
        return self.a.values[None] + W[..., None] * self.b.values[None]

    def scaled(self, c: float) -> "AffineProcess":
        return AffineProcess(_scale_path(self.a, c), _scale_path(self.b, c))

    def plus(self, other: "AffineProcess") -> "AffineProcess":
        return AffineProcess(_add_paths(self.a, other.a), _add_paths(self.b, other.b))


def _scale_path(p: MatrixPath, c: float) -> MatrixPath:
    return MatrixPath.from_half_grid(p.grid, c * p.on_half_grid())


def _add_paths(p: MatrixPath, q: MatrixPath) -> MatrixPath:
    return MatrixPath.from_half_grid(p.grid, p.on_half_grid() + q.on_half_grid())


def _lattice_rhs(grid: Grid, fn: Callable[[int, np.ndarray], np.ndarray]):
    """Adapt fn(half-grid index, y) to the integrate_ode signature."""
    def rhs(t, y):
        j = grid.half_index(t)
        if j is None:
            raise ValueError(f"time {t} is off the RK4 lattice")
        return fn(j, y)
    return rhs


# ------------------------------------------------------------------ (η, β)

@dataclass
class EtaSolution:
    """η = a + bW, β = b, with the coefficient-matching residual of the BSDE."""

    eta: AffineProcess
    beta: MatrixPath
    residual: float

    def __iter__(self):
        yield self.eta
        yield self.beta


def _eta_tables(normal, ric: RiccatiSolution):
    grid = normal.grid
    tab = normal.spec.table(grid.half_times)
    gb = gain_bundle(tab, ric.upsilon.on_half_grid(), ric.upsilon_tilde.on_half_grid())
    G1 = tab.C + gb.U @ tab.S1               # C + ΥS1
    G1t = tab.Ct + gb.Ut @ tab.S1t           # C̃ + Υ̃S̃1
    GB = tab.B + gb.U @ tab.S2
    GBt = tab.Bt + gb.Ut @ tab.S2t
    T = lambda x: np.swapaxes(x, -1, -2)  # noqa: E731
    Fb = tab.A - G1 @ gb.LU @ T(tab.S1) - GB @ gb.R22S2
    Fa = tab.At - G1t @ gb.LUt @ T(tab.S1t) - GBt @ gb.R22S2t
    Fab = G1t @ gb.Lamt
    inh = (tab.f + _mv(gb.Ut, tab.q) - _mv(G1t @ gb.LUt, tab.rho1)
           - _mv(GBt, _inv_apply(tab.R22t, tab.rho2)))
    return Fa, Fb, Fab, inh


def _inv_apply(M, v):
    return np.linalg.solve(M, v[..., None])[..., 0]


def solve_eta(normal, ric: RiccatiSolution, zeta: Optional[TerminalData] = None) -> EtaSolution:
    """Solve the offset BSDE for η by the affine ansatz η = a + bW, β = b.

    Matching W-proportional and constant drift parts gives
      ḃ = [A − (C+ΥS1)ΛΥS1ᵀ − (B+ΥS2)R22⁻¹S2ᵀ] b,                     b(T) = ζ1,
      ȧ = [Ã − (C̃+Υ̃S̃1)Λ̃ΥS̃1ᵀ − (B̃+Υ̃S̃2)R̃22⁻¹S̃2ᵀ] a + (C̃+Υ̃S̃1)Λ̃ b
          + f + Υ̃q − (C̃+Υ̃S̃1)Λ̃Υρ1 − (B̃+Υ̃S̃2)R̃22⁻¹ρ2,                 a(T) = ζ0,
    with Λ = (I+ΥR11)⁻¹, Λ̃ = (I+ΥR̃11)⁻¹.
    """
    if zeta is None:
        zeta = normal.spec.terminal
    grid = normal.grid
    Fa, Fb, Fab, inh = _eta_tables(normal, ric)

    def fn(j, y):
        a, b = y
        return np.stack([Fa[j] @ a + Fab[j] @ b + inh[j], Fb[j] @ b])

    path = integrate_ode(_lattice_rhs(grid, fn), np.stack([zeta.zeta0, zeta.zeta1]), grid, "backward")
    a = MatrixPath(grid, path.values[:, 0], path.slopes[:, 0])
    b = MatrixPath(grid, path.values[:, 1], path.slopes[:, 1])
    sol = EtaSolution(AffineProcess(a, b), b, 0.0)
    sol.residual = eta_drift_residual(normal, ric, sol)
    return sol


def eta_display_drift(c, U, Ut, eta_c, eta_m, beta_c, beta_m):
    """Drift of the η-BSDE transcribed from its block-matrix form, stacked over nodes.

    Coefficients in c carry a leading node axis. eta_c / beta_c are the
    centered values η − E[η], β − E[β]; eta_m / beta_m the means.
    Inhomogeneities are deterministic so their centered parts vanish.
    """
    K, n, m = U.shape[0], U.shape[-1], c.R22.shape[-1]
    T = lambda x: np.swapaxes(x, -1, -2)  # noqa: E731
    eye = np.broadcast_to(np.eye(n), U.shape)

    def block_diag(top, bottom):
        D = np.zeros((K, n + m, n + m))
        D[:, :n, :n], D[:, n:, n:] = top, bottom
        return D

    L = np.concatenate([T(c.C) + T(c.S1) @ U, T(c.B) + T(c.S2) @ U], axis=1)
    D = block_diag(eye + U @ c.R11, c.R22)
    v = np.concatenate([_mv(U @ T(c.S1), eta_c) - beta_c, _mv(T(c.S2), eta_c)], axis=1)
    Lt = np.concatenate([T(c.Ct) + T(c.S1t) @ Ut, T(c.Bt) + T(c.S2t) @ Ut], axis=1)
    Dt = block_diag(eye + U @ c.R11t, c.R22t)
    vt = np.concatenate([_mv(U @ T(c.S1t), eta_m) + _mv(U, c.rho1) - beta_m,
                         _mv(T(c.S2t), eta_m) + c.rho2], axis=1)
    return (_mv(c.A, eta_c) + _mv(c.At, eta_m) + c.f + _mv(Ut, c.q)
            - _mv(T(L), _inv_apply(D, v)) - _mv(T(Lt), _inv_apply(Dt, vt)))


def _eta_drift_parts(normal, ric: RiccatiSolution, sol: EtaSolution, stop: int) -> tuple:
    """Constant and W-proportional drift parts at nodes 0..stop−1."""
    tab = normal.spec.table(normal.grid.times[:stop])
    a, b = sol.eta.a.values[:stop], sol.eta.b.values[:stop]
    U, Ut = ric.upsilon.values[:stop], ric.upsilon_tilde.values[:stop]
    zero = np.zeros_like(b)
    d0 = eta_display_drift(tab, U, Ut, zero, a, zero, b)
    d1 = eta_display_drift(tab, U, Ut, b, a, zero, b) - d0
    return d0, d1


def eta_drift_residual(normal, ric: RiccatiSolution, sol: EtaSolution) -> float:
    """Max over interior nodes of the mismatch between the BSDE drift and ȧ + ḃW, per W-coefficient."""
    N = normal.grid.N
    d0, d1 = _eta_drift_parts(normal, ric, sol, N)
    return float(max(np.abs(d0[1:] - sol.eta.a.slopes[1:N]).max(initial=0.0),
                     np.abs(d1[1:] - sol.eta.b.slopes[1:N]).max(initial=0.0)))


def eta_pathwise_residual(normal, ric: RiccatiSolution, sol: EtaSolution, n_paths: int, seed: int) -> dict:
    """Check η(T) − η(0) = Σ drift·h + Σ β ΔW along simulated Brownian paths.

    The drift is the block-matrix transcription of the BSDE, so this tests the
    affine ansatz against an independent Euler discretization.
    """
    grid = normal.grid
    a, b = sol.eta.a.values, sol.eta.b.values
    d0, d1 = _eta_drift_parts(normal, ric, sol, grid.N + 1)
    dW = brownian_increments(seed, 0, n_paths, grid)
    W = np.concatenate([np.zeros((n_paths, 1)), np.cumsum(dW, axis=1)], axis=1)
    h = grid.h
    lhs = (a[-1] - a[0])[None] + W[:, -1, None] * b[-1][None]
    drift = (d0[None, :-1] + W[:, :-1, None] * d1[None, :-1]).sum(axis=1) * h
    stoch = (dW[..., None] * b[None, :-1]).sum(axis=1)
    err = np.abs(lhs - drift - stoch).max(axis=-1)
    return {"mean_abs_error": float(err.mean()), "max_abs_error": float(err.max()), "paths": n_paths, "N": grid.N}


# ------------------------------------------------------------ state equation

@dataclass
class StateSolution:
    """Y = p + rW and Z = r (deterministic) under an affine control."""

    Y: AffineProcess
    Z: MatrixPath
    residual: float

    def __iter__(self):
        yield self.Y
        yield self.Z

    @property
    def Z_process(self) -> AffineProcess:
        return AffineProcess(self.Z, MatrixPath(self.Z.grid, np.zeros_like(self.Z.values)))


def solve_state_affine(spec: ProblemSpec, u: AffineProcess, zeta: Optional[TerminalData] = None,
                       check: bool = True) -> StateSolution:
    """State under u = u_a + u_b W: ṙ = Ar + Bu_b, ṗ = Ãp + B̃u_a + C̃r + f, p(T)=ζ0, r(T)=ζ1."""
    if zeta is None:
        zeta = spec.terminal
    grid = u.grid
    tab = spec.table(grid.half_times)
    ua, ub = u.a.on_half_grid(), u.b.on_half_grid()
    Bua = _mv(tab.Bt, ua) + tab.f
    Bub = _mv(tab.B, ub)

    n = spec.n
    M = np.zeros((len(grid.half_times), 2 * n, 2 * n))
    M[:, :n, :n], M[:, :n, n:], M[:, n:, n:] = tab.At, tab.Ct, tab.A
    F = np.concatenate([Bua, Bub], axis=-1)
    path = integrate_linear_ode(M, F, np.concatenate([zeta.zeta0, zeta.zeta1]), grid, "backward")
    p = MatrixPath(grid, path.values[:, :n], path.slopes[:, :n])
    r = MatrixPath(grid, path.values[:, n:], path.slopes[:, n:])
    sol = StateSolution(AffineProcess(p, r), r, 0.0)
    if check:
        sol.residual = _state_residual(spec, u, sol)
    return sol


def _state_residual(spec, u, sol) -> float:
    """Drift AY + ÂE[Y] + Bu + B̂E[u] + CZ + ĈE[Z] + f, split by W-coefficient, against ṗ + ṙW."""
    grid = u.grid
    tab = spec.table(grid.times)
    hat = {k: getattr(spec, k + "_hat").at(grid.times) for k in ("A", "B", "C")}
    p, r = sol.Y.a, sol.Y.b
    ua, ub = u.a.values, u.b.values

    def drift(W):
        Y = p.values + W * r.values
        uu = ua + W * ub
        Z = r.values
        return (_mv(tab.A, Y) + _mv(hat["A"], p.values) + _mv(tab.B, uu) + _mv(hat["B"], ua)
                + _mv(tab.C, Z) + _mv(hat["C"], r.values) + tab.f)

    d0, d1 = drift(0.0), drift(1.0)
    inner = slice(1, grid.N)
    return float(max(np.abs(d0 - p.slopes)[inner].max(initial=0.0),
                     np.abs(d1 - d0 - r.slopes)[inner].max(initial=0.0)))


# --------------------------------------------------------- Brownian streams

def path_generator(seed: int, path_index: int) -> np.random.Generator:
    """Counter-based stream for one path, keyed by (seed, path index)."""
    key = np.array([seed % 2**64, path_index], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def brownian_increments(seed: int, start: int, stop: int, grid: Grid) -> np.ndarray:
    """ΔW for paths start..stop-1, shape (stop-start, N); path i depends only on (seed, i)."""
    out = np.empty((stop - start, grid.N))
    sq = math.sqrt(grid.h)
    for row, i in enumerate(range(start, stop)):
        out[row] = path_generator(seed, i).standard_normal(grid.N)
    out *= sq
    return out


# ------------------------------------------------------------- adjoint X

@dataclass
class PathChunk:
    start: int
    stop: int
    dW: np.ndarray      # (P, N)
    W: np.ndarray       # (P, N+1)
    Xc: np.ndarray      # (P, N+1, n) fluctuation X − E[X]


class PathEnsemble:
    """Monte Carlo paths of the adjoint X = m + X°.

    Paths are produced in fixed chunks from per-path counter-based streams, so
    any chunk (and any reduction over chunks in index order) is bitwise
    reproducible for a given (seed, P, N) regardless of the worker count.
    Full arrays are only materialized on request.
    """

    def __init__(self, normal, ric: RiccatiSolution, eta: EtaSolution, g, seed: int, P: int,
                 workers: int = 1, chunk_size: int = DEFAULT_CHUNK):
        if P < 1:
            raise ValueError("need at least one path")
        self.normal, self.ric, self.eta = normal, ric, eta
        self.grid = normal.grid
        self.seed, self.P = int(seed), int(P)
        self.workers, self.chunk_size = max(1, int(workers)), int(chunk_size)
        spec = normal.spec
        self.g = np.asarray(g if g is not None else spec.g, dtype=float)
        grid = self.grid
        tab_half = spec.table(grid.half_times)
        gbh = gain_bundle(tab_half, ric.upsilon.on_half_grid(), ric.upsilon_tilde.on_half_grid())
        ah, bh = eta.eta.a.on_half_grid(), eta.eta.b.on_half_grid()
        T = lambda x: np.swapaxes(x, -1, -2)  # noqa: E731
        # mean ODE: ṁ = −F̃m + S̃1(Λ̃ΥS̃1ᵀa + Λ̃Υρ1 − Λ̃b) + S̃2R̃22⁻¹(S̃2ᵀa + ρ2) − q
        inh = (_mv(tab_half.S1t, _mv(gbh.LUt @ T(tab_half.S1t), ah) + _mv(gbh.LUt, tab_half.rho1)
                                  - _mv(gbh.Lamt, bh))
               + _mv(tab_half.S2t @ gbh.R22S2t, ah)
               + _mv(tab_half.S2t, _inv_apply(tab_half.R22t, tab_half.rho2)) - tab_half.q)
        Ft = gbh.Ft

        def fn(j, mval):
            return -Ft[j] @ mval + inh[j]

        self.mean = integrate_ode(_lattice_rhs(grid, fn), -self.g, grid, "forward")
        self.tab = spec.table(grid.times)
        self.gains = gain_bundle(self.tab, ric.upsilon.values, ric.upsilon_tilde.values)
        gb, tab = self.gains, self.tab
        a, b, m = eta.eta.a.values, eta.eta.b.values, self.mean.values
        self.drift_x = -gb.F
        self.drift_w = _mv(gb.Mf, b)
        Lr = T(gb.Lam)       # (I + R11Υ)⁻¹
        Lrt = T(gb.Lamt)     # (I + R̃11Υ)⁻¹
        self.diff_x = -Lr @ gb.CU
        self.diff_w = -_mv(Lr @ T(tab.S1), b)
        self.diff_0 = -_mv(Lrt, _mv(gb.CUt, m) + _mv(T(tab.S1t), a) + tab.rho1 + _mv(tab.R11t, b))
        self._full = None

    # chunk management -------------------------------------------------
    def chunk_ranges(self) -> list:
        return [(s, min(s + self.chunk_size, self.P)) for s in range(0, self.P, self.chunk_size)]

    def simulate_chunk(self, start: int, stop: int) -> PathChunk:
        grid = self.grid
        dW = brownian_increments(self.seed, start, stop, grid)
        P, N, n = stop - start, grid.N, self.normal.spec.n
        W = np.zeros((P, N + 1))
        np.cumsum(dW, axis=1, out=W[:, 1:])
        h = grid.h
        # integrate in time-major layout so each step touches contiguous memory
        Wt = np.ascontiguousarray(W.T)[..., None]
        dWt = np.ascontiguousarray(dW.T)[..., None]
        Xt = np.empty((N + 1, P, n))
        Xt[0] = 0.0
        step = np.eye(n) + h * self.drift_x          # I + h·drift
        dxT = np.swapaxes(self.diff_x, 1, 2)
        stepT = np.swapaxes(step, 1, 2)
        aw, dw, d0 = h * self.drift_w, self.diff_w, self.diff_0
        for k in range(N):
            x, wk = Xt[k], Wt[k]
            Xt[k + 1] = x @ stepT[k] + wk * aw[k] + (x @ dxT[k] + wk * dw[k] + d0[k]) * dWt[k]
        Xc = np.ascontiguousarray(Xt.transpose(1, 0, 2))
        return PathChunk(start, stop, dW, W, Xc)

    def map_chunks(self, fn: Callable[[PathChunk], object]) -> list:
        """Apply fn to every chunk; results are returned in chunk order."""
        ranges = self.chunk_ranges()
        job = lambda r: fn(self.simulate_chunk(*r))  # noqa: E731
        if self.workers == 1:
            return [job(r) for r in ranges]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(job, ranges))

    def iter_chunks(self) -> Iterator[PathChunk]:
        for r in self.chunk_ranges():
            yield self.simulate_chunk(*r)

    # full arrays (small P only) -----------------------------------------
    def _materialize(self):
        if self._full is None:
            chunks = self.map_chunks(lambda c: c)
            self._full = (np.concatenate([c.W for c in chunks]),
                          np.concatenate([c.dW for c in chunks]),
                          np.concatenate([c.Xc for c in chunks]) + self.mean.values[None])
        return self._full

    @property
    def paths(self) -> np.ndarray:
        """X for all paths, shape (P, N+1, n)."""
        return self._materialize()[2]

    @property
    def brownian(self) -> np.ndarray:
        """Brownian increments, shape (P, N)."""
        return self._materialize()[1]

    @property
    def W(self) -> np.ndarray:
        return self._materialize()[0]

    # reconstruction ---------------------------------------------------
    def affine_maps(self) -> dict:
        """Per-node coefficients of Y and Z as affine functions of (X°, W):
        Y = ΥX° + bW + Ȳ and
        Z = −ΛΥ(Cᵀ+S1ᵀΥ)X° − ΛΥS1ᵀb·W + Z̄, with the exact means Ȳ, Z̄.
        Each entry is a triple (coefficient on X°, coefficient on W, constant).
        """
        gb, tab = self.gains, self.tab
        b = self.eta.eta.b.values
        T = lambda x: np.swapaxes(x, -1, -2)  # noqa: E731
        return {"Y": (gb.U, b, self.y_mean()),
                "Z": (-gb.LU @ gb.CU, -_mv(gb.LU @ T(tab.S1), b), self.z_mean())}

    def reconstruct(self, chunk: PathChunk) -> tuple[np.ndarray, np.ndarray]:
        """Pathwise (Y, Z) from X, η, β (see affine_maps)."""
        W = chunk.W[..., None]
        maps = self.affine_maps()
        out = []
        for key in ("Y", "Z"):
            ax, aw, a0 = maps[key]
            out.append(node_matvec(ax, chunk.Xc) + W * aw[None] + a0[None])
        return out[0], out[1]

    def y_mean(self) -> np.ndarray:
        return _mv(self.gains.Ut, self.mean.values) + self.eta.eta.a.values

    def z_mean(self) -> np.ndarray:
        gb, tab = self.gains, self.tab
        a, b, m = self.eta.eta.a.values, self.eta.eta.b.values, self.mean.values
        T = lambda x: np.swapaxes(x, -1, -2)  # noqa: E731
        return -(_mv(gb.LUt @ gb.CUt, m) + _mv(gb.LUt @ T(tab.S1t), a) + _mv(gb.LUt, tab.rho1)
                 - _mv(gb.Lamt, b))


def simulate_adjoint(normal, ric: RiccatiSolution, eta_beta: EtaSolution, g=None, seed: int = 42,
                     P: int = 100_000, workers: int = 1, chunk_size: int = DEFAULT_CHUNK) -> PathEnsemble:
    """Exact mean path m = E[X] plus a lazily simulated Euler–Maruyama ensemble of X − m."""
    return PathEnsemble(normal, ric, eta_beta, g, seed, P, workers, chunk_size)


# ------------------------------------------------------------------ summary

def ensemble_summary(ens: PathEnsemble, quantiles=(0.05, 0.5, 0.95), max_rows: int = 101) -> dict:
    """Per-node mean and variance of X (all nodes) and quantiles at up to max_rows nodes."""
    grid = ens.grid
    stride = max(1, math.ceil(grid.N / (max_rows - 1)))
    qnodes = np.arange(0, grid.N + 1, stride)

    def part(c: PathChunk):
        X = c.Xc + ens.mean.values[None]
        return X.sum(axis=0), (X * X).sum(axis=0), X[:, qnodes]

    parts = ens.map_chunks(part)
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    P = ens.P
    mean = s1 / P
    var = np.maximum(s2 / P - mean * mean, 0.0) * (P / max(P - 1, 1))
    qvals = np.quantile(np.concatenate([p[2] for p in parts]), quantiles, axis=0)
    return {"times": grid.times, "mean": mean, "var": var, "quantile_nodes": qnodes,
            "quantiles": dict(zip(quantiles, qvals))}


def write_summary_csv(summary: dict, path) -> None:
    n = summary["mean"].shape[1]
    qn = set(summary["quantile_nodes"].tolist())
    qpos = {k: i for i, k in enumerate(summary["quantile_nodes"].tolist())}
    header = ["t"] + [f"mean_{i}" for i in range(n)] + [f"var_{i}" for i in range(n)]
    for q in summary["quantiles"]:
        header += [f"q{q:g}_{i}" for i in range(n)]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(summary["times"]):
            row = [t, *summary["mean"][k], *summary["var"][k]]
            for qv in summary["quantiles"].values():
                row += list(qv[qpos[k]]) if k in qn else [""] * n
            w.writerow([f"{x:.17g}" if isinstance(x, (float, np.floating)) else x for x in row])
