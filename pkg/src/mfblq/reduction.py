"""Reduction to normal form, the control transform, and the equivalent-cost family J_h."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import Singular, SolveError
from .model import CoeffFn, ProblemSpec, TerminalData, coeff_diff, coeff_sum
from .numerics import Grid, MatrixPath, solve_linear
from .riccati import solve_phi

T_ = lambda x: np.swapaxes(x, -1, -2)  # noqa: E731


def _bsolve(M, rhs, what: str):
    """Batched solve with the singularity check applied node by node."""
    try:
        return np.stack([solve_linear(M[i], rhs[i]) for i in range(M.shape[0])])
    except SolveError as exc:
        raise type(exc)(f"{what} not invertible", equation=what) from None


def _derived(inputs: dict, fn: Callable[..., dict], shapes: dict) -> dict:
    """Build CoeffFns for fn(**batched inputs).

    All-constant inputs give constant outputs; otherwise each output is a
    callable sharing one cached evaluation per time array.
    """
    if all(isinstance(v, np.ndarray) or v.is_constant for v in inputs.values()):
        vals = {k: (v if isinstance(v, np.ndarray) else v.value)[None] for k, v in inputs.items()}
        out = fn(**vals)
        return {k: CoeffFn.constant(out[k][0]) for k in shapes}
    cache = {}

    def evaluate(ts):
        key = ts.tobytes()
        if key not in cache:
            cache.clear()
            args = {k: (np.broadcast_to(v, (ts.size,) + v.shape) if isinstance(v, np.ndarray) else v.at(ts))
                    for k, v in inputs.items()}
            cache[key] = fn(**args)
        return cache[key]

    return {k: CoeffFn.from_callable(lambda ts, k=k: evaluate(np.atleast_1d(ts))[k], shapes[k]) for k in shapes}


def _path_coeff(path: MatrixPath) -> CoeffFn:
    """View a MatrixPath as a coefficient (Hermite interpolation between nodes)."""
    return CoeffFn.from_callable(lambda ts: path.at(ts), path.shape)


# ------------------------------------------------------------- normal form

@dataclass
class NormalFormProblem:
    """A problem with G = G̃ = 0, Q = Q̃ = 0, R12 = R̃12 = 0 and its link to the original.

    For any control, J_original(u) = J_normal(u0) − offset(ζ), where u0 is the
    image of u under map_control and the state (Y, Z) is shared.
    """

    spec: ProblemSpec
    grid: Grid
    phi: MatrixPath
    phi_tilde: MatrixPath
    original: ProblemSpec

    def offset(self, zeta: Optional[TerminalData] = None) -> float:
        """½(T·ζ1ᵀΦ(T)ζ1 + ζ0ᵀΦ̃(T)ζ0)."""
        if zeta is None:
            zeta = self.spec.terminal
        P, Pt = self.phi.values[-1], self.phi_tilde.values[-1]
        return 0.5 * (self.spec.T * zeta.zeta1 @ P @ zeta.zeta1 + zeta.zeta0 @ Pt @ zeta.zeta0)

    offset_fn = offset

    @property
    def original_dims(self) -> tuple:
        return (self.original.n, self.original.m)


def is_normal_form(spec: ProblemSpec) -> bool:
    zero = lambda cf: cf.is_constant and not np.any(cf.value)  # noqa: E731
    return (not np.any(spec.G) and not np.any(spec.G_hat)
            and all(zero(getattr(spec, k)) for k in ("Q", "Q_hat", "R12", "R12_hat")))


def _check_r22(spec: ProblemSpec, grid: Grid):
    tab = spec.table(grid.times)
    for name, M in (("R22", tab.R22), ("R22_tilde", tab.R22t)):
        for k in range(M.shape[0]):
            try:
                solve_linear(M[k], np.eye(spec.m))
            except SolveError:
                raise Singular(f"{name} not invertible", equation=name, time=float(grid.times[k])) from None


def _reduced_formulas(A, B, C, At, Bt, Ct, S1, S2, S1t, S2t, R11, R12, R22, R11t, R12t, R22t,
                      f, q, rho1, rho2, P, Pt):
    K12 = np.linalg.solve(R22, T_(R12))
    K12t = np.linalg.solve(R22t, T_(R12t))
    Cn = C - B @ K12
    Cnt = Ct - Bt @ K12t
    S1n = S1 - S2 @ K12 + P @ Cn
    S1nt = S1t - S2t @ K12t + Pt @ Cnt
    S2n = S2 + P @ B
    S2nt = S2t + Pt @ Bt
    R11n = R11 - R12 @ K12 + P
    R11nt = R11t - R12t @ K12t + P
    qn = q + (Pt @ f[..., None])[..., 0]
    rho1n = rho1 - (R12t @ np.linalg.solve(R22t, rho2[..., None]))[..., 0]
    sym = lambda x: 0.5 * (x + T_(x))  # noqa: E731
    R11n, R11nt = sym(R11n), sym(R11nt)
    return {
        "C": Cn, "C_hat": Cnt - Cn, "S1": S1n, "S1_hat": S1nt - S1n, "S2": S2n, "S2_hat": S2nt - S2n,
        "R11": R11n, "R11_hat": R11nt - R11n, "q": qn, "rho1": rho1n,
    }


def reduce(spec: ProblemSpec, grid: Grid) -> NormalFormProblem:
    """Transform to normal form via the Φ, Φ̃ flows."""
    _check_r22(spec, grid)
    phi, phit = solve_phi(spec, grid)
    if is_normal_form(spec):
        return NormalFormProblem(spec, grid, phi, phit, spec)
    tilde_of = lambda b: (getattr(spec, b), getattr(spec, b + "_hat"))  # noqa: E731
    inputs = {}
    for b in ("A", "B", "C", "S1", "S2", "R11", "R12", "R22"):
        plain, hat = tilde_of(b)
        inputs[b] = plain
        inputs[b + "t"] = coeff_sum(plain, hat)
    for k in ("f", "q", "rho1", "rho2"):
        inputs[k] = getattr(spec, k)
    if spec.is_constant and np.all(phi.values == phi.values[0]) and np.all(phit.values == phit.values[0]):
        inputs["P"], inputs["Pt"] = phi.values[0].copy(), phit.values[0].copy()
    else:
        inputs["P"], inputs["Pt"] = _path_coeff(phi), _path_coeff(phit)
    n, m = spec.n, spec.m
    shapes = {"C": (n, n), "C_hat": (n, n), "S1": (n, n), "S1_hat": (n, n), "S2": (n, m), "S2_hat": (n, m),
              "R11": (n, n), "R11_hat": (n, n), "q": (n,), "rho1": (n,)}
    new = _derived(inputs, _reduced_formulas, shapes)
    zn, zm = CoeffFn.zeros((n, n)), CoeffFn.zeros((n, m))
    nspec = replace(spec, G=np.zeros((n, n)), G_hat=np.zeros((n, n)), Q=zn, Q_hat=zn, R12=zm, R12_hat=zm, **new)
    return NormalFormProblem(nspec, grid, phi, phit, spec)


# ---------------------------------------------------------- control transform

def map_control(normal: NormalFormProblem, u, direction: str, Z):
    """Map an affine control between the original and the normal-form problem.

    u0 = u + R22⁻¹R12ᵀ(Z − E[Z]) + R̃22⁻¹R̃12ᵀE[Z] (to_normal); the inverse
    subtracts the same terms. Z is the companion AffineProcess of the state.
    """
    from .processes import AffineProcess
    if direction not in ("to_normal", "to_original"):
        raise ValueError("direction must be 'to_normal' or 'to_original'")
    spec = normal.original
    grid = u.grid
    tab = spec.table(grid.times)
    K12 = _bsolve(tab.R22, T_(tab.R12), "R22")
    K12t = _bsolve(tab.R22t, T_(tab.R12t), "R22_tilde")
    da = (K12t @ Z.a.values[..., None])[..., 0]
    db = (K12 @ Z.b.values[..., None])[..., 0]
    sign = 1.0 if direction == "to_normal" else -1.0
    return AffineProcess(MatrixPath(grid, u.a.values + sign * da), MatrixPath(grid, u.b.values + sign * db))


# ------------------------------------------------------- equivalent costs J_h

@dataclass
class EquivCoeffs:
    Q_h: CoeffFn
    S1_h: CoeffFn
    S2_h: CoeffFn
    N1_h: CoeffFn
    Qt_h: CoeffFn
    S1t_h: CoeffFn
    S2t_h: CoeffFn
    N1t_h: CoeffFn
    qt_h: CoeffFn
    H: CoeffFn
    Ht: CoeffFn
    Hdot: CoeffFn
    Htdot: CoeffFn


def _h_coeffs(spec: ProblemSpec, h) -> tuple:
    if len(h) == 2:
        H, Ht = h
        Hd, Htd = 0.0, 0.0
    else:
        H, Ht, Hd, Htd = h
    n = spec.n
    out = []
    for v in (H, Ht, Hd, Htd):
        if isinstance(v, CoeffFn):
            if v.shape != (n, n):
                raise ValueError(f"h component has shape {v.shape}, expected {(n, n)}")
            out.append(v)
        elif isinstance(v, MatrixPath):
            out.append(_path_coeff(v))
        else:
            a = np.array(v, dtype=float)
            a = a * np.eye(n) if a.ndim == 0 else a
            if a.shape != (n, n):
                raise ValueError(f"h component has shape {a.shape}, expected {(n, n)}")
            out.append(CoeffFn.constant(a))
    return tuple(out)


def _equiv_formulas(A, At, B, Bt, C, Ct, Q, Qt, S1, S1t, S2, S2t, R11, R11t, f, q, H, Ht, Hd, Htd):
    fv = f[..., None]
    return {
        "Q_h": Q + Hd + H @ A + T_(A) @ H,
        "S1_h": S1 + H @ C,
        "S2_h": S2 + H @ B,
        "N1_h": R11 + H,
        "Qt_h": Qt + Htd + Ht @ At + T_(At) @ Ht,
        "S1t_h": S1t + Ht @ Ct,
        "S2t_h": S2t + Ht @ Bt,
        "N1t_h": R11t + H,
        "qt_h": q + (Ht @ fv)[..., 0],
    }


def equivalent_coeffs(spec: ProblemSpec, h) -> EquivCoeffs:
    """Weights of the equivalent functional J_h for h = (H, H̃[, Ḣ, H̃̇]).

    Derivatives default to zero (constant h). The original Q, Q̃, G, G̃ and R12
    enter additively, so the identity J = J_h − shift holds on any spec.
    """
    H, Ht, Hd, Htd = _h_coeffs(spec, h)
    inputs = {}
    for b in ("A", "B", "C", "Q", "S1", "S2", "R11"):
        inputs[b] = getattr(spec, b)
        inputs[b + "t"] = coeff_sum(getattr(spec, b), getattr(spec, b + "_hat"))
    inputs.update(f=spec.f, q=spec.q, H=H, Ht=Ht, Hd=Hd, Htd=Htd)
    n, m = spec.n, spec.m
    shapes = {"Q_h": (n, n), "S1_h": (n, n), "S2_h": (n, m), "N1_h": (n, n), "Qt_h": (n, n),
              "S1t_h": (n, n), "S2t_h": (n, m), "N1t_h": (n, n), "qt_h": (n,)}
    out = _derived(inputs, _equiv_formulas, shapes)
    return EquivCoeffs(H=H, Ht=Ht, Hdot=Hd, Htdot=Htd, **out)


def equivalent_spec(spec: ProblemSpec, h) -> ProblemSpec:
    """The problem whose cost is J_h (same dynamics and terminal data)."""
    e = equivalent_coeffs(spec, h)
    H0, Ht0 = e.H.at(0.0), e.Ht.at(0.0)
    return replace(
        spec,
        Q=e.Q_h, Q_hat=coeff_diff(e.Qt_h, e.Q_h),
        S1=e.S1_h, S1_hat=coeff_diff(e.S1t_h, e.S1_h),
        S2=e.S2_h, S2_hat=coeff_diff(e.S2t_h, e.S2_h),
        R11=e.N1_h, R11_hat=coeff_diff(e.N1t_h, e.N1_h),
        q=e.qt_h,
        G=spec.G + H0, G_hat=spec.G_hat + Ht0 - H0,
    )


def equivalent_cost_shift(spec: ProblemSpec, h, zeta: Optional[TerminalData] = None) -> float:
    """½(T·ζ1ᵀH(T)ζ1 + ζ0ᵀH̃(T)ζ0), so that J = J_h − shift."""
    if zeta is None:
        zeta = spec.terminal
    H, Ht, _, _ = _h_coeffs(spec, h)
    HT, HtT = H.at(spec.T), Ht.at(spec.T)
    return 0.5 * (spec.T * zeta.zeta1 @ HT @ zeta.zeta1 + zeta.zeta0 @ HtT @ zeta.zeta0)
