"""Deterministic numerical kernels: uniform grids, matrix paths, RK4, quadrature, dense solves."""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
import scipy.linalg

from .errors import NonFinite, NotSymmetric, Singular

SINGULAR_RTOL = 1e-12
SYMMETRY_RTOL = 1e-12


@dataclass(frozen=True)
class Grid:
    """Uniform grid t_k = k*T/N on [0, T]."""

    T: float
    N: int

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("grid needs N >= 2")
        if not self.T > 0:
            raise ValueError("horizon T must be positive")

    @property
    def h(self) -> float:
        return self.T / self.N

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.N + 1) * self.h

    @property
    def half_times(self) -> np.ndarray:
        """Nodes and midpoints, i.e. every time an RK4 step visits."""
        return np.arange(2 * self.N + 1) * (self.h / 2)

    def half_index(self, t: float) -> Optional[int]:
        """Index into half_times when t lies on that lattice, else None."""
        x = t / (self.h / 2)
        j = int(round(x))
        if abs(x - j) < 1e-7 and 0 <= j <= 2 * self.N:
            return j
        return None


class MatrixPath:
    """Matrix (or vector) valued trajectory on a grid.

    Values are interpolated linearly between nodes, or by cubic Hermite
    interpolation when node slopes are stored (as for paths produced by
    integrate_ode). Midpoints used by RK4 stages (on_half_grid) are always
    cubic, which keeps stage evaluations fourth-order accurate.
    """

    def __init__(self, grid: Grid, values: np.ndarray, slopes: Optional[np.ndarray] = None,
                 midpoints: Optional[np.ndarray] = None):
        values = np.asarray(values, dtype=float)
        if values.shape[0] != grid.N + 1:
            raise ValueError(f"expected {grid.N + 1} nodes, got {values.shape[0]}")
        if slopes is not None:
            slopes = np.asarray(slopes, dtype=float)
            if slopes.shape != values.shape:
                raise ValueError("slopes must match values in shape")
        self.grid = grid
        self.values = values
        self.slopes = slopes
        self._half = None
        if midpoints is not None:
            # explicit interval midpoint values, used by on_half_grid
            midpoints = np.asarray(midpoints, dtype=float)
            half = np.empty((2 * grid.N + 1,) + values.shape[1:])
            half[0::2] = values
            half[1::2] = midpoints
            self._half = half

    @property
    def shape(self) -> tuple:
        return self.values.shape[1:]

    def __len__(self) -> int:
        return self.values.shape[0]

    def __getitem__(self, k):
        return self.values[k]

    def at(self, t):
        """Evaluate at a scalar time or an array of times."""
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        h = self.grid.h
        x = np.clip(t / h, 0.0, float(self.grid.N))
        k = np.minimum(np.floor(x).astype(int), self.grid.N - 1)
        s = (x - k).reshape((-1,) + (1,) * len(self.shape))
        y0, y1 = self.values[k], self.values[k + 1]
        if self.slopes is None:
            out = y0 + s * (y1 - y0)
        else:
            m0, m1 = self.slopes[k] * h, self.slopes[k + 1] * h
            s2, s3 = s * s, s * s * s
            out = ((2 * s3 - 3 * s2 + 1) * y0 + (s3 - 2 * s2 + s) * m0
                   + (-2 * s3 + 3 * s2) * y1 + (s3 - s2) * m1)
        return out[0] if scalar else out

    def on_half_grid(self) -> np.ndarray:
        """Values at every node and midpoint (cached)."""
        if self._half is None:
            half = np.empty((2 * self.grid.N + 1,) + self.shape)
            half[0::2] = self.values
            if self.slopes is None and self.grid.N >= 3:
                half[1::2] = _cubic_midpoints(self.values)
            else:
                mids = (np.arange(self.grid.N) + 0.5) * self.grid.h
                half[1::2] = self.at(mids)
            self._half = half
        return self._half

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "MatrixPath":
        """Apply fn to the stacked node values (no slopes carried over)."""
        return MatrixPath(self.grid, fn(self.values))

    @classmethod
    def from_half_grid(cls, grid: Grid, half: np.ndarray) -> "MatrixPath":
        """Path from values on the node/midpoint lattice."""
        half = np.asarray(half, dtype=float)
        return cls(grid, half[0::2], midpoints=half[1::2])

    @classmethod
    def constant(cls, grid: Grid, value) -> "MatrixPath":
        value = np.asarray(value, dtype=float)
        vals = np.broadcast_to(value, (grid.N + 1,) + value.shape).copy()
        return cls(grid, vals, np.zeros_like(vals))


def _cubic_midpoints(v: np.ndarray) -> np.ndarray:
    """Interval midpoints from the cubic through four neighbouring nodes (one-sided at the ends)."""
    mid = np.empty((v.shape[0] - 1,) + v.shape[1:])
    mid[1:-1] = (-v[:-3] + 9 * v[1:-2] + 9 * v[2:-1] - v[3:]) / 16
    mid[0] = (5 * v[0] + 15 * v[1] - 5 * v[2] + v[3]) / 16
    mid[-1] = (5 * v[-1] + 15 * v[-2] - 5 * v[-3] + v[-4]) / 16
    return mid


def _rk4_step(rhs, t, y, dt, k1):
    k2 = rhs(t + dt / 2, y + (dt / 2) * k1)
    k3 = rhs(t + dt / 2, y + (dt / 2) * k2)
    k4 = rhs(t + dt, y + dt * k3)
    return y + (dt / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def integrate_ode(
    rhs: Callable[[float, np.ndarray], np.ndarray],
    init,
    grid: Grid,
    direction: str = "forward",
    *,
    project: Optional[Callable[[np.ndarray], np.ndarray]] = None,
    substeps: Optional[Callable[[float, np.ndarray, np.ndarray, float], int]] = None,
) -> MatrixPath:
    """Classical RK4 with step T/N, forward from t=0 or backward from t=T.

    rhs(t, y) returns dy/dt. `project` is applied after every step (used to
    symmetrize Riccati iterates). `substeps(t, y, k1, dt)` may ask for an
    integer number of equal RK4 substeps within a grid interval; it must be a
    deterministic function of its arguments. Node slopes are stored so the
    returned path interpolates by cubic Hermite.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    y = np.array(init, dtype=float)
    N, h = grid.N, grid.h
    times = grid.times
    values = np.empty((N + 1,) + y.shape)
    slopes = np.empty_like(values)
    if direction == "forward":
        order, dt = range(N), h
        start = 0
    else:
        order, dt = range(N, 0, -1), -h
        start = N
    values[start] = y
    for k in order:
        t = times[k]
        k1 = np.asarray(rhs(t, y), dtype=float)
        slopes[k] = k1
        m = 1 if substeps is None else max(1, int(substeps(t, y, k1, dt)))
        if m == 1:
            y = _rk4_step(rhs, t, y, dt, k1)
            if project is not None:
                y = project(y)
        else:
            sub = dt / m
            for j in range(m):
                ts = t + j * sub
                kk = k1 if j == 0 else np.asarray(rhs(ts, y), dtype=float)
                y = _rk4_step(rhs, ts, y, sub, kk)
                if project is not None:
                    y = project(y)
                if not np.all(np.isfinite(y)):
                    raise NonFinite("non-finite value during integration", time=float(ts + sub))
        knext = k + 1 if direction == "forward" else k - 1
        if not np.all(np.isfinite(y)):
            raise NonFinite("non-finite value during integration", time=float(times[knext]))
        values[knext] = y
    end = N if direction == "forward" else 0
    slopes[end] = rhs(times[end], y)
    if not np.all(np.isfinite(slopes)):
        raise NonFinite("non-finite slope during integration", time=float(times[end]))
    return MatrixPath(grid, values, slopes)


def integrate_linear_ode(M_half, F_half, init, grid: Grid, direction: str = "forward") -> MatrixPath:
    """RK4 for the linear system ẏ = M(t)y + F(t) with coefficients tabulated on half_times.

    Each RK4 step of a linear system is an affine map y ↦ S_k y + c_k; the maps
    are formed for all steps at once and then applied in sequence. The result
    equals integrate_ode on the same data up to rounding.
    """
    if direction not in ("forward", "backward"):
        raise ValueError("direction must be 'forward' or 'backward'")
    M = np.asarray(M_half, dtype=float)
    F = np.asarray(F_half, dtype=float)
    N, d = grid.N, M.shape[-1]
    eye = np.eye(d)
    if direction == "forward":
        M0, Mm, M1, F0, Fm, F1, dt = M[0:-2:2], M[1::2], M[2::2], F[0:-2:2], F[1::2], F[2::2], grid.h
    else:
        M0, Mm, M1, F0, Fm, F1, dt = M[2::2], M[1::2], M[0:-2:2], F[2::2], F[1::2], F[0:-2:2], -grid.h
    mv = lambda A, v: (A @ v[..., None])[..., 0]  # noqa: E731
    A1, b1 = M0, F0
    A2, b2 = Mm @ (eye + dt / 2 * A1), mv(Mm, dt / 2 * b1) + Fm
    A3, b3 = Mm @ (eye + dt / 2 * A2), mv(Mm, dt / 2 * b2) + Fm
    A4, b4 = M1 @ (eye + dt * A3), mv(M1, dt * b3) + F1
    S = eye + dt / 6 * (A1 + 2 * A2 + 2 * A3 + A4)
    c = dt / 6 * (b1 + 2 * b2 + 2 * b3 + b4)
    y = np.array(init, dtype=float).reshape(d)
    values = np.empty((N + 1, d))
    order = range(N) if direction == "forward" else range(N - 1, -1, -1)
    values[0 if direction == "forward" else N] = y
    for k in order:
        y = S[k] @ y + c[k]
        values[k + 1 if direction == "forward" else k] = y
    if not np.all(np.isfinite(values)):
        bad = np.nonzero(~np.isfinite(values).all(axis=1))[0]
        raise NonFinite("non-finite value during integration", time=float(grid.times[bad[0]]))
    slopes = mv(M[0::2], values) + F[0::2]
    return MatrixPath(grid, values, slopes)


def quad_trapezoid(values, grid: Grid) -> float:
    """Composite trapezoid rule over the grid for a scalar path."""
    v = np.asarray(values, dtype=float)
    if v.shape[0] != grid.N + 1:
        raise ValueError("path length does not match grid")
    return float((v[0] / 2 + v[1:-1].sum(axis=0) + v[-1] / 2) * grid.T / grid.N)


def trapezoid_weights(grid: Grid) -> np.ndarray:
    w = np.full(grid.N + 1, grid.h)
    w[0] = w[-1] = grid.h / 2
    return w


def gregory_weights(grid: Grid) -> np.ndarray:
    """Trapezoid weights with the Gregory end correction.

    The h²/12·(f'(T) − f'(0)) error term of the trapezoid rule is removed using
    one-sided three-point differences, giving a fourth-order rule that is still
    exact on linear integrands. Falls back to the plain rule for N < 4.
    """
    w = trapezoid_weights(grid)
    if grid.N >= 4:
        c = grid.h / 24
        w[:3] += c * np.array([-3.0, 4.0, -1.0])
        w[-3:] += c * np.array([-1.0, 4.0, -3.0])
    return w


def solve_linear(mat, rhs) -> np.ndarray:
    """Solve mat @ X = rhs by partially pivoted LU.

    Raises Singular when a pivot falls below 1e-12 times the largest row norm.
    """
    mat = np.asarray(mat, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
        raise ValueError("solve_linear needs a square matrix")
    if mat.shape[0] == 1:
        # the row norm is |pivot| itself, so only an exact zero (or NaN) is singular
        piv = float(mat[0, 0])
        if not abs(piv) > 0.0:
            raise Singular(f"pivot {piv:.3e} below threshold")
        return rhs / piv
    scale = np.abs(mat).sum(axis=1).max() if mat.size else 0.0
    with warnings.catch_warnings():
        # singularity is reported through the pivot test below
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, perm = scipy.linalg.lu_factor(mat, check_finite=False)
    diag = np.abs(np.diag(lu))
    if scale == 0.0 or diag.min() < SINGULAR_RTOL * scale:
        raise Singular(f"pivot {diag.min():.3e} below threshold")
    return scipy.linalg.lu_solve((lu, perm), rhs, check_finite=False)


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + np.swapaxes(m, -1, -2))


def is_symmetric(m, rtol: float = SYMMETRY_RTOL) -> bool:
    m = np.asarray(m, dtype=float)
    scale = max(np.abs(m).max(initial=0.0), 1.0)
    return bool(np.abs(m - np.swapaxes(m, -1, -2)).max(initial=0.0) <= rtol * scale)


def sym_eig_min(m, rtol: float = 1e-9) -> float:
    """Smallest eigenvalue of a symmetric matrix (or the min over a stack)."""
    m = np.asarray(m, dtype=float)
    if not is_symmetric(m, rtol):
        raise NotSymmetric("matrix is not symmetric within tolerance")
    if m.shape[-1] == 0:
        return float("inf")
    return float(np.linalg.eigvalsh(symmetrize(m)).min())


def node_matvec(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    """Per-node products M[k] @ X[p, k] for M (K, i, j) and path arrays X (P, K, j)."""
    if M.shape[-1] == 1:
        return M[None, :, :, 0] * X[:, :, 0, None]
    return np.matmul(X.swapaxes(0, 1), M.swapaxes(1, 2)).swapaxes(0, 1)
