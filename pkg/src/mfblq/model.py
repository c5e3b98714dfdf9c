"""Problem data for mean-field backward LQ control: coefficients, validation, file format."""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace
from typing import Callable, Optional

import numpy as np

from .errors import ParseError
from .numerics import SYMMETRY_RTOL, Grid, is_symmetric

try:
    import tomllib as _toml_reader
except ModuleNotFoundError:  # Python < 3.11
    import tomli as _toml_reader
import tomli_w


class CoeffFn:
    """A time-dependent coefficient on [0, T].

    kind is "constant", "sampled" (piecewise linear through samples) or
    "callable" (a vectorized function of time, used for derived coefficients).
    """

    def __init__(self, kind: str, shape: tuple, *, value=None, times=None, samples=None, func=None):
        self.kind = kind
        self.shape = tuple(shape)
        self.value = value
        self.times = times
        self.samples = samples
        self.func = func

    @classmethod
    def constant(cls, value) -> "CoeffFn":
        value = np.array(value, dtype=float)
        value.setflags(write=False)
        return cls("constant", value.shape, value=value)

    @classmethod
    def sampled(cls, times, samples) -> "CoeffFn":
        times = np.array(times, dtype=float)
        samples = np.array(samples, dtype=float)
        if samples.shape[0] != times.shape[0]:
            raise ValueError("one sample per time required")
        times.setflags(write=False)
        samples.setflags(write=False)
        return cls("sampled", samples.shape[1:], times=times, samples=samples)

    @classmethod
    def from_callable(cls, func: Callable[[np.ndarray], np.ndarray], shape) -> "CoeffFn":
        """func maps a 1-d array of times to an array of shape (len(times),) + shape."""
        return cls("callable", shape, func=func)

    @classmethod
    def zeros(cls, shape) -> "CoeffFn":
        return cls.constant(np.zeros(shape))

    @property
    def is_constant(self) -> bool:
        return self.kind == "constant"

    def at(self, t):
        """Evaluate at a scalar time or a 1-d array of times."""
        scalar = np.ndim(t) == 0
        ts = np.atleast_1d(np.asarray(t, dtype=float))
        if self.kind == "constant":
            out = np.broadcast_to(self.value, (ts.size,) + self.shape)
        elif self.kind == "sampled":
            tt = self.times
            k = np.clip(np.searchsorted(tt, ts, side="right") - 1, 0, len(tt) - 2)
            w = ((ts - tt[k]) / (tt[k + 1] - tt[k])).reshape((-1,) + (1,) * len(self.shape))
            out = self.samples[k] + w * (self.samples[k + 1] - self.samples[k])
            exact = ts == tt[k + 1]
            if exact.any():
                out[exact] = self.samples[k + 1][exact]
        else:
            out = np.asarray(self.func(ts), dtype=float)
        return np.array(out[0]) if scalar else out

    def node_values(self) -> list:
        """Matrices that determine this coefficient (all samples, or the constant)."""
        if self.kind == "constant":
            return [self.value]
        if self.kind == "sampled":
            return list(self.samples)
        return []

    def same_as(self, other: "CoeffFn") -> bool:
        if self.kind != other.kind or self.shape != other.shape:
            return False
        if self.kind == "constant":
            return np.array_equal(self.value, other.value)
        if self.kind == "sampled":
            return np.array_equal(self.times, other.times) and np.array_equal(self.samples, other.samples)
        return self.func is other.func

    def __repr__(self) -> str:
        if self.kind == "constant":
            return f"CoeffFn.constant({self.value.tolist()!r})"
        return f"CoeffFn({self.kind}, shape={self.shape})"


def coeff_sum(a: CoeffFn, b: CoeffFn) -> CoeffFn:
    """Pointwise sum, kept exact: constants stay constant, samples merge breakpoints."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if a.is_constant and b.is_constant:
        return CoeffFn.constant(a.value + b.value)
    if a.kind != "callable" and b.kind != "callable":
        ts = np.union1d(a.times if a.kind == "sampled" else [], b.times if b.kind == "sampled" else [])
        return CoeffFn.sampled(ts, a.at(ts) + b.at(ts))
    return CoeffFn.from_callable(lambda ts: a.at(ts) + b.at(ts), a.shape)


def coeff_diff(a: CoeffFn, b: CoeffFn) -> CoeffFn:
    return coeff_sum(a, coeff_scale(b, -1.0))


def coeff_scale(a: CoeffFn, c: float) -> CoeffFn:
    if a.kind == "constant":
        return CoeffFn.constant(c * a.value)
    if a.kind == "sampled":
        return CoeffFn.sampled(a.times, c * a.samples)
    return CoeffFn.from_callable(lambda ts: c * a.at(ts), a.shape)


@dataclass(frozen=True)
class TerminalData:
    """Terminal value zeta0 + zeta1 * W(T)."""

    zeta0: np.ndarray
    zeta1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "zeta0", np.atleast_1d(np.array(self.zeta0, dtype=float)))
        object.__setattr__(self, "zeta1", np.atleast_1d(np.array(self.zeta1, dtype=float)))
        if self.zeta0.shape != self.zeta1.shape or self.zeta0.ndim != 1:
            raise ValueError("zeta0 and zeta1 must be vectors of equal length")

    @classmethod
    def zero(cls, n: int) -> "TerminalData":
        return cls(np.zeros(n), np.zeros(n))


# name -> (row dim, col dim) in terms of "n"/"m"; vectors have a single entry
MATRIX_COEFFS = {
    "A": ("n", "n"), "A_hat": ("n", "n"),
    "B": ("n", "m"), "B_hat": ("n", "m"),
    "C": ("n", "n"), "C_hat": ("n", "n"),
    "Q": ("n", "n"), "Q_hat": ("n", "n"),
    "S1": ("n", "n"), "S1_hat": ("n", "n"),
    "S2": ("n", "m"), "S2_hat": ("n", "m"),
    "R11": ("n", "n"), "R11_hat": ("n", "n"),
    "R12": ("n", "m"), "R12_hat": ("n", "m"),
    "R22": ("m", "m"), "R22_hat": ("m", "m"),
}
VECTOR_COEFFS = {"f": "n", "q": "n", "rho1": "n", "rho2": "m"}
SYMMETRIC_COEFFS = ("Q", "Q_hat", "R11", "R11_hat", "R22", "R22_hat")
DYNAMICS_KEYS = ("A", "A_hat", "B", "B_hat", "C", "C_hat", "f")
COST_KEYS = ("G", "G_hat", "Q", "Q_hat", "S1", "S1_hat", "S2", "S2_hat",
             "R11", "R11_hat", "R12", "R12_hat", "R22", "R22_hat")
LINEAR_KEYS = ("g", "q", "rho1", "rho2")
TILDE_BASES = ("A", "B", "C", "Q", "S1", "S2", "R11", "R12", "R22")


@dataclass(frozen=True)
class ProblemSpec:
    """Coefficients of the state equation and cost, plus terminal data.

    State:  dY = (AY + Â E[Y] + Bu + B̂ E[u] + CZ + Ĉ E[Z] + f) dt + Z dW,  Y(T) = ζ.
    Cost:   ½E[<GY0,Y0> + <Ĝ E[Y0], E[Y0]> + 2<g,Y0>
                + ∫ (<Mθ,θ> + <M̂ E[θ], E[θ]> + 2<(q, ρ1, ρ2), θ>) dt],  θ = (Y, Z, u),
    with M = [[Q, S1, S2], [S1ᵀ, R11, R12], [S2ᵀ, R12ᵀ, R22]] and M̂ alike.
    """

    n: int
    m: int
    T: float
    A: CoeffFn
    A_hat: CoeffFn
    B: CoeffFn
    B_hat: CoeffFn
    C: CoeffFn
    C_hat: CoeffFn
    f: CoeffFn
    G: np.ndarray
    G_hat: np.ndarray
    Q: CoeffFn
    Q_hat: CoeffFn
    S1: CoeffFn
    S1_hat: CoeffFn
    S2: CoeffFn
    S2_hat: CoeffFn
    R11: CoeffFn
    R11_hat: CoeffFn
    R12: CoeffFn
    R12_hat: CoeffFn
    R22: CoeffFn
    R22_hat: CoeffFn
    g: np.ndarray
    q: CoeffFn
    rho1: CoeffFn
    rho2: CoeffFn
    terminal: TerminalData

    @classmethod
    def build(cls, n: int, m: int, T: float = 1.0, terminal: Optional[TerminalData] = None, **kw) -> "ProblemSpec":
        """Construct a spec; omitted coefficients are zero, scalars broadcast to shape."""
        dims = {"n": n, "m": m}
        args = {}
        for name, (r, c) in MATRIX_COEFFS.items():
            args[name] = _as_coeff(kw.pop(name, 0.0), (dims[r], dims[c]), name)
        for name, d in VECTOR_COEFFS.items():
            args[name] = _as_coeff(kw.pop(name, 0.0), (dims[d],), name)
        for name in ("G", "G_hat"):
            args[name] = _as_array(kw.pop(name, 0.0), (n, n), name)
        args["g"] = _as_array(kw.pop("g", 0.0), (n,), "g")
        if kw:
            raise TypeError(f"unknown coefficients: {sorted(kw)}")
        if terminal is None:
            terminal = TerminalData.zero(n)
        return cls(n=n, m=m, T=float(T), terminal=terminal, **args)

    @property
    def coeff_names(self) -> tuple:
        return tuple(MATRIX_COEFFS) + tuple(VECTOR_COEFFS)

    @property
    def is_constant(self) -> bool:
        return all(getattr(self, k).is_constant for k in self.coeff_names)

    def with_terminal(self, zeta: TerminalData) -> "ProblemSpec":
        return replace(self, terminal=zeta)

    def homogeneous(self) -> "ProblemSpec":
        """Same quadratic structure, zero inhomogeneities and zero terminal value."""
        zero = {k: CoeffFn.zeros(getattr(self, k).shape) for k in VECTOR_COEFFS}
        return replace(self, g=np.zeros(self.n), terminal=TerminalData.zero(self.n), **zero)

    def grid(self, N: int) -> Grid:
        return Grid(self.T, N)

    def table(self, times) -> "CoeffTable":
        return CoeffTable.evaluate(self, times)


def _as_array(v, shape, name) -> np.ndarray:
    a = np.array(v, dtype=float)
    if a.ndim == 0:
        c = float(a)
        if len(shape) == 1 or c == 0.0:
            a = np.full(shape, c)
        elif shape[0] == shape[1]:
            a = c * np.eye(shape[0])
        else:
            raise ValueError(f"{name}: a nonzero scalar is ambiguous for shape {shape}")
    if a.shape != shape:
        raise ValueError(f"{name}: expected shape {shape}, got {a.shape}")
    return a


def _as_coeff(v, shape, name) -> CoeffFn:
    if isinstance(v, CoeffFn):
        return v
    return CoeffFn.constant(_as_array(v, shape, name))


@dataclass
class CoeffTable:
    """Plain and tilde coefficients evaluated at a vector of times (leading axis)."""

    times: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    Q: np.ndarray
    S1: np.ndarray
    S2: np.ndarray
    R11: np.ndarray
    R12: np.ndarray
    R22: np.ndarray
    At: np.ndarray
    Bt: np.ndarray
    Ct: np.ndarray
    Qt: np.ndarray
    S1t: np.ndarray
    S2t: np.ndarray
    R11t: np.ndarray
    R12t: np.ndarray
    R22t: np.ndarray
    f: np.ndarray
    q: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray

    @classmethod
    def evaluate(cls, spec: ProblemSpec, times) -> "CoeffTable":
        times = np.asarray(times, dtype=float)
        out = {"times": times}
        for base in TILDE_BASES:
            plain = getattr(spec, base).at(times)
            out[base] = plain
            out[base + "t"] = plain + getattr(spec, base + "_hat").at(times)
        for name in VECTOR_COEFFS:
            out[name] = getattr(spec, name).at(times)
        return cls(**out)


@dataclass(frozen=True)
class TildeCoeffs:
    """Sums P̃ = P + P̂ for every hatted coefficient."""

    A: CoeffFn
    B: CoeffFn
    C: CoeffFn
    Q: CoeffFn
    S1: CoeffFn
    S2: CoeffFn
    R11: CoeffFn
    R12: CoeffFn
    R22: CoeffFn
    G: np.ndarray


def tilde(spec: ProblemSpec) -> TildeCoeffs:
    out = {}
    for base in TILDE_BASES:
        out[base] = coeff_sum(getattr(spec, base), getattr(spec, base + "_hat"))
    return TildeCoeffs(G=spec.G + spec.G_hat, **out)


@dataclass
class ValidationReport:
    violations: list = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.passed


def validate(spec: ProblemSpec, grid: Optional[Grid] = None) -> ValidationReport:
    """Check dimensions, horizon, sample layout and symmetry of the symmetric weights."""
    rep = ValidationReport()
    v = rep.violations
    if not (isinstance(spec.n, (int, np.integer)) and spec.n >= 1):
        v.append(f"dimension: n must be a positive integer, got {spec.n!r}")
        return rep
    if not (isinstance(spec.m, (int, np.integer)) and spec.m >= 1):
        v.append(f"dimension: m must be a positive integer, got {spec.m!r}")
        return rep
    if not spec.T > 0:
        v.append(f"horizon: T must be positive, got {spec.T!r}")
    dims = {"n": spec.n, "m": spec.m}
    expected = {k: (dims[r], dims[c]) for k, (r, c) in MATRIX_COEFFS.items()}
    expected.update({k: (dims[d],) for k, d in VECTOR_COEFFS.items()})
    for name, shape in expected.items():
        cf = getattr(spec, name)
        if cf.shape != shape:
            v.append(f"dimension: {name} has shape {cf.shape}, expected {shape}")
            continue
        if cf.kind == "sampled":
            t = cf.times
            if len(t) < 2 or np.any(np.diff(t) <= 0):
                v.append(f"samples: {name} sample times must be strictly increasing")
            elif t[0] != 0.0 or abs(t[-1] - spec.T) > 1e-12 * max(1.0, spec.T):
                v.append(f"samples: {name} sample times must span [0, T]")
        for mat in cf.node_values():
            if not np.all(np.isfinite(mat)):
                v.append(f"finite: {name} has non-finite entries")
                break
    for name, shape in (("G", (spec.n, spec.n)), ("G_hat", (spec.n, spec.n)), ("g", (spec.n,))):
        a = np.asarray(getattr(spec, name))
        if a.shape != shape:
            v.append(f"dimension: {name} has shape {a.shape}, expected {shape}")
    for name, z in (("zeta0", spec.terminal.zeta0), ("zeta1", spec.terminal.zeta1)):
        if z.shape != (spec.n,):
            v.append(f"dimension: terminal {name} has shape {z.shape}, expected {(spec.n,)}")
    if v:
        return rep
    for name in SYMMETRIC_COEFFS:
        cf = getattr(spec, name)
        mats = cf.node_values()
        if cf.kind == "callable":
            g = grid if grid is not None else Grid(spec.T, 200)
            mats = list(cf.at(g.times))
        if any(not is_symmetric(mat, SYMMETRY_RTOL) for mat in mats):
            v.append(f"symmetry: {name} is not symmetric")
    for name in ("G", "G_hat"):
        if not is_symmetric(getattr(spec, name), SYMMETRY_RTOL):
            v.append(f"symmetry: {name} is not symmetric")
    return rep


# ---------------------------------------------------------------- file format

def _sym_coeff(cf: CoeffFn) -> CoeffFn:
    if cf.kind == "constant":
        return CoeffFn.constant(0.5 * (cf.value + cf.value.T))
    if cf.kind == "sampled":
        return CoeffFn.sampled(cf.times, 0.5 * (cf.samples + np.swapaxes(cf.samples, -1, -2)))
    return cf


def symmetrized(spec: ProblemSpec) -> ProblemSpec:
    """Replace each symmetric weight M by (M + Mᵀ)/2."""
    upd = {k: _sym_coeff(getattr(spec, k)) for k in SYMMETRIC_COEFFS}
    upd["G"] = 0.5 * (spec.G + spec.G.T)
    upd["G_hat"] = 0.5 * (spec.G_hat + spec.G_hat.T)
    return replace(spec, **upd)


def _coeff_from_doc(v, shape, name) -> CoeffFn:
    if isinstance(v, dict):
        if "samples" not in v:
            raise ParseError(f"{name}: table form needs a 'samples' array")
        try:
            ts = [float(s["t"]) for s in v["samples"]]
            mats = [_as_array(s["value"], shape, name) for s in v["samples"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ParseError(f"{name}: bad sample entry ({exc})") from exc
        return CoeffFn.sampled(ts, mats)
    try:
        return CoeffFn.constant(_as_array(v, shape, name))
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def spec_from_dict(doc: dict) -> ProblemSpec:
    """Build a spec from the parsed key-value tree. Missing entries default to zero."""
    try:
        dims = doc["dimensions"]
        n, m, T = int(dims["n"]), int(dims["m"]), float(dims.get("T", 1.0))
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"dimensions section needs n, m (and optionally T): {exc}") from exc
    d = {"n": n, "m": m}
    known = {"dimensions", "dynamics", "cost", "linear", "terminal"}
    extra = set(doc) - known
    if extra:
        raise ParseError(f"unknown sections: {sorted(extra)}")
    entries = {}
    for section, keys in (("dynamics", DYNAMICS_KEYS), ("cost", COST_KEYS), ("linear", LINEAR_KEYS)):
        sec = doc.get(section, {})
        bad = set(sec) - set(keys)
        if bad:
            raise ParseError(f"unknown keys in [{section}]: {sorted(bad)}")
        entries.update(sec)
    kw = {}
    for name, value in entries.items():
        if name in MATRIX_COEFFS:
            r, c = MATRIX_COEFFS[name]
            kw[name] = _coeff_from_doc(value, (d[r], d[c]), name)
        elif name in VECTOR_COEFFS:
            kw[name] = _coeff_from_doc(value, (d[VECTOR_COEFFS[name]],), name)
        else:
            shape = (n,) if name == "g" else (n, n)
            try:
                kw[name] = _as_array(value, shape, name)
            except ValueError as exc:
                raise ParseError(str(exc)) from exc
    term = doc.get("terminal", {})
    try:
        zeta = TerminalData(_as_array(term.get("zeta0", 0.0), (n,), "zeta0"),
                            _as_array(term.get("zeta1", 0.0), (n,), "zeta1"))
    except ValueError as exc:
        raise ParseError(str(exc)) from exc
    try:
        return ProblemSpec.build(n, m, T, terminal=zeta, **kw)
    except (ValueError, TypeError) as exc:
        raise ParseError(str(exc)) from exc


def _coeff_to_doc(cf: CoeffFn, grid: Optional[Grid]):
    if cf.kind == "constant":
        return cf.value.tolist()
    if cf.kind == "sampled":
        return {"samples": [{"t": float(t), "value": s.tolist()} for t, s in zip(cf.times, cf.samples)]}
    if grid is None:
        raise ValueError("derived coefficients need a grid to be written out")
    vals = cf.at(grid.times)
    return {"samples": [{"t": float(t), "value": s.tolist()} for t, s in zip(grid.times, vals)]}


def spec_to_dict(spec: ProblemSpec, grid: Optional[Grid] = None) -> dict:
    """Key-value tree for a spec; derived (callable) coefficients are sampled on grid."""
    doc = {"dimensions": {"n": spec.n, "m": spec.m, "T": spec.T}}
    for section, keys in (("dynamics", DYNAMICS_KEYS), ("cost", COST_KEYS), ("linear", LINEAR_KEYS)):
        sec = {}
        for k in keys:
            v = getattr(spec, k)
            sec[k] = _coeff_to_doc(v, grid) if isinstance(v, CoeffFn) else np.asarray(v).tolist()
        doc[section] = sec
    doc["terminal"] = {"zeta0": spec.terminal.zeta0.tolist(), "zeta1": spec.terminal.zeta1.tolist()}
    return doc


def parse_problem(text: str) -> ProblemSpec:
    """Parse TOML text, validate, and symmetrize the symmetric weights."""
    try:
        doc = _toml_reader.loads(text)
    except _toml_reader.TOMLDecodeError as exc:
        raise ParseError(f"malformed problem file: {exc}") from exc
    spec = spec_from_dict(doc)
    rep = validate(spec)
    if not rep.passed:
        raise ParseError("invalid problem: " + "; ".join(rep.violations))
    return symmetrized(spec)


def emit_problem(spec: ProblemSpec, grid: Optional[Grid] = None) -> str:
    return tomli_w.dumps(spec_to_dict(spec, grid))


def load_problem(path) -> ProblemSpec:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc}") from exc
    return parse_problem(text)


def specs_equal(a: ProblemSpec, b: ProblemSpec) -> bool:
    """Bitwise equality of all data."""
    for fl in fields(ProblemSpec):
        x, y = getattr(a, fl.name), getattr(b, fl.name)
        if isinstance(x, CoeffFn):
            if not x.same_as(y):
                return False
        elif isinstance(x, TerminalData):
            if not (np.array_equal(x.zeta0, y.zeta0) and np.array_equal(x.zeta1, y.zeta1)):
                return False
        elif isinstance(x, np.ndarray):
            if not np.array_equal(x, y):
                return False
        elif x != y:
            return False
    return True
