"""Command-line driver: problem file in, CSV/JSON artifacts out.

Exit codes: 0 success, 1 input error, 2 solve error, 3 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ParseError, SolveError
from .model import ProblemSpec, emit_problem, load_problem
from .numerics import MatrixPath
from .processes import simulate_adjoint
from .reduction import reduce
from .riccati import solve_pi_lambda, solve_upsilon, upsilon_via_limit
from .synthesis import synthesize
from .verify import (DEFAULT_EPSILONS, convexity_certificate, mc_agrees, mc_cost, perturbation_test,
                     random_affine_family, stationarity_residual)

EXIT_OK, EXIT_INPUT, EXIT_SOLVE, EXIT_VERIFY = 0, 1, 2, 3
STATIONARITY_TOL = 5e-2
ROUNDING_LEVEL = 1e-12


@dataclass
class RunConfig:
    grid_n: int = 2000
    lambda_ladder: list = field(default_factory=lambda: [10.0, 100.0, 1000.0, 10000.0])
    mc_paths: int = 100_000
    stationarity_paths: int = 10_000
    seed: int = 42
    epsilons: list = field(default_factory=lambda: list(DEFAULT_EPSILONS))
    directions: int = 8
    out: Path = Path("out")
    h: Optional[tuple] = None
    lam: Optional[float] = None
    workers: int = 1

    def __post_init__(self):
        if self.grid_n < 2:
            raise ValueError("--grid-n must be at least 2")
        if self.mc_paths < 1 or self.stationarity_paths < 1:
            raise ValueError("path counts must be at least 1")
        if any(b <= a for a, b in zip(self.lambda_ladder, self.lambda_ladder[1:])):
            raise ValueError("--ladder must be strictly increasing")


# ------------------------------------------------------------------ writers

def write_csv(path: Path, path_obj: MatrixPath) -> None:
    """Columns: t, then the matrix entries at each node in row-major order."""
    values = path_obj.values.reshape(len(path_obj.grid.times), -1)
    write_table(path, path_obj.grid.times, [values], _entry_names("v", path_obj.shape))


def _entry_names(prefix: str, shape: tuple) -> list:
    if len(shape) == 1:
        return [f"{prefix}[{i}]" for i in range(shape[0])]
    return [f"{prefix}[{i}][{j}]" for i in range(shape[0]) for j in range(shape[1])]


def write_table(path: Path, times: np.ndarray, blocks: list, names: list) -> None:
    data = np.column_stack([times] + [b.reshape(len(times), -1) for b in blocks]) + 0.0  # no "-0"
    with open(path, "w", newline="") as fh:
        fh.write(",".join(["t"] + names) + "\n")
        for row in data:
            fh.write(",".join("%.17g" % x for x in row) + "\n")


def write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(obj), fh, sort_keys=True, indent=2)
        fh.write("\n")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if np.isfinite(x) else repr(x)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


# ------------------------------------------------------------------ commands

def run_solve(spec: ProblemSpec, cfg: RunConfig) -> int:
    grid = spec.grid(cfg.grid_n)
    sol = synthesize(spec, grid)
    out = cfg.out
    write_csv(out / "upsilon.csv", sol.ric.upsilon)
    write_csv(out / "upsilon_tilde.csv", sol.ric.upsilon_tilde)
    law = sol.law
    write_table(out / "gains.csv", grid.times, [law.K.values, law.K_tilde.values, law.c.values, law.c_tilde.values],
                _entry_names("K", law.K.shape) + _entry_names("K_tilde", law.K_tilde.shape)
                + _entry_names("c", law.c.shape) + _entry_names("c_tilde", law.c_tilde.shape))
    eta = sol.eta.eta
    write_table(out / "eta.csv", grid.times, [eta.a.values, eta.b.values],
                _entry_names("a", eta.a.shape) + _entry_names("b", eta.b.shape))
    value = sol.value.to_dict()
    value.update(offset=sol.offset, total_original=sol.value_original)
    write_json(out / "value.json", value)
    cert = convexity_certificate(spec, grid, cfg.h)
    write_json(out / "certificate.json", cert.to_dict())
    print(f"value {sol.value.total:.12g} (original problem {sol.value_original:.12g}); "
          f"certificate {'passed' if cert.passed else 'failed'}")
    return EXIT_OK


def run_verify(spec: ProblemSpec, cfg: RunConfig) -> int:
    grid = spec.grid(cfg.grid_n)
    sol = synthesize(spec, grid)
    out = cfg.out
    checks = {}

    # stationarity at N and at N/2 on a smaller ensemble
    stat = _stationarity(sol, cfg)
    coarse = _stationarity(synthesize(spec, spec.grid(max(2, cfg.grid_n // 2))), cfg)
    fine_r, coarse_r = stat.sup_mean_residual, coarse.sup_mean_residual
    checks["stationarity"] = fine_r <= STATIONARITY_TOL
    checks["stationarity_halving"] = bool(fine_r < coarse_r or max(fine_r, coarse_r) <= ROUNDING_LEVEL)
    sd = stat.to_dict()
    sd.update(coarse_grid_n=max(2, cfg.grid_n // 2), coarse_sup_mean_residual=coarse_r,
              coarse_terminal_mismatch=coarse.terminal_mismatch, tolerance=STATIONARITY_TOL)
    write_json(out / "stationarity.json", sd)
    write_table(out / "stationarity_profile.csv", grid.times,
                [stat.node_profile, stat.sample_mean_profile], ["mean_residual", "sample_mean_residual"])

    ens = simulate_adjoint(sol.normal, sol.ric, sol.eta, seed=cfg.seed, P=cfg.mc_paths, workers=cfg.workers)
    mc = mc_cost(sol.normal, sol.law, ens)
    gap = abs(mc.mean - sol.value.total)
    checks["mc_cost"] = mc_agrees(mc, sol.value.total)
    mcd = mc.to_dict()
    mcd.update(optimal_value=sol.value.total, abs_gap=gap)
    write_json(out / "mc_cost.json", mcd)

    vs = random_affine_family(grid, spec.m, cfg.directions, cfg.seed)
    pert = perturbation_test(sol.normal, sol.law, ens, vs, cfg.epsilons)
    checks["perturbation"] = pert.passed
    write_json(out / "perturbation.json", pert.to_dict())

    try:
        lim = upsilon_via_limit(sol.normal, cfg.lambda_ladder, sol.ric, strict=False)
        checks["limit"] = lim.decreasing and lim.pi_increasing
        write_json(out / "limit_report.json", lim.to_dict())
    except SolveError as exc:
        checks["limit"] = False
        write_json(out / "limit_report.json", {"error": str(exc)})

    write_json(out / "checks.json", checks)
    failed = [k for k, ok in checks.items() if not ok]
    print("verification " + ("passed" if not failed else "failed: " + ", ".join(failed)))
    return EXIT_VERIFY if failed else EXIT_OK


def _stationarity(sol, cfg: RunConfig):
    ens = simulate_adjoint(sol.normal, sol.ric, sol.eta, seed=cfg.seed, P=cfg.stationarity_paths,
                           workers=cfg.workers)
    return stationarity_residual(sol.normal, sol.law, ens)


def run_riccati(spec: ProblemSpec, cfg: RunConfig) -> int:
    grid = spec.grid(cfg.grid_n)
    normal = reduce(spec, grid)
    ric = solve_upsilon(normal)
    out = cfg.out
    write_csv(out / "upsilon.csv", ric.upsilon)
    write_csv(out / "upsilon_tilde.csv", ric.upsilon_tilde)
    write_json(out / "riccati_certificates.json", ric.cert)
    if cfg.lam is not None:
        pi = solve_pi_lambda(normal, cfg.lam)
        write_csv(out / "pi.csv", pi.pi)
        write_csv(out / "pi_tilde.csv", pi.pi_tilde)
    lim = upsilon_via_limit(normal, cfg.lambda_ladder, ric, strict=False)
    write_json(out / "limit_report.json", lim.to_dict())
    print(f"gaps {lim.gaps}; decreasing={lim.decreasing}")
    return EXIT_OK


def run_reduce(spec: ProblemSpec, cfg: RunConfig) -> int:
    grid = spec.grid(cfg.grid_n)
    normal = reduce(spec, grid)
    (cfg.out / "normal_form.toml").write_text(emit_problem(normal.spec, grid))
    write_json(cfg.out / "offset.json", {"offset": normal.offset()})
    print(f"offset {normal.offset():.12g}")
    return EXIT_OK


COMMANDS = {"solve": run_solve, "verify": run_verify, "riccati": run_riccati, "reduce": run_reduce}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mfblq", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("problem", type=Path, help="problem file (TOML)")
    common.add_argument("--grid-n", type=int, default=2000, help="number of time steps")
    common.add_argument("--out", type=Path, default=Path("out"), help="output directory")
    common.add_argument("--seed", type=int, default=42)
    common.add_argument("--workers", type=int, default=1, help="threads for path simulation")
    common.add_argument("--ladder", type=float, nargs="+", default=[10.0, 100.0, 1000.0, 10000.0],
                        help="increasing λ values for the limiting procedure")
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("solve", parents=[common], help="solve and write Υ, gains, η, value, certificate")
    p.add_argument("--h", type=float, nargs=2, metavar=("H", "H_TILDE"),
                   help="constant equivalent-cost shift used by the certificate")
    p = sub.add_parser("verify", parents=[common], help="stationarity, Monte Carlo cost, perturbation, limit")
    p.add_argument("--paths", type=int, default=100_000)
    p.add_argument("--stationarity-paths", type=int, default=10_000)
    p.add_argument("--eps", type=float, nargs="+", default=list(DEFAULT_EPSILONS))
    p.add_argument("--directions", type=int, default=8)
    p = sub.add_parser("riccati", parents=[common], help="Υ pair and the Π_λ limit report")
    p.add_argument("--lambda", dest="lam", type=float, help="also write Π_λ for this λ")
    sub.add_parser("reduce", parents=[common], help="write the normal-form problem")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = RunConfig(grid_n=args.grid_n, lambda_ladder=list(args.ladder), seed=args.seed,
                        mc_paths=getattr(args, "paths", 100_000),
                        stationarity_paths=getattr(args, "stationarity_paths", 10_000),
                        epsilons=list(getattr(args, "eps", DEFAULT_EPSILONS)),
                        directions=getattr(args, "directions", 8), out=args.out,
                        h=tuple(args.h) if getattr(args, "h", None) else None,
                        lam=getattr(args, "lam", None), workers=args.workers)
        spec = load_problem(args.problem)
    except (ParseError, ValueError, OSError) as exc:
        print(f"input error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    cfg.out.mkdir(parents=True, exist_ok=True)
    try:
        return COMMANDS[args.command](spec, cfg)
    except SolveError as exc:
        print(f"solve error: {exc}", file=sys.stderr)
        return EXIT_SOLVE


if __name__ == "__main__":
    sys.exit(main())
