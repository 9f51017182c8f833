"""Command-line entry point: ``critmass <subcommand> [options]``.

Settings come from built-in defaults, then a JSON ``--config`` file, then the
``CRITMASS_SEED`` environment variable (seed only), then explicit flags.
Every subcommand writes into ``--out`` and leaves a ``manifest.json`` there.

Exit codes: 0 success, 2 invalid input, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import platform
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from .concentration import concentration_run, dyadic_sequence, geometric_sequence, records_to_csv
from .dynamics import default_dt, evolve, h1_pair_norm, random_perturbation, step, EvolutionState
from .energy import MassConstraint, SystemParams, pohozaev_residual, stack, terms_of, unstack
from .errors import (
    DomainEscape,
    ExponentMismatch,
    InvalidParams,
    NoConvergence,
    NotConverged,
    NumericalBlowup,
    ZeroField,
    ZeroKinetic,
    ZeroMass,
)
from .fields import Field, FieldPair, Grid, load_field, save_field
from .ground_state import critical_masses, gn_deficit, rescaled_ground_state, sample_profile, solve_q
from .minimize import (
    MinimizeOptions,
    ScanRow,
    Status,
    critical_profile,
    minimize,
    project_masses,
    scan_m,
    structure_report,
)

EXIT_OK, EXIT_INVALID, EXIT_NUMERICAL = 0, 2, 3
SEED_ENV = "CRITMASS_SEED"

DEFAULT_PARAMS = {"dim": 1, "mu1": 1.0, "mu2": 1.0, "beta": 1.0, "r1": 1.5, "r2": 1.5}
DEFAULT_GRIDS = {1: (1024, 24.0), 2: (256, 16.0), 3: (64, 12.0)}

SUBCOMMANDS = ("q-profile", "minimize", "scan", "evolve", "concentrate", "verify")
# option blocks accepted in a config file, keyed by subcommand
BLOCK_KEYS = {
    "q-profile": {"dim", "exponent", "tol"},
    "minimize": {"a1", "a2", "tol", "restarts", "max_iters", "require_converged", "prefix"},
    "scan": {"masses", "tol", "restarts", "max_iters"},
    "evolve": {"init", "a1", "a2", "dt", "horizon", "steps", "sample_every", "perturb", "restore_mass",
                "require_converged"},
    "concentrate": {"steps", "final", "first", "sequence", "cold", "tol", "restarts", "max_iters",
                    "require_converged"},
    "verify": {"random_fields"},
}
TOP_KEYS = {"params", "grid", "seed", "output_dir"} | set(BLOCK_KEYS)


class ConfigError(InvalidParams):
    pass


@dataclass
class RunConfig:
    params: SystemParams
    grid: Grid
    seed: int
    output_dir: Path
    options: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "grid": self.grid.to_dict(),
            "seed": self.seed,
            "output_dir": str(self.output_dir),
            "options": self.options,
        }


def load_config(path) -> dict:
    try:
        data = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(data) - TOP_KEYS
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(sorted(unknown))}")
    for block, keys in BLOCK_KEYS.items():
        extra = set(data.get(block, {})) - keys
        if extra:
            raise ConfigError(f"unknown key(s) in config block '{block}': {', '.join(sorted(extra))}")
    grid_extra = set(data.get("grid", {})) - {"points_per_axis", "half_width", "dim"}
    if grid_extra:
        raise ConfigError(f"unknown key(s) in config block 'grid': {', '.join(sorted(grid_extra))}")
    return data


def _seed(value) -> int:
    try:
        seed = int(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"seed must be an integer, got {value!r}") from exc
    if not 0 <= seed < 2**64:
        raise ConfigError(f"seed must fit in 64 bits, got {seed}")
    return seed


def resolve(args: argparse.Namespace) -> RunConfig:
    """Merge defaults, config file, environment and flags (later wins)."""
    data = load_config(args.config) if args.config else {}
    params = dict(DEFAULT_PARAMS)
    params.update(data.get("params", {}))
    if args.params:
        try:
            params = json.loads(Path(args.params).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read --params {args.params}: {exc}") from exc
    if getattr(args, "dim", None) is not None:
        params["dim"] = args.dim
    sp = SystemParams.from_dict(params)

    n_default, l_default = DEFAULT_GRIDS[sp.dim]
    gdata = data.get("grid", {})
    n = args.grid_n or gdata.get("points_per_axis", n_default)
    half = args.box_l or gdata.get("half_width", l_default)
    grid = Grid(sp.dim, int(n), float(half))

    seed = _seed(data.get("seed", 0))
    if os.environ.get(SEED_ENV):
        seed = _seed(os.environ[SEED_ENV])
    if args.seed is not None:
        seed = _seed(args.seed)

    out = Path(args.out or data.get("output_dir") or "critmass-out")
    options = dict(data.get(args.command, {}))
    for key in BLOCK_KEYS[args.command]:
        flag = getattr(args, key, None)
        if flag is not None:
            options[key] = flag
    return RunConfig(sp, grid, seed, out, options)


def parse_mass(text, critical: float, flag: str) -> float:
    """A number, or a multiple of the critical mass written like ``0.5a*``."""
    s = str(text).strip()
    try:
        if s.endswith("a*"):
            return float(s[:-2] or 1.0) * critical
        return float(s)
    except ValueError as exc:
        raise ConfigError(f"{flag}: cannot parse mass {text!r}") from exc


def _target(cfg: RunConfig, flags=("a1", "a2")) -> MassConstraint:
    stars = critical_masses(cfg.params, critical_profile(cfg.params.dim))
    vals = []
    for name, star in zip(flags, stars):
        if cfg.options.get(name) is None:
            raise ConfigError(f"missing required flag --{name}")
        vals.append(parse_mass(cfg.options[name], star, f"--{name}"))
    return MassConstraint(*vals)


def _options(cfg: RunConfig) -> MinimizeOptions:
    kw = {"seed": cfg.seed}
    if cfg.options.get("tol") is not None:
        kw["grad_tol"] = float(cfg.options["tol"])
    if cfg.options.get("restarts") is not None:
        kw["restarts"] = int(cfg.options["restarts"])
    if cfg.options.get("max_iters") is not None:
        kw["max_iters"] = int(cfg.options["max_iters"])
    return MinimizeOptions(**kw)


def _save_pair(pair: FieldPair, out: Path, prefix: str) -> list[str]:
    names = [f"{prefix}_1.fld", f"{prefix}_2.fld"]
    for f, name in zip(pair, names):
        save_field(f, out / name)
    return names


def _load_pair(prefix: str) -> FieldPair:
    try:
        return FieldPair(load_field(f"{prefix}_1.fld"), load_field(f"{prefix}_2.fld"))
    except OSError as exc:
        raise ConfigError(f"cannot load field pair {prefix}_{{1,2}}.fld: {exc}") from exc


# -- subcommands ---------------------------------------------------------------


def cmd_q_profile(cfg: RunConfig, args) -> tuple[int, dict, list[str]]:
    opts = cfg.options
    dim = int(opts.get("dim", cfg.params.dim))
    q = solve_q(dim, opts.get("exponent"), tol=float(opts.get("tol", 1e-8)))
    path = cfg.output_dir / "q_profile.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("r", "Q"))
        for r, v in q.radial_profile:
            w.writerow((repr(float(r)), repr(float(v))))
    summary = dict(q.summary(), center_value=q.center_value, residual=q.residual)
    (cfg.output_dir / "q_profile.json").write_text(json.dumps(summary, indent=2))
    return EXIT_OK, summary, ["q_profile.csv", "q_profile.json"]


def cmd_minimize(cfg: RunConfig, args) -> tuple[int, dict, list[str]]:
    target = _target(cfg)
    res = minimize(cfg.params, target, cfg.grid, _options(cfg))
    summary = res.summary()
    if res.status is Status.CONVERGED:
        summary["structure"] = structure_report(res.pair).to_dict()
    prefix = cfg.options.get("prefix", "minimizer")
    files = _save_pair(res.pair, cfg.output_dir, prefix)
    (cfg.output_dir / "minimize.json").write_text(json.dumps(summary, indent=2))
    files.append("minimize.json")
    code = EXIT_OK
    if cfg.options.get("require_converged") and res.status is not Status.CONVERGED:
        code = EXIT_NUMERICAL
    return code, summary, files


def _read_masses(path, params) -> list[MassConstraint]:
    stars = critical_masses(params, critical_profile(params.dim))
    rows = []
    try:
        with open(path, newline="") as fh:
            for row in csv.reader(fh):
                if not row or row[0].strip().startswith("#"):
                    continue
                if row[0].strip().lower() == "a1":
                    continue  # header
                if len(row) < 2:
                    raise ConfigError(f"{path}: each row needs a1,a2")
                rows.append(MassConstraint(parse_mass(row[0], stars[0], "a1"),
                                           parse_mass(row[1], stars[1], "a2")))
    except OSError as exc:
        raise ConfigError(f"cannot read --masses {path}: {exc}") from exc
    if not rows:
        raise ConfigError(f"{path}: no mass rows")
    return rows


def cmd_scan(cfg: RunConfig, args) -> tuple[int, dict, list[str]]:
    if not cfg.options.get("masses"):
        raise ConfigError("missing required flag --masses")
    targets = _read_masses(cfg.options["masses"], cfg.params)
    rows = scan_m(cfg.params, targets, cfg.grid, _options(cfg), jobs=args.jobs)
    path = cfg.output_dir / "scan.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(ScanRow.COLUMNS)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.as_tuple()])
    table = [dict(zip(ScanRow.COLUMNS, r.as_tuple())) for r in rows]
    return EXIT_OK, {"rows": table}, ["scan.csv"]


def cmd_evolve(cfg: RunConfig, args) -> tuple[int, dict, list[str]]:
    opts = cfg.options
    init = opts.get("init", "minimize")
    files = []
    result = {}
    if init == "minimize":
        res = minimize(cfg.params, _target(cfg), cfg.grid, _options(cfg))
        result["minimizer"] = res.summary()
        if res.status is not Status.CONVERGED:
            result["status"] = str(res.status)
            return EXIT_NUMERICAL, result, files
        ref = res.pair
    else:
        ref = _load_pair(init)
        if ref.grid.dim != cfg.params.dim:
            raise ConfigError(f"field dimension {ref.grid.dim} differs from N={cfg.params.dim}")
    grid = ref.grid
    dt = float(opts.get("dt") or default_dt(grid))
    if opts.get("steps") is not None:
        n_steps = int(opts["steps"])
    else:
        n_steps = int(round(float(opts.get("horizon", 1.0)) / dt))
    if n_steps < 1:
        raise ConfigError("nothing to do: horizon/dt gives no steps")
    size = float(opts.get("perturb", 0.0))
    if not 0 <= size <= 0.1:
        raise ConfigError("--perturb must lie in [0, 0.1]")
    start = ref
    if size > 0:
        U = stack(ref) + size * h1_pair_norm(ref) * stack(random_perturbation(grid, cfg.seed))
        start = unstack(grid, U)
        if opts.get("restore_mass", True):
            m = terms_of(grid, stack(ref), cfg.params).mass
            start = project_masses(start, MassConstraint(*m))
    state, summary = evolve(start, cfg.params, dt, n_steps,
                            int(opts.get("sample_every", 100)), reference=ref)
    summary.to_csv(cfg.output_dir / "trajectory.csv")
    files += ["trajectory.csv"] + _save_pair(state.pair, cfg.output_dir, "final")
    e = summary.column("energy")
    m1, m2 = summary.column("mass1"), summary.column("mass2")
    result.update({
        "dt": dt, "steps": n_steps, "time": state.time,
        "mass_drift": [float(np.max(np.abs(m1 / m1[0] - 1))), float(np.max(np.abs(m2 / m2[0] - 1)))],
        "energy_drift": float(np.max(np.abs(e - e[0])) / max(abs(e[0]), np.finfo(float).tiny)),
        "max_orbit_distance": summary.max_orbit_distance,
        "final_orbit_distance": float(summary.column("orbit_distance")[-1]),
    })
    return EXIT_OK, result, files


def cmd_concentrate(cfg: RunConfig, args) -> tuple[int, dict, list[str]]:
    opts = cfg.options
    steps = int(opts.get("steps", 6))
    if opts.get("sequence", "geometric") == "dyadic":
        seq = dyadic_sequence(cfg.params, steps)
    elif opts.get("sequence", "geometric") == "geometric":
        seq = geometric_sequence(cfg.params, steps, float(opts.get("final", 0.995)),
                                 float(opts.get("first", 0.5)))
    else:
        raise ConfigError(f"--sequence must be 'geometric' or 'dyadic', got {opts['sequence']!r}")
    records = concentration_run(cfg.params, seq, cfg.grid, _options(cfg),
                                warm_start=not opts.get("cold", False), jobs=args.jobs)
    records_to_csv(records, cfg.output_dir / "concentration.csv")
    files = ["concentration.csv"]
    for k, rec in enumerate(records, 1):
        if rec.aligned is not None:
            files += _save_pair(rec.aligned, cfg.output_dir, f"aligned_{k}")
    rows = [r.row() for r in records]
    code = EXIT_OK
    if cfg.options.get("require_converged") and any(r.status is not Status.CONVERGED for r in records):
        code = EXIT_NUMERICAL
    return code, {"records": rows}, files


def run_checks(cfg: RunConfig, random_fields: int = 100) -> dict:
    """Invariant suite: sharp GN constant, Pohozaev on Q, conservation, reversibility."""
    params, grid = cfg.params, cfg.grid
    q = critical_profile(params.dim)
    checks = {}

    def record(name, value, bound, ok):
        checks[name] = {"value": float(value), "bound": bound, "pass": bool(ok)}

    record("q_residual", q.residual, 1e-8, q.residual < 1e-8)
    qf = sample_profile(q, grid)
    scale = float(np.sum(np.abs(qf.values) ** q.exponent) * grid.cell_volume)
    rel = gn_deficit(qf, q) / scale
    record("gn_extremal", abs(rel), 1e-6, abs(rel) < 1e-6)
    rng = np.random.default_rng(cfg.seed)
    worst = np.inf
    envelope = np.exp(-grid.radius**2 / (2 * (grid.half_width / 6) ** 2))
    for _ in range(random_fields):
        noise = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
        keep = grid.k_squared < (grid.k_max / 8) ** 2
        f = Field(grid, envelope * np.fft.ifftn(keep * np.fft.fftn(noise)))
        worst = min(worst, gn_deficit(f, q) / (np.sum(np.abs(f.values) ** q.exponent) * grid.cell_volume))
    record("gn_random_min", worst, -1e-8, worst >= -1e-8)

    decoupled = SystemParams(params.dim, params.mu1, params.mu2, 0.0, params.r1, params.r2)
    pair = FieldPair(rescaled_ground_state(q, params.mu1, grid), rescaled_ground_state(q, params.mu2, grid))
    poh = pohozaev_residual(pair, decoupled, relative=True)
    record("pohozaev_on_q", abs(poh), 1e-6, abs(poh) < 1e-6)

    # conservation on the standing wave at half the critical masses
    dt = default_dt(grid)
    stars = critical_masses(params, q)
    res = minimize(params, MassConstraint(0.5 * stars[0], 0.5 * stars[1]), grid,
                   MinimizeOptions(seed=cfg.seed))
    record("minimizer_converged", res.grad_residual, 1e-8, res.status is Status.CONVERGED)
    start = res.pair
    _, traj = evolve(start, params, dt, 1000, sample_every=100)
    e = traj.column("energy")
    mass_drift = max(float(np.max(np.abs(traj.column(c) / traj.column(c)[0] - 1))) for c in ("mass1", "mass2"))
    energy_drift = float(np.max(np.abs(e - e[0])) / abs(e[0]))
    record("mass_drift", mass_drift, 1e-10, mass_drift < 1e-10)
    record("energy_drift", energy_drift, 1e-8, energy_drift < 1e-8)

    s0 = EvolutionState(start)
    back = step(step(s0, dt, params), -dt, params)
    rev = float(np.max(np.abs(stack(back.pair) - stack(start))))
    record("time_reversal", rev, 1e-11, rev < 1e-11)
    return checks


def cmd_verify(cfg: RunConfig, args) -> tuple[int, dict, list[str]]:
    checks = run_checks(cfg, int(cfg.options.get("random_fields", 100)))
    (cfg.output_dir / "verify.json").write_text(json.dumps(checks, indent=2))
    ok = all(c["pass"] for c in checks.values())
    return (EXIT_OK if ok else EXIT_NUMERICAL), {"checks": checks, "all_pass": ok}, ["verify.json"]


COMMANDS = {
    "q-profile": cmd_q_profile,
    "minimize": cmd_minimize,
    "scan": cmd_scan,
    "evolve": cmd_evolve,
    "concentrate": cmd_concentrate,
    "verify": cmd_verify,
}


# -- argument parsing ------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--params", help="JSON file with dim, mu1, mu2, beta, r1, r2")
    common.add_argument("--grid-n", type=int, help="points per axis (power of two)")
    common.add_argument("--box-l", type=float, help="box half-width L")
    common.add_argument("--seed", help=f"random seed (overrides config and ${SEED_ENV})")
    common.add_argument("--out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for independent entries")

    parser = argparse.ArgumentParser(prog="critmass", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"critmass {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("q-profile", parents=[common], help="solve the scalar ground state Q")
    p.add_argument("--dim", type=int)
    p.add_argument("--exponent", type=float, help="nonlinearity p (default 2 + 4/N)")
    p.add_argument("--tol", type=float)

    p = sub.add_parser("minimize", parents=[common], help="minimize J on the mass constraint")
    p.add_argument("--a1", help="mass of u1; a number or a multiple of a1* such as 0.5a*")
    p.add_argument("--a2", help="mass of u2; a number or a multiple of a2*")
    p.add_argument("--tol", type=float, help="relative stationarity tolerance")
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--prefix", help="file prefix for the two .fld outputs")
    p.add_argument("--require-converged", dest="require_converged", action="store_true", default=None)

    p = sub.add_parser("scan", parents=[common], help="minimize over a CSV list of masses")
    p.add_argument("--masses", help="CSV with rows a1,a2")
    p.add_argument("--tol", type=float)
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-iters", dest="max_iters", type=int)

    p = sub.add_parser("evolve", parents=[common], help="split-step time evolution")
    p.add_argument("--init", help="'.fld' pair prefix or 'minimize' (default)")
    p.add_argument("--a1")
    p.add_argument("--a2")
    p.add_argument("--dt", type=float)
    p.add_argument("--horizon", type=float)
    p.add_argument("--steps", type=int, help="number of steps (overrides --horizon)")
    p.add_argument("--sample-every", dest="sample_every", type=int)
    p.add_argument("--perturb", type=float, help="relative H1 perturbation size")
    p.add_argument("--raw-perturbation", dest="restore_mass", action="store_const", const=False,
                   default=None, help="do not restore the masses after perturbing")
    p.add_argument("--require-converged", dest="require_converged", action="store_true", default=None)

    p = sub.add_parser("concentrate", parents=[common], help="mass sequence toward the critical pair")
    p.add_argument("--steps", type=int)
    p.add_argument("--final", type=float, help="final mass as a fraction of critical")
    p.add_argument("--first", type=float, help="first mass as a fraction of critical")
    p.add_argument("--sequence", choices=("geometric", "dyadic"))
    p.add_argument("--cold", action="store_true", default=None, help="independent cold starts")
    p.add_argument("--tol", type=float)
    p.add_argument("--restarts", type=int)
    p.add_argument("--max-iters", dest="max_iters", type=int)
    p.add_argument("--require-converged", dest="require_converged", action="store_true", default=None)

    p = sub.add_parser("verify", parents=[common], help="run the invariant suite")
    p.add_argument("--random-fields", dest="random_fields", type=int)
    return parser


def _versions() -> dict:
    return {
        "critmass": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
    }


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.jobs < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_INVALID

    t0 = time.perf_counter()
    try:
        cfg = resolve(args)
        cfg.output_dir.mkdir(parents=True, exist_ok=True)
        code, results, files = COMMANDS[args.command](cfg, args)
    except (InvalidParams, ExponentMismatch, ZeroField, ZeroMass, ZeroKinetic) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (NumericalBlowup, NoConvergence, NotConverged, DomainEscape) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        if "cfg" in locals() and cfg.output_dir.is_dir():
            _write_manifest(cfg, args, {"error": f"{type(exc).__name__}: {exc}"}, [],
                            EXIT_NUMERICAL, time.perf_counter() - t0)
        return EXIT_NUMERICAL

    _write_manifest(cfg, args, results, files, code, time.perf_counter() - t0)
    status = results.get("status") or results.get("minimizer", {}).get("status")
    print(json.dumps({"command": args.command, "exit_code": code, "status": status,
                      "out": str(cfg.output_dir)}))
    return code


def _write_manifest(cfg, args, results, files, code, wall):
    manifest = {
        "command": args.command,
        "config": cfg.to_dict(),
        "seed": cfg.seed,
        "versions": _versions(),
        "exit_code": code,
        "outputs": files,
        "results": results,
        "wall_time_s": wall,
    }
    (cfg.output_dir / "manifest.json").write_text(json.dumps(manifest, indent=2, default=str))


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
