"""``ffdg`` command-line entry point.

Every command writes its artifacts (CSV and a ``summary.json``) to ``--out``.
Failures print a JSON error record to stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, FFDGError
from .model import (build_bandwidth_model, load_model, model_to_dict, partition_rates,
                    validate_model)

EXIT_OK = 0
EXIT_ERROR = 2
EXIT_INTERNAL = 3


def fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return "%.17g" % v
    if isinstance(v, (np.integer,)):
        return str(int(v))
    return str(v)


def write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_matrix(path: Path, A: np.ndarray) -> None:
    np.savetxt(path, np.atleast_2d(np.real(A)), fmt="%.17g", delimiter=",")


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=_json_default) + "\n",
                    encoding="utf-8")


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(type(o).__name__)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


@dataclass
class RunConfig:
    command: str
    model: str
    params: dict = field(default_factory=dict)
    K: int | None = None
    h: float | None = None
    dh: float | None = None
    nodes: list | None = None
    degree: int = 1
    out: Path = Path(".")
    seed: int = 0
    options: dict = field(default_factory=dict)


def _parse_params(items) -> dict:
    out = {}
    for item in items or []:
        key, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        try:
            out[key.strip()] = float(val)
        except ValueError as exc:
            raise ConfigError(f"--param {key}: {val!r} is not a number") from exc
    return out


def _float_list(text: str) -> list:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise ConfigError(f"bad number list {text!r}") from exc


def parse_y_grid(text: str) -> np.ndarray:
    """``start:stop:step`` (stop included) or a comma-separated list."""
    if ":" in text:
        try:
            start, stop, step = (float(v) for v in text.split(":"))
        except ValueError as exc:
            raise ConfigError(f"bad --y-grid {text!r}") from exc
        if step <= 0 or stop < start:
            raise ConfigError("--y-grid needs step > 0 and stop >= start")
        n = int(np.floor((stop - start) / step + 1e-9)) + 1
        return start + step * np.arange(n)
    grid = np.array(_float_list(text))
    if grid.size == 0 or np.any(grid < 0):
        raise ConfigError("--y-grid values must be nonnegative")
    return grid


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="ffdg", description="DG solver for stochastic fluid-fluid processes")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, stencil=True):
        sp.add_argument("--model", required=True,
                        help="model file (TOML/JSON) or the builtin name 'bandwidth'")
        sp.add_argument("--param", action="append", metavar="KEY=VALUE",
                        help="override a bandwidth-model parameter (repeatable)")
        sp.add_argument("--out", type=Path, default=Path("."), help="output directory")
        if stencil:
            sp.add_argument("--K", type=int)
            sp.add_argument("--h", type=float)
            sp.add_argument("--dh", type=float)
            sp.add_argument("--nodes", help="explicit comma-separated nodes (excludes --K/--h/--dh)")
            sp.add_argument("--degree", type=int, default=1, choices=(0, 1))
            sp.add_argument("--rho-mode", default="normalized", choices=("normalized", "verbatim"))

    def solver(sp):
        sp.add_argument("--psi-method", default="newton", choices=("newton", "fixed_point"))
        sp.add_argument("--psi-tol", type=float, default=1e-10)
        sp.add_argument("--dump-operators", action="store_true",
                        help="also write every assembled matrix as CSV")

    sp = sub.add_parser("validate", help="check a model")
    common(sp, stencil=False)

    sp = sub.add_parser("assemble", help="assemble and dump the DG operators")
    common(sp)

    sp = sub.add_parser("psi", help="solve for psi and the first-return distribution")
    common(sp)
    solver(sp)
    sp.add_argument("--x0", type=float, default=5.0)
    sp.add_argument("--phase0", default=None, help="start phase label (default: first phase with a positive rate at x0)")

    sp = sub.add_parser("stationary", help="joint stationary distribution")
    common(sp)
    solver(sp)
    sp.add_argument("--y-grid", default="0:10:0.1")

    sp = sub.add_parser("simulate", help="Monte Carlo oracle")
    common(sp, stencil=False)
    sp.add_argument("--mode", default="first-return", choices=("first-return", "stationary"))
    sp.add_argument("--paths", type=int, default=100000)
    sp.add_argument("--horizon", type=float, default=1e4)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--x0", type=float, default=5.0)
    sp.add_argument("--y0", type=float, default=0.0)
    sp.add_argument("--phase0", default=None)
    sp.add_argument("--t-burn", type=float, default=100.0)
    sp.add_argument("--t-run", type=float, default=1e5)
    sp.add_argument("--batches", type=int, default=20)
    sp.add_argument("--replicas", type=int, default=1)

    sp = sub.add_parser("convergence", help="error against the first-fluid oracle")
    common(sp, stencil=False)
    sp.add_argument("--degrees", default="0,1")
    sp.add_argument("--hs", default="1.5,1.0,0.5,0.25,0.1,0.05")
    sp.add_argument("--dh", type=float, default=1e-6)
    sp.add_argument("--dhs", default=None,
                    help="boundary widths for the boundary study at --boundary-h")
    sp.add_argument("--boundary-h", type=float, default=1.0)
    sp.add_argument("--reference-dh", type=float, default=0.005)
    return p


def load(args):
    params = _parse_params(getattr(args, "param", None))
    name = args.model
    if name == "bandwidth":
        return build_bandwidth_model(params)
    path = Path(name)
    if not path.exists():
        raise ConfigError(f"model file {name!r} not found")
    if params:
        from .model import tomllib  # reuse the parser the loader picked
        d = (json.loads(path.read_text()) if path.suffix.lower() == ".json"
             else tomllib.loads(path.read_text()))
        if "bandwidth" not in d:
            raise ConfigError("--param only applies to bandwidth models")
        d["bandwidth"] = {**d["bandwidth"], **params}
        from .model import model_from_dict
        return model_from_dict(d)
    return load_model(path)


def make_stencil_from_args(args):
    from .stencil import Stencil, make_omega_stencil

    omega = [args.K, args.h, args.dh]
    if args.nodes is not None:
        if any(v is not None for v in omega):
            raise ConfigError("give either --nodes or --K/--h/--dh, not both")
        return Stencil(np.array(_float_list(args.nodes)))
    if all(v is None for v in omega):
        return make_omega_stencil(43, 0.4, 0.001)
    if any(v is None for v in omega):
        raise ConfigError("--K, --h and --dh must be given together")
    return make_omega_stencil(args.K, args.h, args.dh)


def _out_dir(args) -> Path:
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from exc
    return out


def _discretise(args, model):
    from .stationary import discretise
    from .stencil import make_basis

    basis = make_basis(make_stencil_from_args(args), args.degree)
    return discretise(model, basis, rho_mode=args.rho_mode)


def _phase_arg(model, label, x0):
    if label is None:
        part = partition_rates(model)
        for i in range(model.n_phases):
            if part.sign_at(i, x0) == "+":
                return i
        raise ConfigError(f"no phase has a positive second-fluid rate at x = {x0}")
    try:
        return model.phase_index(label)
    except ValueError as exc:
        raise ConfigError(f"unknown phase {label!r}") from exc


def dump_operators(out: Path, disc, psi=None) -> list:
    from .dg_core import assemble_flux

    B, model, basis = disc.B, disc.model, disc.basis
    written = []

    def put(name, A):
        write_matrix(out / f"{name}.csv", A)
        written.append(f"{name}.csv")

    from .dg_core import assemble_generator
    gens = assemble_generator(model, basis, check=False)
    put("M", gens.M)
    put("G", gens.G)
    for i, lbl in enumerate(model.phases):
        put(f"F_{lbl}", assemble_flux(basis, int(np.sign(model.c[i]))))
        put(f"Q_{lbl}", gens.Q[i])
    put("B", B.full)
    for l in "+-0":
        for m in "+-0":
            for i, li in enumerate(model.phases):
                for j, lj in enumerate(model.phases):
                    blk = B.phase_block(l, i, m, j)
                    if np.any(blk):
                        put(f"B_{_sign_name(l)}{li}_{_sign_name(m)}{lj}", blk)
    for key, D in disc.D.items():
        put(f"D_{_sign_name(key[0])}{_sign_name(key[1])}", D)
    put("R_plus", disc.R.R_plus)
    put("R_minus", disc.R.R_minus)
    if psi is not None:
        put("psi", psi)
    return written


def _sign_name(s):
    return {"+": "p", "-": "m", "0": "z"}[s]


def cmd_validate(args) -> dict:
    model = load(args)
    rep = validate_model(model)
    out = _out_dir(args)
    write_json(out / "validation.json", rep.as_dict())
    print(json.dumps(rep.as_dict(), indent=2))
    rep.raise_for_failure()
    part = partition_rates(model)
    return {"model": model_to_dict(model), "S_plus": [model.phases[i] for i in part.S_plus],
            "S_minus": [model.phases[i] for i in part.S_minus],
            "S_zero": [model.phases[i] for i in part.S_zero]}


def cmd_assemble(args) -> dict:
    model = load(args)
    disc = _discretise(args, model)
    out = _out_dir(args)
    files = dump_operators(out, disc)
    return {"N": disc.basis.N, "n_meshes": disc.basis.n_meshes, "files": files,
            "n_plus": len(disc.B.indices("+")), "n_minus": len(disc.B.indices("-")),
            "n_zero": len(disc.B.indices("0"))}


def cmd_psi(args) -> dict:
    from .riccati import first_return_cdf, plus_point_mass, solve_psi

    model = load(args)
    disc = _discretise(args, model)
    psi = solve_psi(disc.D, method=args.psi_method, tol=args.psi_tol)
    out = _out_dir(args)
    ph = _phase_arg(model, args.phase0, args.x0)
    a0 = plus_point_mass(disc.B, disc.basis, ph, args.x0)
    cdf = first_return_cdf(a0, psi.psi, disc.B, disc.basis)
    nodes = disc.basis.stencil.nodes
    table = cdf.at_nodes()
    rows = [(model.phases[i], x, table[i, k]) for i in range(model.n_phases)
            for k, x in enumerate(nodes)]
    write_csv(out / "return_cdf.csv", ("phase", "x", "cdf"), rows)
    if args.dump_operators:
        dump_operators(out, disc, psi.psi)
    print(f"psi residual {psi.residual:.3e} after {psi.iterations} {psi.method} iterations")
    return {"psi_residual": psi.residual, "psi_iterations": psi.iterations,
            "psi_method": psi.method, "N": disc.basis.N,
            "n_elements": model.n_phases * disc.basis.N, "n_meshes": disc.basis.n_meshes,
            "returned_mass": dict(zip(model.phases, cdf.total())),
            "initial": {"x0": args.x0, "phase": model.phases[ph]}}


def cmd_stationary(args) -> dict:
    from .stationary import solve_stationary
    from .stencil import make_basis

    model = load(args)
    basis = make_basis(make_stencil_from_args(args), args.degree)
    sol = solve_stationary(model, basis, rho_mode=args.rho_mode, psi_method=args.psi_method,
                           psi_tol=args.psi_tol)
    out = _out_dir(args)
    nodes = basis.stencil.nodes
    P = model.n_phases
    ys = parse_y_grid(args.y_grid)
    widths = basis.stencil.widths

    rows = []
    if sol.recurrent:
        signs = {}
        for s in "+-0":
            for i in range(P):
                for k in sol.disc.gamma[(i, s)]:
                    signs[(i, k)] = s
        for y in ys:
            dens = sol.density_at_y(float(y))
            for i in range(P):
                for k in range(basis.n_meshes):
                    s = signs[(i, k)]
                    mass = np.atleast_2d(dens[s].cell_masses())[i, k]
                    rows.append((model.phases[i], s, nodes[k], nodes[k + 1], y, mass / widths[k]))
    write_csv(out / "density.csv",
              ("phase", "sign_class", "x_cell_left", "x_cell_right", "y", "density"), rows)

    pm = np.atleast_2d(sol.point_masses().cell_masses())
    write_csv(out / "masses.csv", ("phase", "x_cell", "mass"),
              [(model.phases[i], k + 1, pm[i, k]) for i in range(P) for k in range(basis.n_meshes)])

    yz = sol.marginal_x("y_zero_positive")
    oo = sol.marginal_x("on_off")
    cols = [yz["0"].cell_masses(), yz["+"].cell_masses(), oo["on"].cell_masses(),
            oo["off"].cell_masses()]
    write_csv(out / "marginals.csv",
              ("x_cell_left", "x_cell_right", "chi_y_zero", "chi_y_positive", "chi_on", "chi_off"),
              [(nodes[k], nodes[k + 1], *(c[k] for c in cols)) for k in range(basis.n_meshes)])
    if args.dump_operators:
        dump_operators(out, sol.disc, sol.psi.psi)
    summary = {**sol.summary(), "n_elements": P * basis.N}
    print(f"P[Y=0] = {summary['P_Y_zero']:.6f}  P[Y>0] = {summary['P_Y_positive']:.6f}")
    return summary


def cmd_simulate(args) -> dict:
    from .montecarlo import estimate_stationary, simulate_first_returns

    model = load(args)
    out = _out_dir(args)
    if args.mode == "first-return":
        ph = _phase_arg(model, args.phase0, args.x0)
        rec = simulate_first_returns(model, (args.x0, args.y0, ph), args.paths, args.horizon,
                                     args.seed)
        write_csv(out / "paths.csv", ("path", "tau", "x", "phase", "censored"),
                  [(k, rec.tau[k], "" if rec.censored[k] else rec.x[k],
                    "" if rec.censored[k] else model.phases[rec.phase[k]], int(rec.censored[k]))
                   for k in range(len(rec))])
        kept = ~rec.censored
        frac = {lbl: float(np.mean(rec.phase[kept] == i)) if kept.any() else 0.0
                for i, lbl in enumerate(model.phases)}
        print(f"{len(rec)} paths, censored fraction {rec.censored_fraction:.4f}")
        return {"paths": len(rec), "censored_fraction": rec.censored_fraction,
                "return_phase_fractions": frac, "seed": args.seed, "horizon": args.horizon,
                "initial": {"x0": args.x0, "y0": args.y0, "phase": model.phases[ph]}}
    ph = model.phase_index(args.phase0) if args.phase0 is not None else 0
    est = estimate_stationary(model, args.t_burn, args.t_run, args.seed, args.batches,
                              args.replicas, init=(args.x0, args.y0, ph))
    p0, se0 = est.p_y_zero
    cdf = est.x_cdf()
    write_csv(out / "x_cdf.csv", ("x", "cdf"), zip(est.edges, cdf))
    print(f"P[Y=0] = {p0:.6f} +/- {se0:.6f}")
    return {"P_Y_zero": p0, "P_Y_zero_se": se0, "P_Y_positive": est.p_y_positive[0],
            "seed": args.seed, "batches": est.y_zero.shape[0]}


def cmd_convergence(args) -> dict:
    from .analysis import boundary_width_study, convergence_study

    model = load(args)
    out = _out_dir(args)
    degrees = [int(d) for d in _float_list(args.degrees)]
    hs = _float_list(args.hs)
    reports = [convergence_study(model, hs, args.dh, d) for d in degrees]
    if args.dhs:
        reports.append(boundary_width_study(model, _float_list(args.dhs), args.boundary_h,
                                            args.reference_dh))
    rows = [(r["variable"], r["degree"], r["value"], r["error"], r["n_elements"], r["slope"])
            for rep in reports for r in rep.rows()]
    write_csv(out / "convergence.csv",
              ("variable", "degree", "value", "error", "n_elements", "slope"), rows)
    for rep in reports:
        print(f"{rep.variable} degree {rep.degree}: slope {rep.slope:.3f} (R^2 {rep.r2:.4f})")
    return {"studies": [{"variable": r.variable, "degree": r.degree, "slope": r.slope,
                         "r2": r.r2, "values": r.values, "errors": r.errors,
                         "n_elements": r.n_elements, "seconds": r.seconds} for r in reports]}


COMMANDS = {
    "validate": cmd_validate,
    "assemble": cmd_assemble,
    "psi": cmd_psi,
    "stationary": cmd_stationary,
    "simulate": cmd_simulate,
    "convergence": cmd_convergence,
}


def run(argv=None) -> int:
    t0 = time.perf_counter()
    try:
        args = build_parser().parse_args(argv)
        summary = COMMANDS[args.command](args)
        summary = {"command": args.command, **summary,
                   "wall_time_seconds": time.perf_counter() - t0}
        write_json(_out_dir(args) / "summary.json", summary)
        return EXIT_OK
    except FFDGError as exc:
        print(json.dumps(exc.record()), file=sys.stderr)
        return EXIT_ERROR
    except Exception as exc:  # last resort: still emit a machine-readable record
        rec = {"error": "InternalError", "module": "cli", "message": f"{type(exc).__name__}: {exc}"}
        print(json.dumps(rec), file=sys.stderr)
        return EXIT_INTERNAL


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
