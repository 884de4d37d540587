"""Command line interface: ``patchsis <command> ...``.

Exit codes: 0 success, 1 invalid input, 2 solver failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

from . import equilibria, io, lln, ode, ssa, table1
from .errors import PatchsisError, SolverError, ValidationError

log = logging.getLogger("patchsis")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3


def _pick(flag, section: dict, key: str, what: str):
    value = flag if flag is not None else section.get(key)
    if value is None:
        raise ValidationError(f"{what} must be given on the command line or in the config")
    return value


def _require_initial(cfg: io.RunConfig):
    if cfg.initial is None:
        raise ValidationError("config.initial: this command needs an initial condition")
    return cfg.initial


def cmd_validate(args) -> int:
    cfg = io.parse_config(args.config)
    m = cfg.model
    print(f"ok: {m.ell} patch(es), nu_s={m.nu_s:g}, nu_i={m.nu_i:g}, config_hash={cfg.config_hash}")
    if args.json:
        io.write_json_report(args.json, "validate", cfg.config_hash,
                             {"valid": True, "ell": m.ell}, {"config": cfg.normalized})
    return EXIT_OK


def cmd_echo(args) -> int:
    cfg = io.parse_config(args.config)
    sys.stdout.write(io.write_config(cfg, args.out))
    return EXIT_OK


def cmd_sim(args) -> int:
    cfg = io.parse_config(args.config)
    x0 = _require_initial(cfg)
    n = int(_pick(args.n, cfg.sim, "n", "--n"))
    t_max = float(_pick(args.tmax, cfg.sim, "t_max", "--tmax"))
    seed = int(args.seed if args.seed is not None else cfg.sim.get("seed", 0))
    record = ssa.parse_recording(args.record or cfg.sim.get("record", "every"))
    sim_cfg = ssa.SimConfig(n, t_max, seed, record)
    traj = ssa.simulate(cfg.model, x0, sim_cfg)
    meta = {
        "command": "sim",
        "seed": seed,
        "N": n,
        "t_max": format(t_max, ".17g"),
        "recording": ssa.recording_to_str(record),
        "quantity": "counts",
        "config_hash": cfg.config_hash,
        "events": traj.event_count,
        "absorbed": traj.absorbed,
    }
    io.write_trajectory_csv(traj, args.out, meta)
    print(f"{traj.event_count} events, {len(traj)} records -> {args.out}"
          + (f" (absorbed at t={traj.absorbed_at:.6g})" if traj.absorbed else ""))
    if args.json:
        io.write_json_report(
            args.json, "sim", cfg.config_hash,
            {"events": traj.event_count, "records": len(traj), "absorbed": traj.absorbed,
             "absorbed_at": traj.absorbed_at, "final_counts": traj.counts[-1]},
            {"seed": seed, "N": n, "t_max": t_max, "recording": ssa.recording_to_str(record),
             "config": cfg.normalized},
        )
    return EXIT_OK


def cmd_ode(args) -> int:
    cfg = io.parse_config(args.config)
    z0 = _require_initial(cfg)
    sec = cfg.ode
    t_max = float(_pick(args.tmax, sec, "t_max", "--tmax"))
    if args.dt is not None:
        method = ode.RK4Fixed(args.dt)
    elif args.adaptive or sec.get("method", "rk45") == "rk45":
        method = ode.RK45Adaptive(sec.get("rel_tol") or 1e-8, sec.get("abs_tol") or 1e-10)
    else:
        method = ode.RK4Fixed(sec["dt"])
    record_dt = args.record_dt if args.record_dt is not None else sec.get("record_dt")
    traj = ode.integrate(cfg.model, z0, ode.OdeConfig(t_max, method, record_dt))
    meta = {"command": "ode", "method": traj.method, "t_max": format(t_max, ".17g"),
            "config_hash": cfg.config_hash}
    io.write_trajectory_csv(traj, args.out, meta)
    drift = float(abs(traj.mass() - traj.mass()[0]).max())
    print(f"{traj.steps} steps ({traj.rejected} rejected), {len(traj.times)} records -> {args.out}")
    if args.json:
        io.write_json_report(
            args.json, "ode", cfg.config_hash,
            {"final": traj.final, "final_prevalence": traj.final.prevalence},
            {"method": traj.method, "steps": traj.steps, "rejected": traj.rejected,
             "mass_drift": drift, "config": cfg.normalized},
        )
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = io.parse_config(args.config)
    mass = args.mass if args.mass is not None else cfg.mass
    report = equilibria.analyze(cfg.model, mass)
    res = io.analysis_to_dict(report)
    print(f"R0 = {report.r0:.12g}")
    print(f"N* = {', '.join(f'{v:.12g}' for v in report.n_star)}")
    if report.ee is None:
        print("endemic equilibrium: none (R0 <= 1)")
    else:
        print("endemic equilibrium:")
        print("patch,s,i,prevalence")
        for j, (s, i, p) in enumerate(zip(report.ee.s, report.ee.i, report.ee.prevalence)):
            print(f"{j + 1},{s:.17g},{i:.17g},{p:.17g}")
        print(f"stability modulus at EE = {report.stability_modulus_at_ee:.6g}")
    if args.json:
        io.write_json_report(args.json, "analyze", cfg.config_hash, res,
                             dict(report.solver_diagnostics, config=cfg.normalized))
    return EXIT_OK


def cmd_lln(args) -> int:
    cfg = io.parse_config(args.config)
    x0 = _require_initial(cfg)
    sec = cfg.lln
    pops = args.pops if args.pops is not None else sec.get("populations")
    if pops is None:
        raise ValidationError("--pops must be given on the command line or in the config")
    study = lln.LlnStudyConfig(
        populations=pops,
        replicates=int(_pick(args.replicates, sec, "replicates", "--replicates")),
        t_max=float(_pick(args.tmax, sec, "t_max", "--tmax")),
        grid_dt=args.grid_dt if args.grid_dt is not None else sec.get("grid_dt"),
        master_seed=int(args.seed if args.seed is not None else sec.get("seed", 0)),
        threads=args.threads,
    )
    result = lln.convergence_study(cfg.model, x0, study)
    header, rows = io.lln_rows(result)
    meta = {"command": "lln", "seed": study.master_seed, "replicates": study.replicates,
            "t_max": format(study.t_max, ".17g"), "grid_dt": format(study.spacing, ".17g"),
            "config_hash": cfg.config_hash}
    io.write_rows_csv(args.out, header, rows, meta)
    print(",".join(header))
    for row in rows:
        print(",".join(format(v, ".6g") if isinstance(v, float) else str(v) for v in row))
    try:
        fit = lln.rate_fit(result)
        fit_info = {"slope": fit.slope, "intercept": fit.intercept, "residual": fit.residual}
        print(f"# log-log slope of median error vs N: {fit.slope:.3f} (rms residual {fit.residual:.3f})")
    except SolverError as exc:
        fit_info = {"error": str(exc)}
    if args.json:
        io.write_json_report(
            args.json, "lln", cfg.config_hash,
            {"aggregates": [dict(zip(header, r)) for r in rows],
             "cells": [{"N": c.population, "replicate": c.replicate, "sup_error": c.sup_error,
                        "events": c.events, "absorbed": c.absorbed, "error": c.error}
                       for c in result.cells]},
            {"rate_fit": fit_info, "grid_points": len(result.grid),
             "reference_method": result.reference.method, "config": cfg.normalized},
        )
    return EXIT_OK


def cmd_table1(args) -> int:
    report = table1.run_table1(args.adjacency)
    print(table1.format_table1(report))
    if args.json:
        io.write_json_report(args.json, "table1", None, table1.table1_to_dict(report),
                             {"seconds": report.seconds})
    return EXIT_OK


def _int_list(text: str):
    try:
        return [int(float(x)) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a comma-separated list of integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="patchsis", description=__doc__.splitlines()[0])
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for replicate runs (default: $PATCHSIS_THREADS or all cores)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("validate", help="check a configuration file")
    sp.add_argument("config")
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_validate)

    sp = sub.add_parser("echo", help="print the normalised configuration")
    sp.add_argument("config")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_echo)

    sp = sub.add_parser("sim", help="simulate the stochastic model")
    sp.add_argument("config")
    sp.add_argument("--n", type=int)
    sp.add_argument("--tmax", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--record", help="every | final | grid:<dt>")
    sp.add_argument("--out", required=True)
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_sim)

    sp = sub.add_parser("ode", help="integrate the deterministic model")
    sp.add_argument("config")
    sp.add_argument("--tmax", type=float)
    g = sp.add_mutually_exclusive_group()
    g.add_argument("--dt", type=float, help="fixed-step RK4 with this step")
    g.add_argument("--adaptive", action="store_true", help="adaptive Dormand-Prince (default)")
    sp.add_argument("--record-dt", type=float)
    sp.add_argument("--out", required=True)
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_ode)

    sp = sub.add_parser("analyze", help="R0, equilibria and stability")
    sp.add_argument("config")
    sp.add_argument("--mass", type=float)
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("lln", help="convergence study of the stochastic model")
    sp.add_argument("config")
    sp.add_argument("--pops", type=_int_list)
    sp.add_argument("--replicates", type=int)
    sp.add_argument("--tmax", type=float)
    sp.add_argument("--grid-dt", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_lln)

    sp = sub.add_parser("table1", help="two-patch endemic prevalences vs the reference table")
    sp.add_argument("--adjacency", type=float, default=table1.DEFAULT_ADJACENCY)
    sp.add_argument("--json")
    sp.set_defaults(func=cmd_table1)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        if exc.diagnostics:
            print(json.dumps(io.to_jsonable(exc.diagnostics)), file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except PatchsisError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
