"""Command-line driver: ``porofem {run,converge,practical,validate-params}``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import io
from .constitutive import ConstitutivePositivityError, ParameterError, validate_smallness
from .experiments import (
    ConvergenceConfig,
    ConvergenceReport,
    PracticalConfig,
    convergence_study,
    coupled_rows,
    practical_problem,
    practical_setup,
    run_manufactured,
)
from .linsolve import FactorizationError, set_deterministic
from .solver import SetupError, SolverError

log = logging.getLogger("porofem")

EXIT_OK, EXIT_NUMERICAL, EXIT_USAGE = 0, 1, 2


def _rows(text: str):
    try:
        rows = []
        for item in text.split(","):
            m, N = item.split(":")
            rows.append((int(m), int(N)))
        return rows
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected m:N[,m:N...], got {text!r}")


def _ints(text: str):
    try:
        return [int(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _floats(text: str):
    try:
        return [float(v) for v in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="porofem", description=__doc__)
    p.add_argument("-v", "--verbose", action="count", default=0)
    sub = p.add_subparsers(dest="command")

    def common(sp, problem):
        sp.add_argument("--config", type=Path, help="JSON run configuration")
        sp.add_argument("--output-dir", type=Path)
        sp.add_argument("--viscous-form", choices=io.VISCOUS_FORMS)
        sp.add_argument("--backend", choices=("pardiso", "superlu"))
        sp.add_argument("--deterministic", action="store_true", default=None)
        sp.set_defaults(problem=problem)

    run = sub.add_parser("run", help="single simulation described by a config file")
    common(run, None)

    conv = sub.add_parser("converge", help="manufactured-solution error tables and rates")
    common(conv, "manufactured")
    conv.add_argument("--theta", choices=io.THETAS)
    conv.add_argument("--rows", type=_rows, help="m:N pairs, e.g. 4:10,5:40")
    conv.add_argument("--coupled", type=_ints, metavar="LEVELS",
                      help="refinement levels with dt = 12.8 h^2, e.g. 4,5,6")

    prac = sub.add_parser("practical", help="strain study on the (0,2)x(0,1) problem")
    common(prac, "practical")
    prac.add_argument("--lambdas", type=_floats)
    prac.add_argument("--vtu", action="store_true", help="write final-time fields per lambda")

    val = sub.add_parser("validate-params", help="print the smallness constants")
    val.add_argument("--config", type=Path)
    val.add_argument("--problem", choices=io.PROBLEMS, default=None)
    val.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                     help="override a material parameter")
    return p


def _load(args, problem) -> io.RunConfig:
    doc = json.loads(args.config.read_text()) if args.config else {}
    if problem:
        if doc.setdefault("problem", problem) != problem:
            raise io.ConfigError("problem", f"this subcommand runs the {problem} problem")
    cfg = io.parse_config(doc)
    if getattr(args, "output_dir", None):
        cfg.output_dir = str(args.output_dir)
    if getattr(args, "viscous_form", None):
        cfg.viscous_form = args.viscous_form
    if getattr(args, "backend", None):
        cfg.backend = args.backend
    if getattr(args, "deterministic", None):
        cfg.deterministic = True
    return cfg


def _converge(cfg: io.RunConfig, out: Path):
    rows = cfg.rows or ([] if cfg.coupled_levels else [(cfg.m, cfg.N)])
    reports = []
    if rows:
        reports.append(("errors", ConvergenceConfig(cfg.theta, rows, cfg.params, cfg.T,
                                                    cfg.viscous_form, cfg.backend)))
    if cfg.coupled_levels:
        reports.append(("rates", ConvergenceConfig(cfg.theta, coupled_rows(cfg.coupled_levels, T=cfg.T),
                                                   cfg.params, cfg.T, cfg.viscous_form, cfg.backend)))
    failed = False
    for kind, conf in reports:
        report = convergence_study(conf)
        path = io.write_error_table(out / f"{kind}_theta_{cfg.theta}.csv", report)
        print(f"wrote {path}")
        if kind == "rates":
            print(f"wrote {io.write_rate_table(out / f'rates_theta_{cfg.theta}.csv', report)}")
        for r in report.rows:
            if r.failure:
                failed = True
                print(f"m={r.m} N={r.N} FAILED {r.failure}", file=sys.stderr)
            else:
                e = r.errors
                print(f"m={r.m} N={r.N} " + " ".join(f"{k}={v:.4e}" for k, v in e.as_dict().items()))
    return EXIT_NUMERICAL if failed else EXIT_OK


def _practical(cfg: io.RunConfig, out: Path, vtu: bool):
    pc = PracticalConfig(nx=cfg.nx, ny=cfg.ny, dt=cfg.dt, T=cfg.T, params=cfg.params,
                         viscous_form=cfg.viscous_form, backend=cfg.backend)
    results = []
    for lam in cfg.lambdas:
        callbacks = []
        if cfg.vtu_every:
            # same mesh and dof maps as the run itself; only used for output
            snap_setup = practical_setup(pc)

            def snap(state, diag, lam=lam, s=snap_setup):
                if state.n % cfg.vtu_every == 0:
                    io.export_vtu(state, s.mesh, _maps(s), out / f"practical_lambda{lam:g}_{state.n:04d}.vtu")
            callbacks.append(snap)
        r = practical_problem(pc, lam, callbacks)
        results.append(r)
        print(f"lambda={lam:g} " + " ".join(f"{t:.2f}:{s:.5f}" for t, s in zip(r.times, r.strain)))
        if vtu:
            path = io.export_vtu(r.final, r.setup.mesh, _maps(r.setup), out / f"practical_lambda{lam:g}_final.vtu")
            print(f"wrote {path}")
    print(f"wrote {io.write_strain_table(out / 'strain_linf.csv', results)}")
    return EXIT_OK


def _maps(setup):
    return setup.umap, setup.vmap, setup.pmap


def _run(cfg: io.RunConfig, out: Path):
    if cfg.problem == "practical":
        return _practical(cfg, out, vtu=True)
    callbacks = []
    if cfg.vtu_every:
        from .experiments import manufactured_setup
        from .manufactured import ManufacturedCase, Theta
        s = manufactured_setup(cfg.m, cfg.N, ManufacturedCase(Theta(cfg.theta), cfg.params), cfg.T)

        def snap(state, diag):
            if state.n % cfg.vtu_every == 0 or state.n == cfg.N:
                io.export_vtu(state, s.mesh, _maps(s), out / f"manufactured_{state.n:04d}.vtu")
        callbacks.append(snap)
    row = run_manufactured(cfg.m, cfg.N, cfg.theta, cfg.params, cfg.T, cfg.viscous_form,
                           cfg.backend, callbacks)
    report = ConvergenceReport(cfg.theta, [row], [])
    print(f"wrote {io.write_error_table(out / 'errors.csv', report)}")
    print(" ".join(f"{k}={v:.4e}" for k, v in row.errors.as_dict().items()))
    return EXIT_OK


def _validate(args) -> int:
    doc = json.loads(args.config.read_text()) if args.config else {}
    if args.problem:
        doc["problem"] = args.problem
    params = doc.setdefault("params", {})
    for item in args.set:
        key, _, value = item.partition("=")
        try:
            params[key] = float(value)
        except ValueError:
            raise io.ConfigError(f"params.{key}", f"not a number: {value!r}")
    cfg = io.parse_config(doc)
    g = validate_smallness(cfg.params)
    for k, v in g.as_dict().items():
        if not isinstance(v, bool):
            print(f"{k} = {v:.6g}")
    print(f"admissible={'true' if g.admissible else 'false'}")
    return EXIT_OK


def cli_main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        if args.command == "validate-params":
            return _validate(args)
        cfg = _load(args, args.problem)
        if args.command == "converge":
            cfg.problem = "manufactured"
            if args.theta:
                cfg.theta = args.theta
            if args.rows:
                cfg.rows = args.rows
            if args.coupled:
                cfg.coupled_levels = args.coupled
        elif args.command == "practical" and args.lambdas is not None:
            cfg.lambdas = args.lambdas
        if cfg.deterministic:
            set_deterministic()
        out = Path(cfg.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "converge":
            return _converge(cfg, out)
        if args.command == "practical":
            return _practical(cfg, out, args.vtu)
        return _run(cfg, out)
    except (io.ConfigError, ParameterError, SetupError, json.JSONDecodeError, OSError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConstitutivePositivityError, SolverError, FactorizationError) as exc:
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


def main():
    sys.exit(cli_main())


if __name__ == "__main__":
    main()
