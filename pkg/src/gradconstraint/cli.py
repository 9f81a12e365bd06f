"""
Command-line interface.

Subcommands: ``mesh`` (write a disk mesh), ``solve`` (one gradient-flow
solve with a JSON report), ``apriori`` and ``aposteriori`` (convergence
studies written as CSV).

Exit codes: 0 success, 1 usage or parameter error, 2 solver
non-convergence, 3 I/O error.
"""

import argparse
import json
import logging
import sys

from .dual_solver import FlowParams, run_flow
from .duality import marini_reconstruct, discrete_gap_estimator, write_indicators
from .energy import dual_energy_h, primal_energy_h
from .errors import MeshFormatError, ParameterError, SolverError, GradConstraintError
from .experiments import ManufacturedCase, StudyConfig, active_set_report, run_study
from .mesh import MAX_DISK_LEVEL, atomic_write_text, build_disk_mesh, load_mesh, save_mesh
from .spaces import ProblemData, cr_gradient, write_fields


EXIT_OK, EXIT_USAGE, EXIT_SOLVER, EXIT_IO = 0, 1, 2, 3
MAX_STUDY_LEVEL = 6

FLOW_DEFAULTS = {"tau": 1.0, "eps_stop": 1e-4, "max_iter": 10000}
STUDY_DEFAULTS = {"C": 10.0, "r": 1.0, "levels": [1, 2, 3, 4, 5], "tau": 1.0,
                  "eps_stop": 1e-8, "max_iter": 10000}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive(kind):
    def conv(text):
        try:
            val = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid value {text!r}") from None
        if not val > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return val
    return conv


def parse_levels(text):
    """``"1:5"`` (inclusive range) or ``"1,2,4"``."""
    try:
        if ":" in text:
            lo, hi = (int(p) for p in text.split(":"))
            levels = list(range(lo, hi + 1))
        else:
            levels = [int(p) for p in text.split(",") if p.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid level list {text!r}") from None
    if not levels or min(levels) < 0 or max(levels) > MAX_STUDY_LEVEL:
        raise argparse.ArgumentTypeError(f"levels must lie in [0, {MAX_STUDY_LEVEL}]")
    return levels


def build_parser():
    parser = _Parser(prog="gradconstraint", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--verbose", action="store_true", help="log per-iteration residuals")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("mesh", help="write a concentric-ring disk mesh")
    p.add_argument("--radius", type=_positive(float), default=1.0, help="disk radius (default: 1.0)")
    p.add_argument("--level", type=int, required=True, help=f"refinement level 0..{MAX_DISK_LEVEL}")
    p.add_argument("--out", required=True, help="output mesh file")

    p = sub.add_parser("solve", help="run the dual gradient flow on one mesh")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh", help="mesh file (homogeneous boundary data)")
    src.add_argument("--disk-level", type=int,
                     help="disk mesh level with the manufactured boundary data")
    p.add_argument("--radius", type=_positive(float), default=1.0, help="disk radius (default: 1.0)")
    p.add_argument("--C", type=_positive(float), default=10.0, help="constant load (default: 10.0)")
    p.add_argument("--tau", type=_positive(float), default=FLOW_DEFAULTS["tau"],
                   help="step size (default: 1.0)")
    p.add_argument("--eps-stop", type=_positive(float), default=FLOW_DEFAULTS["eps_stop"],
                   help="residual stopping tolerance (default: 1e-4)")
    p.add_argument("--max-iter", type=_positive(int), default=FLOW_DEFAULTS["max_iter"],
                   help="iteration cap (default: 10000)")
    p.add_argument("--warm-start", action="store_true",
                   help="start the flow from a proximal Newton solve (default: off)")
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--dump-fields", help="write solution fields as CSV")
    p.add_argument("--dump-indicators", help="write per-element gap contributions as CSV")

    for name, text in (("apriori", "a priori convergence study"),
                       ("aposteriori", "a posteriori convergence study")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="JSON config file; flags override its entries")
        p.add_argument("--C", type=_positive(float), help="constant load (default: 10.0)")
        p.add_argument("--r", type=_positive(float), help="disk radius (default: 1.0)")
        p.add_argument("--levels", type=parse_levels, help="levels as lo:hi or a,b,c (default: 1:5)")
        p.add_argument("--tau", type=_positive(float), help="step size (default: 1.0)")
        p.add_argument("--eps-stop", type=_positive(float),
                       help="residual stopping tolerance (default: 1e-8)")
        p.add_argument("--max-iter", type=_positive(int), help="iteration cap (default: 10000)")
        p.add_argument("--no-warm-start", action="store_true",
                       help="start the flow from the linear problem instead of a Newton solve")
        p.add_argument("--jobs", type=_positive(int), default=1,
                       help="levels solved in parallel (default: 1)")
        p.add_argument("--out", help="output CSV (required unless set in the config)")
    return parser


def _cmd_mesh(args):
    if not 0 <= args.level <= MAX_DISK_LEVEL:
        raise ParameterError(f"--level must lie in [0, {MAX_DISK_LEVEL}]")
    save_mesh(build_disk_mesh(args.radius, args.level), args.out)
    return EXIT_OK


def _cmd_solve(args):
    if args.mesh:
        mesh = load_mesh(args.mesh)
        data = ProblemData.constant(mesh, zeta=1.0, f=args.C)
    else:
        if not 0 <= args.disk_level <= MAX_DISK_LEVEL:
            raise ParameterError(f"--disk-level must lie in [0, {MAX_DISK_LEVEL}]")
        mesh = build_disk_mesh(args.radius, args.disk_level)
        data = ManufacturedCase(args.C, args.radius).data(mesh)
    params = FlowParams(args.tau, args.eps_stop, args.max_iter, warm_start=args.warm_start)
    report = run_flow(data, params)
    u_h, defect = marini_reconstruct(report.z, report.lam, data)
    primal = primal_energy_h(u_h, data)
    dual = dual_energy_h(report.z, data)
    out = {
        "iterations": report.iterations,
        "residual_norm": report.residual_norm,
        "dual_energy": {"final": dual.value, "feasible": dual.feasible,
                        "history": report.dual_energy_history},
        "primal_energy": {"value": primal.value, "feasible": primal.feasible,
                          "violations": list(primal.violations)},
        "duality_gap": primal.value - dual.value,
        "conformity_defect": defect,
        "active_set": active_set_report(u_h, report.z, data),
        "mesh": {"vertices": mesh.n_vertices, "elements": mesh.n_elements,
                 "sides": mesh.n_sides, "h": mesh.h},
    }
    atomic_write_text(args.out, json.dumps(out, indent=2) + "\n")
    if args.dump_fields:
        write_fields(args.dump_fields, cr=u_h, rt=report.z, p0_scalar=report.lam,
                     p0_vector=cr_gradient(u_h))
    if args.dump_indicators:
        write_indicators(args.dump_indicators,
                         discrete_gap_estimator(u_h, report.z, data).per_element)
    return EXIT_OK


def _study_config(args):
    raw = {}
    if args.config:
        with open(args.config) as fh:
            try:
                raw = json.load(fh)
            except json.JSONDecodeError as exc:
                raise ParameterError(f"invalid config JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ParameterError("config must be a JSON object")
        if raw.get("study", args.command) != args.command:
            raise ParameterError(f"config study {raw['study']!r} does not match {args.command!r}")
    case = dict(raw.get("case", {}))
    flow = dict(raw.get("flow", {}))
    if args.C is not None:
        case["C"] = args.C
    if args.r is not None:
        case["r"] = args.r
    for flag, key in (("tau", "tau"), ("eps_stop", "eps_stop"), ("max_iter", "max_iter")):
        val = getattr(args, flag)
        if val is not None:
            flow[key] = val
    if args.no_warm_start:
        flow["warm_start"] = False
    case.setdefault("C", STUDY_DEFAULTS["C"])
    case.setdefault("r", STUDY_DEFAULTS["r"])
    levels = args.levels if args.levels is not None else raw.get("levels", STUDY_DEFAULTS["levels"])
    if any(int(lv) > MAX_STUDY_LEVEL or int(lv) < 0 for lv in levels):
        raise ParameterError(f"levels must lie in [0, {MAX_STUDY_LEVEL}]")
    out = args.out if args.out is not None else raw.get("out")
    if not out:
        raise ParameterError("an output path is required (--out or config 'out')")
    return StudyConfig.from_dict({"case": case, "flow": flow, "levels": levels,
                                  "study": args.command, "out": out, "jobs": args.jobs})


def _cmd_study(args):
    config = _study_config(args)
    table = run_study(config)
    for row in table.rows:
        logging.getLogger(__name__).info(
            "level %d: e_tot %.4e e_gap %.4e", row["level"], row["e_tot"], row["e_gap"])
    return EXIT_OK


def run_cli(argv=None):
    """Run the CLI and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:       # --help
        return int(exc.code or 0)
    if args.command is None:
        print("gradconstraint: a subcommand is required (mesh, solve, apriori, aposteriori)",
              file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s", stream=sys.stderr)
    handlers = {"mesh": _cmd_mesh, "solve": _cmd_solve,
                "apriori": _cmd_study, "aposteriori": _cmd_study}
    try:
        return handlers[args.command](args)
    except MeshFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ParameterError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except GradConstraintError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run_cli(sys.argv[1:]))


if __name__ == "__main__":
    main()
