"""Command line interface.

Subcommands: solve, project, sweep, greens-table, param-table.
Exit codes: 0 success, 2 configuration error, 3 solver error.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import assembly, bench, projector
from .errors import ConfigError, MeshError, SolverError
from .femspace import make_space
from .mesh import classify_boundary


def _add_config(p):
    p.add_argument("--config", required=True, help="run configuration file")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="vmsfem",
        description="Stabilized advection-diffusion solver with weakly "
                    "enforced Dirichlet conditions")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one case and emit CSV results")
    _add_config(p)
    p.add_argument("--dump-system", metavar="PREFIX",
                   help="write matrix/rhs in MatrixMarket coordinate format")

    p = sub.add_parser("project", help="project the case reference field "
                                       "onto the coarse space")
    _add_config(p)

    p = sub.add_parser("sweep", help="convergence sweep over mesh levels")
    _add_config(p)
    p.add_argument("--levels", type=int, default=3)
    p.add_argument("--resolutions", type=str, default=None,
                   help="comma-separated mesh resolutions (overrides --levels)")

    p = sub.add_parser("greens-table",
                       help="upwind/boundary profiles via Green's function "
                            "quadrature")
    _table_args(p)

    p = sub.add_parser("param-table",
                       help="closed-form upwind/boundary profiles")
    _table_args(p)
    return parser


def _table_args(p):
    p.add_argument("--pe-min", type=float, default=1e-4)
    p.add_argument("--pe-max", type=float, default=1e4)
    p.add_argument("--n", type=int, default=81)
    p.add_argument("--out", required=True)


def _pe_grid(args):
    return np.geomspace(args.pe_min, args.pe_max, args.n)


def _cmd_solve(args):
    config = bench.parse_config(args.config)
    if config.mesh_kind == "interval":
        outcome = bench.run_case_1d(config, variants=(config.variant,))
        path = bench.emit_case_1d(outcome, config.output_dir, config.prefix)
    else:
        outcome = bench.run_case_2d(config, variants=(config.variant,))
        path = bench.emit_case_2d(outcome, config.output_dir, config.prefix)
    if args.dump_system:
        space = outcome["space"]
        system = assembly.assemble_system(space, outcome["model"], config.variant,
                                          outcome["beta"],
                                          tagging=outcome["tagging"])
        assembly.dump_system(system, args.dump_system)
    print(f"wrote {path}")
    return 0


def _cmd_project(args):
    config = bench.parse_config(args.config)
    if config.mesh_kind == "interval":
        outcome = bench.run_case_1d(config, variants=())
    else:
        outcome = bench.run_case_2d(config, variants=())
    proj = outcome["projection"]
    os.makedirs(config.output_dir, exist_ok=True)
    out = os.path.join(config.output_dir, f"{config.prefix}_projection.csv")
    space = outcome["space"]
    header = ["dof"] + [f"x{d}" for d in range(space.mesh.dimension)] + ["value"]
    rows = [[float(i)] + list(space.dof_coords[i]) + [proj.coefficients[i]]
            for i in range(space.n_dofs)]
    bench.write_csv(out, header, rows)
    print(f"wrote {out}")
    return 0


def _cmd_sweep(args):
    config = bench.parse_config(args.config)
    if args.resolutions:
        resolutions = [int(s) for s in args.resolutions.split(",")]
    else:
        if config.mesh_kind == "interval":
            base = int(config.mesh_params.get("n_elements", 4))
            resolutions = [base * 2 ** k for k in range(args.levels)]
        else:
            base = int(config.mesh_params.get("resolution", 8))
            resolutions = [max(2, round(base * 2 ** (k / 2)))
                           for k in range(args.levels)]
    header, rows = bench.convergence_sweep(config, resolutions)
    os.makedirs(config.output_dir, exist_ok=True)
    out = os.path.join(config.output_dir, f"{config.prefix}_sweep.csv")
    bench.write_csv(out, header, rows)
    print(f"wrote {out}")
    return 0


def _cmd_table(args, quadrature_based):
    pe = _pe_grid(args)
    if quadrature_based:
        header, rows = bench.greens_table(pe)
    else:
        header, rows = bench.param_table(pe)
    bench.write_csv(args.out, header, rows)
    print(f"wrote {args.out}")
    return 0


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        if args.command == "solve":
            return _cmd_solve(args)
        if args.command == "project":
            return _cmd_project(args)
        if args.command == "sweep":
            return _cmd_sweep(args)
        if args.command == "greens-table":
            return _cmd_table(args, quadrature_based=True)
        if args.command == "param-table":
            return _cmd_table(args, quadrature_based=False)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, MeshError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SolverError as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
