"""``perfhom`` command line: cell, limit, solve-eps, sweep, check."""
from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy.linalg

from .acceptance import run_all
from .cell import CellError, build_model
from .config import FORMATS, ConfigError, RunConfig, parse_config, print_config, problems
from .finescale import solve_eps_spectrum
from .geometry import GeometryError, build_cell_mesh, build_domain_mesh, write_mesh_text
from .harness import PlanError, emit_report, run_sweep
from .limits import LimitError, limit_negative, limit_pencil, limit_positive
from .materials import (CoefficientField, DensityField, MaterialError, preset_coefficients,
                        preset_density)
from .pencilsolve import PencilError

EXIT_OK, EXIT_VALIDATION, EXIT_SOLVER, EXIT_ACCEPTANCE = 0, 2, 3, 4


def _load_config(args) -> RunConfig:
    text = Path(args.config).read_text(encoding="utf-8") if args.config else ""
    cfg = parse_config(text)
    overrides = {}
    if args.output:
        overrides["output_dir"] = args.output
    if args.formats:
        overrides["formats"] = tuple(f.strip() for f in args.formats.split(",") if f.strip())
    if args.budget is not None:
        overrides["budget"] = args.budget
    if overrides:
        cfg = replace(cfg, **overrides)
        errs = problems(cfg)
        if errs:
            raise ConfigError(errs)
    return cfg


def _model(cfg: RunConfig):
    cell = build_cell_mesh(cfg.geometry())
    return build_model(cell, preset_coefficients(cfg.coeff, cell), preset_density(cfg.density_case, cell))


def _outdir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_cell(cfg: RunConfig) -> int:
    model = _model(cfg)
    path = _outdir(cfg) / "model.json"
    path.write_text(model.to_json())
    print(f"{model.regime}: q = {model.q.tolist()}  -> {path}")
    return EXIT_OK


def cmd_limit(cfg: RunConfig) -> int:
    model = _model(cfg)
    sols = {}
    if model.regime == "M_zero":
        sols["pencil"] = limit_pencil(model.q, model.nu2, cfg.count, cfg.limit_grid)
    else:
        M = abs(model.M)
        sols["positive_side"] = limit_positive(model.q, M, cfg.count, cfg.limit_grid)
        sols["negative_side"] = limit_negative(model.q_tilde, model.M_tilde, cfg.count, cfg.limit_grid)
    doc = {k: v.to_dict() for k, v in sols.items()}
    if model.regime == "M_neg":
        doc["note"] = "M < 0: solved for -rho; swap sides and negate eigenvalues for rho"
    path = _outdir(cfg) / "limit.json"
    path.write_text(json.dumps(doc, indent=1, sort_keys=True))
    for k, v in sols.items():
        print(f"{k}: {v.eigenvalues.tolist()}")
    return EXIT_OK


def cmd_solve_eps(cfg: RunConfig) -> int:
    mesh = build_domain_mesh(cfg.solve_n, cfg.s, cfg.geometry(cfg.s), cfg.budget)
    cell = mesh.cell_mesh()
    a = preset_coefficients(cfg.coeff, cell)
    d = preset_density(cfg.density_case, cell)
    coeff = CoefficientField(mesh.lift(a.values), a.alpha, a.name)
    dens = DensityField.from_values(mesh.lift(d.values), mesh.areas, d.name)
    norm = "eps" if cfg.regime == "M_zero" else "unit"
    sol = solve_eps_spectrum(mesh, coeff, dens, cfg.count, cfg.count, norm)
    out = _outdir(cfg)
    doc = {"n": cfg.solve_n, "eps": mesh.eps, "normalization": norm,
           "lambda_pos": sol.eigvals("+").tolist(), "lambda_neg": sol.eigvals("-").tolist(),
           "gram_pos": sol.gram("+").tolist(), "gram_neg": sol.gram("-").tolist()}
    (out / f"eps_n{cfg.solve_n}.json").write_text(json.dumps(doc, indent=1, sort_keys=True))
    fields = {f"u{side}{k + 1}": sol.vertex_values(side, k) for side in ("+", "-") for k in range(cfg.count)}
    write_mesh_text(out / f"eps_n{cfg.solve_n}_mesh.txt", mesh, {"dirichlet": mesh.dirichlet_boundary}, fields)
    print(f"n={cfg.solve_n}: lambda+ {doc['lambda_pos']}  lambda- {doc['lambda_neg']}")
    return EXIT_OK


def cmd_sweep(cfg: RunConfig) -> int:
    report = run_sweep(cfg.plan())
    for p in emit_report(report, _outdir(cfg), cfg.formats):
        print(p)
    return EXIT_OK


def cmd_check(cfg: RunConfig) -> int:
    results = run_all()
    failed = [r.number for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} criteria passed" +
          (f"; failing: {failed}" if failed else ""))
    return EXIT_ACCEPTANCE if failed else EXIT_OK


COMMANDS = {"cell": cmd_cell, "limit": cmd_limit, "solve-eps": cmd_solve_eps,
            "sweep": cmd_sweep, "check": cmd_check}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perfhom", description=__doc__)
    p.add_argument("--print-defaults", action="store_true", help="print the default config and exit")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", help="key=value config file")
    common.add_argument("-o", "--output", help="output directory (overrides output.dir)")
    common.add_argument("--formats", help=f"comma list from {','.join(FORMATS)}")
    common.add_argument("--budget", type=int, help="vertex budget per fine mesh")
    sub = p.add_subparsers(dest="command")
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.print_defaults:
        sys.stdout.write(print_config(RunConfig()))
        return EXIT_OK
    if not args.command:
        parser.print_usage(sys.stderr)
        return EXIT_VALIDATION
    try:
        cfg = _load_config(args)
    except ConfigError as exc:
        for line in exc.problems:
            print(f"config error: {line}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    try:
        return COMMANDS[args.command](cfg)
    except (PlanError, GeometryError, MaterialError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (PencilError, CellError, LimitError, np.linalg.LinAlgError, scipy.linalg.LinAlgError,
            RuntimeError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
