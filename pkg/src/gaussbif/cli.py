"""Command-line front end.

Exit codes: 0 success, 1 usage error, 2 input validation error,
3 solver failure, 4 diagnostic precondition not met.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_SOLVER, EXIT_DIAGNOSTIC = 0, 1, 2, 3, 4

_THREAD_VARS = ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # prefix matching would make --t ambiguous with --threads
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def build_config(args):
    """SolveConfig from defaults, then the config file, then CLI flags."""
    from .solver import SolveConfig

    fields = {f.name: f.type for f in dataclasses.fields(SolveConfig)}
    values = {}
    if args.config:
        for key, raw in read_config_file(args.config).items():
            if key not in fields:
                raise UsageError(f"unknown config key '{key}'")
            try:
                values[key] = int(raw) if fields[key] in ("int", int) else float(raw)
            except ValueError:
                raise UsageError(f"config key '{key}': cannot parse '{raw}'") from None
    for key in fields:
        flag = getattr(args, key, None)
        if flag is not None:
            values[key] = flag
    try:
        return SolveConfig(**values)
    except ValueError as exc:
        raise UsageError(f"invalid configuration: {exc}") from None


def _add_global(p, suppress):
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--mesh", default=d, help="mesh file (HYPMESH 1)")
    p.add_argument("--weight", default=d, help="weight file (WEIGHT 1)")
    p.add_argument("--out", default=argparse.SUPPRESS if suppress else ".",
                   help="output directory (default: current directory)")
    p.add_argument("--config", default=d, help="file of 'key = value' solver settings")
    p.add_argument("--seed", type=int, default=argparse.SUPPRESS if suppress else 0,
                   help="seed for randomized choices (default 0)")
    p.add_argument("--threads", type=int, default=d, help="threads for linear algebra kernels")
    p.add_argument("--newton-tol", dest="newton_tol", type=float, default=d)
    p.add_argument("--max-newton-iters", dest="max_newton_iters", type=int, default=d)
    p.add_argument("--arclength-step", dest="arclength_step", type=float, default=d)
    p.add_argument("--eig-tol", dest="eig_tol", type=float, default=d)
    p.add_argument("--v-cap", dest="v_cap", type=float, default=d)
    p.add_argument("--t-floor-ratio", dest="t_floor_ratio", type=float, default=d)


def make_parser():
    parser = _Parser(prog="gaussbif", description="Gauss equation bifurcation and blow-up numerics")
    _add_global(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    common = _Parser(add_help=False)
    _add_global(common, suppress=True)

    p = sub.add_parser("gen-mesh", parents=[common], help="generate a regular 4g-gon surface mesh")
    p.add_argument("--level", type=int, required=True)
    p.add_argument("--genus", type=int, default=2)
    p.add_argument("-o", "--output")

    p = sub.add_parser("make-weight", parents=[common], help="build a weight K on a mesh")
    p.add_argument("--zeros", default="", help="comma list of vertex:multiplicity")
    p.add_argument("--random-zeros", type=int, default=0,
                   help="number of simple zeros at seeded random vertices")
    p.add_argument("--tstar", type=float, default=1.0)
    p.add_argument("--qd", dest="qd", action="store_true", default=None,
                   help="require zero count 4(g-1)")
    p.add_argument("--no-qd", dest="qd", action="store_false")
    p.add_argument("-o", "--output")

    p = sub.add_parser("solve", parents=[common], help="Newton solve at fixed t")
    p.add_argument("--t", type=float, required=True)
    p.add_argument("--init", help="initial field file")
    p.add_argument("--mountain-pass", action="store_true",
                   help="also compute the unstable solution at this t")
    p.add_argument("-o", "--output")

    p = sub.add_parser("continue", parents=[common], help="trace the branch through the fold")
    p.add_argument("--no-unstable", action="store_true", help="stop at the fold")
    p.add_argument("-o", "--output")

    p = sub.add_parser("mf-sweep", parents=[common], help="mean-field sweep in rho")
    p.add_argument("--points", type=int, default=30)
    p.add_argument("--rho-min", type=float)
    p.add_argument("--rho-max", type=float)
    p.add_argument("-o", "--output")

    p = sub.add_parser("prescribe", parents=[common], help="solve for a prescribed total extrinsic curvature")
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("-o", "--output")

    p = sub.add_parser("green", parents=[common], help="Green's function with a vertex pole")
    p.add_argument("--pole", type=int, required=True)
    p.add_argument("-o", "--output")

    p = sub.add_parser("diagnose", parents=[common], help="blow-up report for the unstable family")
    p.add_argument("--t-min-ratio", type=float, default=1e-3)
    p.add_argument("-o", "--output")

    p = sub.add_parser("mt-check", parents=[common], help="Moser-Trudinger functional checks")
    p.add_argument("--field", help="field file whose zero-mean part is evaluated")
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("-o", "--output")
    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _out_path(args, default_name):
    if getattr(args, "output", None):
        path = Path(args.output)
    else:
        path = Path(args.out) / default_name
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def _need(args, *names):
    for n in names:
        if not getattr(args, n, None):
            raise UsageError(f"--{n} is required for '{args.command}'")


def _load_mesh(args):
    from .mesh import load_mesh
    _need(args, "mesh")
    return load_mesh(args.mesh)


def _load_inputs(args):
    from .weight import load_weight
    mesh = _load_mesh(args)
    _need(args, "weight")
    return mesh, load_weight(args.weight, mesh)


def _fmt(x):
    return repr(float(x))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_gen_mesh(args, out):
    from .mesh import generate_polygon_surface, load_mesh, write_mesh
    if args.level < 0:
        raise UsageError("--level must be >= 0")
    if args.genus < 2:
        raise UsageError("--genus must be >= 2")
    mesh = generate_polygon_surface(args.genus, args.level)
    path = _out_path(args, f"genus{args.genus}_level{args.level}.mesh")
    write_mesh(mesh, path)
    load_mesh(path)
    print(f"wrote {path}: genus={mesh.genus} vertices={mesh.n_vertices} "
          f"triangles={mesh.n_triangles} area={_fmt(mesh.total_area)}", file=out)
    return EXIT_OK


def _parse_zeros(text):
    zeros = []
    for item in filter(None, (s.strip() for s in text.split(","))):
        try:
            v, n = item.split(":")
            zeros.append((int(v), int(n)))
        except ValueError:
            raise UsageError(f"bad zero entry '{item}', expected vertex:multiplicity") from None
    return zeros


def cmd_make_weight(args, out):
    import numpy as np
    from .weight import compute_tstar, make_weight, write_weight
    mesh = _load_mesh(args)
    zeros = _parse_zeros(args.zeros)
    if args.random_zeros:
        if zeros:
            raise UsageError("use either --zeros or --random-zeros")
        rng = np.random.default_rng(args.seed)
        picks = rng.choice(mesh.n_vertices, args.random_zeros, replace=False)
        zeros = [(int(v), 1) for v in picks]
    if not args.tstar > 0:
        raise UsageError("--tstar must be positive")
    K = make_weight(mesh, zeros, args.tstar, args.qd)
    path = _out_path(args, "weight.txt")
    write_weight(K, path)
    print(f"wrote {path}: zeros={len(K.zeros)} tstar={_fmt(compute_tstar(K))}", file=out)
    return EXIT_OK


def cmd_solve(args, out):
    from .solver import mountain_pass, newton_solve, read_field, write_field
    mesh, K = _load_inputs(args)
    cfg = build_config(args)
    v0 = None
    if args.init:
        v0, _ = read_field(args.init)
        if len(v0) != mesh.n_vertices:
            raise ValueError("initial field length does not match the mesh")
    pt = newton_solve(args.t, K, v0, cfg)
    path = _out_path(args, "solution.field")
    write_field(path, pt.v, t=pt.t, rho=pt.rho, lambda_min=pt.lambda_min, energy=pt.energy)
    print(f"t={_fmt(pt.t)} rho={_fmt(pt.rho)} c={_fmt(pt.c)} lambda_min={_fmt(pt.lambda_min)} "
          f"energy={_fmt(pt.energy)} gb_residual={pt.gb_residual:.3e}", file=out)
    if args.mountain_pass:
        up = mountain_pass(args.t, K, pt, cfg)
        upath = path.with_name(path.stem + "_unstable" + path.suffix)
        write_field(upath, up.v, t=up.t, rho=up.rho, lambda_min=up.lambda_min, energy=up.energy)
        print(f"unstable: rho={_fmt(up.rho)} c={_fmt(up.c)} lambda_min={_fmt(up.lambda_min)} "
              f"energy={_fmt(up.energy)}", file=out)
    return EXIT_OK


def cmd_continue(args, out):
    from .solver import continue_branch, write_field
    from .weight import compute_tstar
    mesh, K = _load_inputs(args)
    cfg = build_config(args)
    curve = continue_branch(K, cfg, unstable=not args.no_unstable)
    path = _out_path(args, "branch.csv")
    curve.to_csv(path)
    tstar = compute_tstar(K)
    if curve.fold is None:
        print(f"no fold found; tstar={_fmt(tstar)}", file=out)
        return EXIT_SOLVER
    tau0, fpt = curve.fold
    write_field(path.with_name("fold.field"), fpt.v, t=tau0, rho=fpt.rho, lambda_min=fpt.lambda_min)
    print(f"tau0={_fmt(tau0)} tstar={_fmt(tstar)} points={len(curve.points)} "
          f"sign_changes={curve.lambda_sign_changes()}", file=out)
    return EXIT_OK


def cmd_mf_sweep(args, out):
    import numpy as np
    from .mean_field import sweep_rho, write_sweep_csv
    mesh, K = _load_inputs(args)
    cfg = build_config(args)
    upper = min(4.0 * math.pi * (mesh.genus - 1), mesh.total_area)
    if args.points < 1:
        raise UsageError("--points must be >= 1")
    lo = args.rho_min if args.rho_min is not None else upper / (args.points + 1)
    hi = args.rho_max if args.rho_max is not None else upper * args.points / (args.points + 1)
    grid = np.linspace(lo, hi, args.points)
    sols = sweep_rho(K, grid, cfg)
    path = _out_path(args, "sweep.csv")
    write_sweep_csv(sols, path)
    ok = [s for s in sols if s.converged]
    best = max(ok, key=lambda s: s.t_rho) if ok else None
    line = f"points={len(sols)} converged={len(ok)}"
    if best is not None:
        line += f" max_t_rho={_fmt(best.t_rho)} at_rho={_fmt(best.rho)}"
    print(line, file=out)
    return EXIT_OK if len(ok) == len(sols) else EXIT_SOLVER


def cmd_prescribe(args, out):
    import numpy as np
    from .mean_field import prescribe_extrinsic_curvature
    from .solver import write_field
    mesh, K = _load_inputs(args)
    cfg = build_config(args)
    sol = prescribe_extrinsic_curvature(args.rho, K, cfg)
    path = _out_path(args, "prescribed.field")
    write_field(path, sol.v, rho=sol.rho, t_rho=sol.t_rho, c_rho=sol.c_rho)
    check = sol.t_rho ** 2 * mesh.integrate(K.values * np.exp(sol.v))
    print(f"t_rho={_fmt(sol.t_rho)} c_rho={_fmt(sol.c_rho)} rho_check={_fmt(check)} "
          f"residual_direct={sol.residual_direct:.3e}", file=out)
    return EXIT_OK


def cmd_green(args, out):
    from .asymptotics import greens_function
    from .solver import write_field
    mesh = _load_mesh(args)
    if not 0 <= args.pole < mesh.n_vertices:
        raise UsageError(f"--pole must lie in [0, {mesh.n_vertices})")
    g = greens_function(mesh, args.pole)
    path = _out_path(args, f"green_{args.pole}.field")
    write_field(path, g.field, pole=g.pole, gamma=g.regular_part_at_pole)
    print(f"pole={g.pole} gamma={_fmt(g.regular_part_at_pole)} mean={mesh.mean(g.field):.3e} "
          f"fit_residual={g.fit_residual:.3e}", file=out)
    return EXIT_OK


def cmd_diagnose(args, out):
    from .asymptotics import DIAGONAL_CAP, blowup_family, detect_blowup, regular_part_diagonal
    from .solver import continue_branch
    mesh, K = _load_inputs(args)
    cfg = build_config(args)
    # continue no further than the family needs
    cfg = dataclasses.replace(cfg, t_floor_ratio=max(cfg.t_floor_ratio, args.t_min_ratio))
    curve = continue_branch(K, cfg)
    family = blowup_family(curve, args.t_min_ratio)
    gamma = regular_part_diagonal(mesh) if mesh.n_vertices <= DIAGONAL_CAP else None
    report = detect_blowup(family, K, cfg, gamma_diag=gamma, family_id=Path(args.weight).name)
    path = _out_path(args, "blowup.json")
    report.to_json(path)
    print(f"m={report.estimated_m} rho_last={_fmt(family[-1].rho)} "
          f"concentration={report.concentration_vertices} far_field_constant={_fmt(report.far_field_constant)}",
          file=out)
    return EXIT_OK


def cmd_mt_check(args, out):
    from .asymptotics import DIAGONAL_CAP, mt_check, regular_part_diagonal
    from .solver import read_field
    mesh, K = _load_inputs(args)
    w = None
    if args.field:
        w, _ = read_field(args.field)
        if len(w) != mesh.n_vertices:
            raise ValueError("field length does not match the mesh")
    gamma = regular_part_diagonal(mesh) if mesh.n_vertices <= DIAGONAL_CAP else None
    rep = mt_check(K, w, gamma, samples=args.samples, seed=args.seed)
    path = _out_path(args, "mt.json")
    data = {"schema": "MT 1", "J_value": rep.J_value, "rhs_bound": rep.rhs_bound,
            "rhs_bound_area": rep.rhs_bound_area, "lower_bound": rep.lower_bound,
            "attained_candidate": rep.attained_candidate, "samples": rep.samples}
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    print(f"J={_fmt(rep.J_value)} lower_bound={_fmt(rep.lower_bound)} rhs_bound={_fmt(rep.rhs_bound)}",
          file=out)
    return EXIT_OK


COMMANDS = {
    "gen-mesh": cmd_gen_mesh,
    "make-weight": cmd_make_weight,
    "solve": cmd_solve,
    "continue": cmd_continue,
    "mf-sweep": cmd_mf_sweep,
    "prescribe": cmd_prescribe,
    "green": cmd_green,
    "diagnose": cmd_diagnose,
    "mt-check": cmd_mt_check,
}


def main(argv=None, out=None):
    out = out or sys.stdout
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_usage().strip())
        if getattr(args, "threads", None):
            if args.threads < 1:
                raise UsageError("--threads must be >= 1")
            for var in _THREAD_VARS:
                os.environ[var] = str(args.threads)
        return _dispatch(args, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE


def _dispatch(args, out):
    from .asymptotics import DiagnosticError
    from .mean_field import PrescribeError
    from .mesh import MeshError
    from .solver import SolverError
    from .weight import WeightError
    try:
        if args.config:
            build_config(args)  # reject a bad config file whatever the command
        return COMMANDS[args.command](args, out)
    except (DiagnosticError, PrescribeError) as exc:
        code = EXIT_DIAGNOSTIC if isinstance(exc, DiagnosticError) else EXIT_VALIDATION
        print(f"error: {exc}", file=sys.stderr)
        return code
    except (MeshError, WeightError, ValueError, OSError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SolverError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
