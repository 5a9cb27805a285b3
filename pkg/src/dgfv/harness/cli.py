"""Command-line interface: run, convergence and equivalence subcommands.

Exit codes: 0 success, 2 solver abort, 3 configuration error.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from ..errors import ConfigError, DgfvError, SolverAbort
from ..scheme import BlendingConfig, SpatialScheme
from ..time_integration import TimeStepper, step
from .cases import case_catalog, get_case
from .driver import RunConfig, convergence_study, format_convergence_table, run
from .outputs import write_convergence_csv, write_outputs


def _add_common(p):
    p.add_argument("--case", required=True, choices=sorted(case_catalog()))
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--subdivision", default=None,
                   choices=["1d-uniform", "quad-tri", "voronoi-type",
                            "tri-uniform"])
    p.add_argument("--blend", default=None,
                   help="comma list of strategies, or 'none' for pure DG")
    p.add_argument("--flux-dg", default=None, dest="flux_dg",
                   choices=["rusanov", "global-lf", "hll", "hllc"])
    p.add_argument("--flux-fv", default=None, dest="flux_fv",
                   choices=["rusanov", "global-lf", "hll", "hllc"])
    p.add_argument("--cfl", type=float, default=0.5)
    p.add_argument("--t-end", type=float, default=None, dest="t_end")
    p.add_argument("--rk", type=int, default=None, choices=[1, 2, 3])
    p.add_argument("--mesh", default=None, dest="mesh_path")
    p.add_argument("--ncells", type=int, default=None)
    p.add_argument("--entropy", default="square",
                   choices=["square", "smoothed-kruzkov", "atan-mollified",
                            "euler-log"])
    p.add_argument("--ke", type=float, default=0.0)
    p.add_argument("--eps", type=float, default=0.25)
    p.add_argument("--smoother", default=None, choices=["none", "avg", "min"])
    p.add_argument("--lmp-variable", default="rho", dest="lmp_variable",
                   choices=["rho", "qx", "qy", "E"])
    p.add_argument("--config", default=None,
                   help="key=value file providing defaults for any flag")


def _config_from_args(args):
    values = vars(args).copy()
    if values.get("config"):
        for key, val in _read_config_file(values["config"]).items():
            if values.get(key) in (None, "global-lf") or key not in values:
                values[key] = val
    blend = values.get("blend")
    if isinstance(blend, str):
        blend = () if blend in ("none", "-", "") else tuple(blend.split(","))
    kwargs = dict(
        case=values["case"],
        k=int(values["k"]) if values.get("k") is not None else None,
        subdivision=values.get("subdivision"),
        ncells=int(values["ncells"]) if values.get("ncells") else None,
        mesh_path=values.get("mesh_path"),
        flux_dg=values.get("flux_dg") or "global-lf",
        flux_fv=values.get("flux_fv"),
        blend=blend,
        entropy=values.get("entropy", "square"),
        ke=float(values.get("ke", 0.0)),
        eps=float(values.get("eps", 0.25)),
        smoother=values.get("smoother"),
        lmp_variable=values.get("lmp_variable", "rho"),
        cfl=float(values.get("cfl", 0.5)),
        rk=int(values["rk"]) if values.get("rk") else None,
        t_end=float(values["t_end"]) if values.get("t_end") is not None else None,
    )
    if kwargs["k"] is None:
        kwargs["k"] = get_case(kwargs["case"]).defaults.get("k", 3)
    return RunConfig(**kwargs)


def _read_config_file(path):
    out = {}
    with open(path) as f:
        for i, line in enumerate(f, 1):
            line = line.split("#")[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{i}: expected key=value")
            key, val = line.split("=", 1)
            out[key.strip().replace("-", "_")] = val.strip()
    return out


def cmd_run(args):
    cfg = _config_from_args(args)
    art = run(cfg)
    sels = tuple(args.out_select.split(",")) if args.out_select else ()
    if args.out and sels:
        paths = write_outputs(art, args.out, sels)
        for p in paths:
            print(p)
    print(f"case={cfg.case} steps={art.steps} t={cfg.t_end} "
          f"theta_min={art.theta_min:.4g} "
          f"monitors={art.monitors}")
    return 0


def cmd_convergence(args):
    cfg = _config_from_args(args)
    base = args.ncells or get_case(cfg.case).defaults.get("ncells", 8)
    levels = [base * 2**i for i in range(args.levels)]
    rows = convergence_study(cfg, levels, variable=args.variable)
    print(format_convergence_table(rows))
    if args.out:
        import os
        os.makedirs(args.out, exist_ok=True)
        path = os.path.join(args.out, f"{cfg.case}_convergence.csv")
        write_convergence_csv(rows, cfg, path)
        print(path)
    return 0


def cmd_equivalence(args):
    """Check that the subdivision choice leaves the DG dynamics unchanged."""
    cfg = _config_from_args(args)
    case = get_case(cfg.case)
    law = case.make_law()
    mesh = case.build_mesh(cfg.ncells)
    if law.dim != 2:
        raise ConfigError("the equivalence check runs 2D cases")
    results = {}
    dt = None
    for subdivision in ("quad-tri", "voronoi-type", "tri-uniform"):
        scheme = SpatialScheme(mesh, law, cfg.k, subdivision,
                               flux_dg="global-lf",
                               blending=BlendingConfig(force_theta=1.0),
                               inflow_state=case.inflow_state(law))
        # moment-space initialization shared by every subdivision
        u = scheme.project(scheme.init_moments_l2(case.initial_state(law)))
        if dt is None:
            dt = scheme.compute_dt(u, 0.0, cfg.cfl)
        stepper = TimeStepper("ssprk3", cfl=cfg.cfl, fixed_dt=dt)
        for _ in range(args.steps):
            u, _ = step(u, stepper.time, dt, scheme, stepper)
        results[subdivision] = scheme.recover(u)
    names = list(results)
    scale = float(np.abs(results[names[0]]).max())
    worst = 0.0
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            diff = float(np.abs(results[names[i]] - results[names[j]]).max())
            worst = max(worst, diff / scale)
            print(f"{names[i]} vs {names[j]}: rel diff {diff / scale:.3e}")
    print(f"max pairwise relative moment difference: {worst:.3e}")
    return 0 if worst <= args.tol else 2


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="dgfv",
        description="Subcell monolithic DG/FV conservation-law solver")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one case")
    _add_common(p_run)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--out-select", default="profile,diagnostics",
                       help="comma list from profile,vtk,diagnostics")
    p_run.set_defaults(func=cmd_run)

    p_conv = sub.add_parser("convergence", help="mesh-refinement study")
    _add_common(p_conv)
    p_conv.add_argument("--levels", type=int, default=3)
    p_conv.add_argument("--variable", default="state",
                        choices=["state", "pressure"])
    p_conv.add_argument("--out", default=None)
    p_conv.set_defaults(func=cmd_convergence)

    p_eq = sub.add_parser("equivalence",
                          help="subdivision-independence check (pure DG)")
    _add_common(p_eq)
    p_eq.add_argument("--steps", type=int, default=20)
    p_eq.add_argument("--tol", type=float, default=1e-9)
    p_eq.set_defaults(func=cmd_equivalence)

    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 3
    except SolverAbort as exc:
        print(f"solver abort: {exc}", file=sys.stderr)
        return 2
    except DgfvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
