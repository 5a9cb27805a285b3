"""Run driver: configuration, execution, error norms, convergence studies."""

from __future__ import annotations

import io
from dataclasses import dataclass, field, fields

import numpy as np

from .. import blending as bl
from ..errors import ConfigError
from ..mesh import read_mesh
from ..riemann import FLUX_KINDS
from ..scheme import BlendingConfig, SpatialScheme
from ..time_integration import TimeStepper, advance, rk_order_for_degree
from .cases import get_case


@dataclass
class RunConfig:
    """Complete description of one run; serialized into every output."""

    case: str = "advect-sine"
    k: int = 3
    subdivision: str = None           # default: quad-tri (2D), 1d-uniform (1D)
    ncells: int = None
    mesh_path: str = None
    flux_dg: str = "global-lf"
    flux_fv: str = None
    blend: tuple = None               # None: case defaults; (): pure DG
    entropy: str = "square"
    ke: float = 0.0
    eps: float = 0.25
    smoother: str = None
    lmp_variable: str = "rho"
    smooth_relax: bool = True
    cfl: float = 0.5
    rk: int = None
    t_end: float = None
    force_theta: float = None
    monitor: bool = True

    def resolved(self):
        """Fill unset fields from the case defaults."""
        case = get_case(self.case)
        cfg = RunConfig(**{f.name: getattr(self, f.name) for f in fields(self)})
        d = case.defaults
        if cfg.t_end is None:
            cfg.t_end = case.t_end
        if cfg.blend is None:
            cfg.blend = tuple(d.get("blend", ()))
        if cfg.smoother is None:
            cfg.smoother = d.get("smoother", "none")
        if cfg.subdivision is None:
            cfg.subdivision = d.get("subdivision", None)
        if cfg.flux_dg == "global-lf" and "flux" in d:
            cfg.flux_dg = d["flux"]
        if cfg.flux_fv is None:
            cfg.flux_fv = d.get("flux_fv", cfg.flux_dg)
        if cfg.rk is None:
            cfg.rk = rk_order_for_degree(cfg.k)
        if cfg.flux_dg not in FLUX_KINDS or cfg.flux_fv not in FLUX_KINDS:
            raise ConfigError(f"unknown flux kind {cfg.flux_dg!r}/{cfg.flux_fv!r}")
        return cfg, case

    def serialize(self):
        parts = []
        for f in fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(v) if v else "-"
            parts.append(f"{f.name}={v}")
        return " ".join(parts)


class RunArtifacts:
    """Final state plus everything the output writers consume."""

    def __init__(self, config, scheme, case):
        self.config = config
        self.scheme = scheme
        self.case = case
        self.state = None
        self.theta_sub = None
        self.diagnostics = []            # per step dicts
        self.monitors = {"positivity": 0, "gmp": 0}
        self.theta_min = 1.0
        self.theta_mean_accum = []
        self.initial_totals = None
        self.dc_min = np.inf

    @property
    def t_end(self):
        return self.config.t_end

    def totals(self, ubar):
        return np.einsum("cm,cmk->k", self.scheme.topo.sub_areas, ubar)

    def theta_subcell(self):
        if self.theta_sub is None:
            raise ConfigError("run did not record blending coefficients")
        return self.theta_sub


def build_scheme(config):
    cfg, case = config.resolved()
    law = case.make_law()
    if cfg.mesh_path:
        mesh = read_mesh(cfg.mesh_path, dimension=law.dim)
    else:
        mesh = case.build_mesh(cfg.ncells)
    subdivision = cfg.subdivision or ("1d-uniform" if law.dim == 1 else "quad-tri")
    blending = BlendingConfig(
        strategies=tuple(cfg.blend),
        entropy_name=cfg.entropy,
        entropy_params=({"ke": cfg.ke, "eps": cfg.eps}
                        if cfg.entropy == "smoothed-kruzkov" else {}),
        lmp_variable=cfg.lmp_variable,
        smooth_relax=cfg.smooth_relax,
        smoother=cfg.smoother or "none",
        force_theta=cfg.force_theta,
    )
    scheme = SpatialScheme(
        mesh, law, cfg.k, subdivision,
        flux_dg=cfg.flux_dg, flux_fv=cfg.flux_fv,
        blending=blending, inflow_state=case.inflow_state(law),
    )
    return cfg, case, law, scheme


def run(config):
    """Execute one configured run and collect artifacts and diagnostics."""
    cfg, case, law, scheme = build_scheme(config)
    art = RunArtifacts(cfg, scheme, case)
    ubar = scheme.init_submeans(case.initial_state(law))
    ubar = case.post_init(scheme, ubar)
    if "gmp" in cfg.blend:
        scheme.set_gmp_range(float(ubar.min()), float(ubar.max()))
        art.gmp_range = (float(ubar.min()), float(ubar.max()))
    art.initial_totals = art.totals(ubar)

    def monitor(u, t):
        if not cfg.monitor:
            return
        if law.is_euler:
            if not np.all(law.admissible(u.reshape(-1, law.nvars))):
                art.monitors["positivity"] += 1
        elif "gmp" in cfg.blend:
            a, b = art.gmp_range
            if u.min() < a - 1e-12 or u.max() > b + 1e-12:
                art.monitors["gmp"] += 1

    def hook(u, t, dt, infos):
        tmin = min(i.theta_min for i in infos)
        tmean = float(np.mean([i.theta_mean for i in infos]))
        art.theta_min = min(art.theta_min, tmin)
        art.theta_mean_accum.append(tmean)
        art.dc_min = min(art.dc_min, min(i.dc_min for i in infos))
        tot = art.totals(u)
        art.diagnostics.append({
            "t": t, "dt": dt, "theta_min": tmin, "theta_mean": tmean,
            "poisoned": sum(i.poisoned_faces for i in infos),
            "positivity_fallbacks": sum(i.positivity_fallbacks for i in infos),
            "binding": _merge_counts(infos),
            "drift": tot - art.initial_totals,
        })

    stepper = TimeStepper({1: "euler", 2: "ssprk2", 3: "ssprk3"}[cfg.rk],
                          cfl=cfg.cfl)
    ubar = advance(ubar, scheme, stepper, cfg.t_end,
                   stage_monitor=monitor, step_hook=hook)
    art.state = ubar
    art.steps = stepper.step_count
    theta = getattr(scheme, "_last_theta", None)
    if theta is not None:
        art.theta_sub = bl.subcell_theta(theta, scheme.topo).reshape(
            scheme.mesh.ncells, scheme.ref.nsub)
    return art


def _merge_counts(infos):
    out = {}
    for i in infos:
        for k, v in i.binding_counts.items():
            out[k] = out.get(k, 0) + v
    return out


# ---------------------------------------------------------------------------
# error norms and convergence studies
# ---------------------------------------------------------------------------


def exact_submeans(scheme, exact_fn, extra_degree=6):
    """Reference submeans by oversampled quadrature of a pointwise field."""
    pts, w = scheme.subcell_quadrature(extra_degree)
    x = scheme.topo.map_points(pts.reshape(-1, scheme.mesh.dim)).reshape(
        scheme.mesh.ncells, scheme.ref.nsub, -1, scheme.mesh.dim)
    vals = np.asarray(exact_fn(x))
    wn = w / scheme.ref.areas[:, None]
    return np.einsum("mq,cmqk->cmk", wn, vals)


def error_norms(scheme, ubar, exact_fn, component=0):
    """Area-weighted L1/L2 submean errors against a pointwise reference."""
    ref = exact_submeans(scheme, exact_fn)
    diff = np.abs(ubar[..., component] - ref[..., component])
    areas = scheme.topo.sub_areas
    e1 = float(np.sum(areas * diff))
    e2 = float(np.sqrt(np.sum(areas * diff**2)))
    return e1, e2


def pressure_error_norms(scheme, ubar, exact_fn):
    """Error norms on the pressure field of an Euler state."""
    law = scheme.law
    ref = exact_submeans(scheme, exact_fn)
    p_num = law.pressure(ubar)
    p_ref = law.pressure(ref)
    diff = np.abs(p_num - p_ref)
    areas = scheme.topo.sub_areas
    return float(np.sum(areas * diff)), float(np.sqrt(np.sum(areas * diff**2)))


def convergence_study(config, ncells_list, norm="l2", variable="state",
                      cfl_scaling=True):
    """Run a mesh sequence, returning error/rate/theta rows per level.

    With `cfl_scaling` the CFL factor shrinks with resolution so the RK3
    temporal error tracks the spatial order (dt ~ h^((k+1)/3)).
    """
    if len(ncells_list) < 2:
        raise ConfigError("need at least two mesh levels")
    rows = []
    base = None
    for i, n in enumerate(ncells_list):
        cfg = RunConfig(**{f.name: getattr(config, f.name)
                           for f in fields(RunConfig)})
        cfg.ncells = n
        if cfl_scaling:
            expo = max(0.0, (cfg.k + 1) / 3.0 - 1.0)
            if base is None:
                base = cfg.cfl
            cfg.cfl = base * (ncells_list[0] / n) ** expo
        art = run(cfg)
        case, law = art.case, art.scheme.law
        exact = case.exact_solution(law, art.t_end)
        if exact is None:
            raise ConfigError(f"case {case.name!r} has no exact solution")
        if variable == "pressure":
            e1, e2 = pressure_error_norms(art.scheme, art.state, exact)
        else:
            e1, e2 = error_norms(art.scheme, art.state, exact)
        rows.append({
            "ncells": n, "h": 1.0 / n, "e_l1": e1, "e_l2": e2,
            "theta_min": art.theta_min,
            "theta_mean": float(np.mean(art.theta_mean_accum))
            if art.theta_mean_accum else 1.0,
        })
    for i in range(len(rows) - 1):
        r = np.log(rows[i + 1]["ncells"] / rows[i]["ncells"])
        rows[i]["q_l1"] = float(np.log(rows[i]["e_l1"] / rows[i + 1]["e_l1"]) / r)
        rows[i]["q_l2"] = float(np.log(rows[i]["e_l2"] / rows[i + 1]["e_l2"]) / r)
    rows[-1]["q_l1"] = rows[-1]["q_l2"] = float("nan")
    return rows


def format_convergence_table(rows):
    buf = io.StringIO()
    buf.write(f"{'h':>10} {'E_L1':>12} {'q_L1':>6} {'E_L2':>12} {'q_L2':>6} "
              f"{'min_theta':>10} {'mean_theta':>10}\n")
    for r in rows:
        buf.write(f"{r['h']:>10.5f} {r['e_l1']:>12.4e} {r['q_l1']:>6.2f} "
                  f"{r['e_l2']:>12.4e} {r['q_l2']:>6.2f} "
                  f"{r['theta_min']:>10.3e} {r['theta_mean']:>10.4f}\n")
    return buf.getvalue()
