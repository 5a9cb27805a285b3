"""Strong-stability-preserving Runge-Kutta drivers.

Every stage is a convex combination of forward-Euler substeps, so any
property guaranteed per stage (bounds, positivity) transfers to the full
step.  The blow-up guard aborts on the first non-finite submean.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, SolverAbort

DEFAULT_CFL = {1: 0.5, 2: 0.5, 3: 0.5}


@dataclass
class TimeStepper:
    method: str = "ssprk3"            # euler | ssprk2 | ssprk3
    cfl: float = 0.5
    time: float = 0.0
    step_count: int = 0
    fixed_dt: float = None
    stage_infos: list = field(default_factory=list)

    def __post_init__(self):
        if self.method not in ("euler", "ssprk2", "ssprk3"):
            raise ConfigError(f"unknown time integration method {self.method!r}")
        if not 0.0 < self.cfl <= 1.0:
            raise ConfigError("cfl safety factor must be in (0, 1]")

    @property
    def order(self):
        return {"euler": 1, "ssprk2": 2, "ssprk3": 3}[self.method]


def rk_order_for_degree(k):
    return min(k + 1, 3)


def compute_dt(scheme, ubar, t, cfl, t_end=None, fixed_dt=None):
    """Stable step from the subcell CFL bound, clipped to land on t_end."""
    dt = fixed_dt if fixed_dt is not None else scheme.compute_dt(ubar, t, cfl)
    if t_end is not None and t + dt > t_end:
        dt = t_end - t
    return dt


def _guard(ubar, t, label):
    if not np.all(np.isfinite(ubar)):
        bad = np.argwhere(~np.isfinite(ubar))[0]
        raise SolverAbort(
            f"non-finite submean after {label} at t={t:.6g} "
            f"(cell {bad[0]}, subcell {bad[1]}, component {bad[2]})",
            dump={"t": t, "state": ubar},
        )


def step(ubar, t, dt, scheme, stepper, stage_monitor=None, first_stage=None):
    """Advance one SSP step; returns the new state and stage infos.

    ``first_stage`` optionally injects an already-evaluated rhs of the
    step-begin state (the driver computes it to size the time step).
    """
    infos = []
    cached = [first_stage]

    def stage(u, tau):
        if cached[0] is not None:
            du, info = cached[0]
            cached[0] = None
        else:
            du, info = scheme.rhs(u, tau)
        infos.append(info)
        out = u + dt * du
        if stage_monitor is not None:
            stage_monitor(out, tau)
        return out

    if stepper.method == "euler":
        unew = stage(ubar, t)
    elif stepper.method == "ssprk2":
        u1 = stage(ubar, t)
        unew = 0.5 * ubar + 0.5 * stage(u1, t + dt)
    else:
        u1 = stage(ubar, t)
        u2 = 0.75 * ubar + 0.25 * stage(u1, t + dt)
        unew = ubar / 3.0 + 2.0 / 3.0 * stage(u2, t + 0.5 * dt)
    _guard(unew, t + dt, f"step {stepper.step_count}")
    stepper.time = t + dt
    stepper.step_count += 1
    return unew, infos


def advance(ubar, scheme, stepper, t_end, stage_monitor=None, step_hook=None,
            max_steps=10_000_000):
    """March to t_end; `step_hook(state, t, dt, infos)` runs after each step.

    The first stage of every step is evaluated once and reused both for
    the CFL bound and as the first SSP substep.
    """
    t = stepper.time
    while t < t_end - 1e-14 * max(1.0, abs(t_end)):
        first = None
        if stepper.fixed_dt is not None:
            dt = min(stepper.fixed_dt, t_end - t)
        else:
            du0, info0 = scheme.rhs(ubar, t)
            if info0.cfl_bound is None or not np.isfinite(info0.cfl_bound):
                raise SolverAbort(f"non-finite wave speed at t={t:.6g}")
            dt = min(stepper.cfl * info0.cfl_bound, t_end - t)
            first = (du0, info0)
        if dt <= 0:
            raise SolverAbort(f"non-positive time step at t={t:.6g}")
        ubar, infos = step(ubar, t, dt, scheme, stepper, stage_monitor,
                           first_stage=first)
        t = stepper.time
        if step_hook is not None:
            step_hook(ubar, t, dt, infos)
        if stepper.step_count >= max_steps:
            raise SolverAbort(f"step budget exhausted at t={t:.6g}")
    return ubar
