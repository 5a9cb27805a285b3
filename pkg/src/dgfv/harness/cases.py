"""Test-case registry: initial data, boundary data, meshes and defaults.

Each case builds its conservation law, a mesh for a requested resolution,
a pointwise initial state, and carries default configuration deltas (end
time, blending strategies, flux kinds).  Reference solutions are attached
where available.
"""

from __future__ import annotations

import numpy as np

from .. import mesh as meshmod
from ..errors import ConfigError
from ..physics import make_law
from .exact import EulerRiemannExact, IsentropicExact, scalar_riemann_fan


class CaseDefinition:
    def __init__(self, name, law_name, law_params=None, t_end=1.0,
                 defaults=None):
        self.name = name
        self.law_name = law_name
        self.law_params = law_params or {}
        self.t_end = t_end
        self.defaults = defaults or {}

    def make_law(self):
        return make_law(self.law_name, **self.law_params)

    def build_mesh(self, ncells=None, path=None):
        raise NotImplementedError

    def initial_state(self, law):
        """Pointwise initial condition, (..., dim) -> (..., nvars)."""
        raise NotImplementedError

    def inflow_state(self, law):
        return None

    def exact_solution(self, law, t):
        """Pointwise exact state at time t, or None."""
        return None

    def post_init(self, scheme, ubar):
        """Hook mutating the initial submeans (point sources)."""
        return ubar


# ---------------------------------------------------------------------------
# scalar cases
# ---------------------------------------------------------------------------


class AdvectSine(CaseDefinition):
    def __init__(self):
        super().__init__("advect-sine", "advection-1d", t_end=1.0,
                         defaults={"k": 5, "blend": ("entropy-cell",)})

    def build_mesh(self, ncells=None, path=None):
        return meshmod.interval_mesh(0.0, 1.0, ncells or 8, periodic=True)

    def initial_state(self, law):
        return lambda x: np.sin(2 * np.pi * x[..., 0])[..., None]

    def exact_solution(self, law, t):
        return lambda x: np.sin(2 * np.pi * (x[..., 0] - law.speed * t))[..., None]


def composite_signal(x):
    """Gaussian / square / triangle / smoothed-ellipse succession."""
    x = np.asarray(x)
    delta, z, alpha, a = 0.005, -0.7, 10.0, 0.5
    beta = np.log(2.0) / (36.0 * delta**2)

    def g(y, c):
        return np.exp(-beta * (y - c) ** 2)

    def f(y, c):
        return np.sqrt(np.maximum(1.0 - alpha**2 * (y - c) ** 2, 0.0))

    u = np.zeros_like(x)
    m = (x >= -0.8) & (x <= -0.6)
    u = np.where(m, (g(x, z - delta) + g(x, z + delta) + 4 * g(x, z)) / 6, u)
    m = (x >= -0.4) & (x <= -0.2)
    u = np.where(m, 1.0, u)
    m = (x >= 0.0) & (x <= 0.2)
    u = np.where(m, 1.0 - np.abs(10.0 * (x - 0.1)), u)
    m = (x >= 0.4) & (x <= 0.6)
    u = np.where(m, (f(x, a - delta) + f(x, a + delta) + 4 * f(x, a)) / 6, u)
    return u


class AdvectComposite(CaseDefinition):
    def __init__(self):
        super().__init__("advect-composite", "advection-1d", t_end=2.0,
                         defaults={"k": 6, "blend": ("gmp", "lmp")})

    def build_mesh(self, ncells=None, path=None):
        return meshmod.interval_mesh(-1.0, 1.0, ncells or 40, periodic=True)

    def initial_state(self, law):
        return lambda x: composite_signal(x[..., 0])[..., None]

    def exact_solution(self, law, t):
        def fn(x):
            y = np.mod(x[..., 0] - law.speed * t + 1.0, 2.0) - 1.0
            return composite_signal(y)[..., None]
        return fn


class Rotation(CaseDefinition):
    """Solid body rotation of a disk, a cone and a smooth hump."""

    def __init__(self):
        super().__init__("rotation", "rotation-2d", t_end=2 * np.pi,
                         defaults={"k": 3, "blend": ()})

    def build_mesh(self, ncells=None, path=None):
        n = ncells or 578
        nx = max(2, int(round(np.sqrt(n / 2.0))))
        return meshmod.rectangle_mesh(0, 1, 0, 1, nx, nx, bc="outflow")

    def initial_state(self, law):
        def fn(x):
            xx, yy = x[..., 0], x[..., 1]
            r0 = 0.15
            hump = np.hypot(xx - 0.25, yy - 0.5)
            cone = np.hypot(xx - 0.5, yy - 0.25)
            disk = np.hypot(xx - 0.5, yy - 0.75)
            u = np.where(hump < r0, 0.25 * (1 + np.cos(np.pi * hump / r0)), 0.0)
            u = np.where(cone < r0, 1.0 - cone / r0, u)
            u = np.where(disk < r0, 1.0, u)
            return u[..., None]
        return fn


class Burgers2D(CaseDefinition):
    def __init__(self):
        super().__init__("burgers-2d", "burgers-2d", t_end=0.5,
                         defaults={"k": 5, "blend": ("gmp", "lmp"),
                                   "smoother": "avg"})

    def build_mesh(self, ncells=None, path=None):
        n = ncells or 242
        nx = max(2, int(round(np.sqrt(n / 2.0))))
        return meshmod.rectangle_mesh(0, 1, 0, 1, nx, nx, periodic=True)

    def initial_state(self, law):
        return lambda x: np.sin(2 * np.pi * (x[..., 0] + x[..., 1]))[..., None]


class Buckley1(CaseDefinition):
    """Riemann data (-3, 3): two shocks bracketing a flat rarefaction."""

    def __init__(self):
        super().__init__("buckley-1", "buckley-1d", t_end=1.0,
                         defaults={"k": 3, "blend": ("gmp", "lmp"),
                                   "smoother": "min"})
        self.x0 = 0.0

    def build_mesh(self, ncells=None, path=None):
        return meshmod.interval_mesh(-0.5, 0.5, ncells or 80,
                                     bc_left="inflow", bc_right="inflow")

    def initial_state(self, law):
        return lambda x: np.where(x[..., 0] < self.x0, -3.0, 3.0)[..., None]

    def inflow_state(self, law):
        return lambda x, t: np.where(x[..., 0] < self.x0, -3.0, 3.0)[..., None]

    def exact_solution(self, law, t):
        fan = scalar_riemann_fan(law, -3.0, 3.0)
        if t == 0:
            return self.initial_state(law)
        return lambda x: fan((x[..., 0] - self.x0) / t)[..., None]


class Buckley2(CaseDefinition):
    """Box of height one: interacting non-convex wave trains."""

    def __init__(self):
        super().__init__("buckley-2", "buckley-1d", t_end=0.4,
                         defaults={"k": 3, "blend": ("gmp", "lmp"),
                                   "smoother": "min"})

    def build_mesh(self, ncells=None, path=None):
        return meshmod.interval_mesh(-1.0, 1.0, ncells or 80,
                                     bc_left="inflow", bc_right="outflow")

    def initial_state(self, law):
        return lambda x: np.where(
            (x[..., 0] >= -0.5) & (x[..., 0] <= 0.0), 1.0, 0.0)[..., None]

    def inflow_state(self, law):
        return lambda x, t: np.zeros(x.shape[:-1] + (1,))


class KPP(CaseDefinition):
    def __init__(self):
        super().__init__("kpp", "kpp-2d", t_end=1.0,
                         defaults={"k": 3, "blend": ("gmp", "lmp"),
                                   "smoother": "min",
                                   "subdivision": "voronoi-type"})

    def build_mesh(self, ncells=None, path=None):
        n = ncells or 1054
        ar = 4.0 * 4.0 / (4.0 * 4.0)
        nx = max(4, int(round(np.sqrt(n / 2.0))))
        return meshmod.rectangle_mesh(-2, 2, -2.5, 1.5, nx, nx, bc="outflow")

    def initial_state(self, law):
        def fn(x):
            r = np.hypot(x[..., 0], x[..., 1])
            return np.where(r < 1.0, 3.5 * np.pi, 0.25 * np.pi)[..., None]
        return fn


# ---------------------------------------------------------------------------
# Euler cases
# ---------------------------------------------------------------------------


class SodModified(CaseDefinition):
    """Sonic-rarefaction shock tube: left (1, .75, 1), right (.125, 0, .1)."""

    left = (1.0, 0.75, 1.0)
    right = (0.125, 0.0, 0.1)
    x0 = 0.3

    def __init__(self):
        super().__init__("sod-modified", "euler-1d", t_end=0.2,
                         defaults={"k": 5, "flux": "rusanov",
                                   "blend": ("euler-positivity", "euler-lmp")})

    def build_mesh(self, ncells=None, path=None):
        return meshmod.interval_mesh(0.0, 1.0, ncells or 20)

    def initial_state(self, law):
        def fn(x):
            side = x[..., 0] < self.x0
            rho = np.where(side, self.left[0], self.right[0])
            vel = np.where(side, self.left[1], self.right[1])[..., None]
            p = np.where(side, self.left[2], self.right[2])
            return law.primitive_to_conserved(rho, vel, p)
        return fn

    def exact_solution(self, law, t):
        if t == 0:
            return self.initial_state(law)
        ex = EulerRiemannExact(self.left, self.right, law.gas_gamma)
        return lambda x: ex.conserved((x[..., 0] - self.x0) / t, law)


class IsentropicSmooth(CaseDefinition):
    """Near-vacuum smooth gamma=3 flow with an exact characteristic solution."""

    def __init__(self):
        super().__init__("isentropic", "euler-1d", law_params={"gas_gamma": 3.0},
                         t_end=0.1,
                         defaults={"k": 4,
                                   "blend": ("euler-positivity", "euler-lmp")})
        self.rho0 = lambda x: 1.0 + 0.9999999 * np.sin(np.pi * x)

    def build_mesh(self, ncells=None, path=None):
        return meshmod.interval_mesh(-1.0, 1.0, ncells or 20, periodic=True)

    def initial_state(self, law):
        def fn(x):
            rho = self.rho0(x[..., 0])
            return law.primitive_to_conserved(
                rho, np.zeros(rho.shape + (1,)), rho**law.gas_gamma)
        return fn

    def exact_solution(self, law, t):
        ex = IsentropicExact(self.rho0)
        return lambda x: ex.conserved(x[..., 0], t, law)


class Sod2D(CaseDefinition):
    def __init__(self):
        super().__init__("sod-2d", "euler-2d", t_end=0.25,
                         defaults={"k": 5,
                                   "blend": ("euler-positivity", "euler-lmp"),
                                   "smoother": "avg"})

    def build_mesh(self, ncells=None, path=None):
        n = ncells or 110
        nr = max(3, int(round(np.sqrt(n / 1.9))))
        return meshmod.sector_mesh(1.0, nr, max(2, int(round(nr * 0.8))),
                                   bc_outer="outflow")

    def initial_state(self, law):
        def fn(x):
            r = np.hypot(x[..., 0], x[..., 1])
            rho = np.where(r < 0.5, 1.0, 0.125)
            p = np.where(r < 0.5, 1.0, 0.1)
            return law.primitive_to_conserved(rho, np.zeros(x.shape[:-1] + (2,)), p)
        return fn


class Sedov(CaseDefinition):
    """Point blast with the released energy confined to one subcell.

    Background pressure 1e-14; the source subcell pressure is
    (gamma - 1) * e0 / subcell_volume so the front reaches radius one at
    t = 1 with peak density (gamma+1)/(gamma-1) = 6.
    """

    e0 = 0.244816

    def __init__(self):
        super().__init__("sedov", "euler-2d", t_end=1.0,
                         defaults={"k": 5,
                                   "blend": ("euler-positivity", "euler-lmp"),
                                   "smoother": "avg"})

    def build_mesh(self, ncells=None, path=None):
        # quarter-plane realization: symmetry walls on both axes avoid the
        # tiny collapsed-apex cells of a polar sector
        n = ncells or 288
        nx = max(4, int(round(np.sqrt(n / 2.0))))
        m = meshmod.rectangle_mesh(0.0, 1.2, 0.0, 1.2, nx, nx, bc="outflow")
        bf = []
        tol = 1e-9
        for c, e, tag in m.boundary_faces:
            a, b = meshmod._EDGE_NODES[e]
            mid = 0.5 * (m.nodes[m.cells[c][a]] + m.nodes[m.cells[c][b]])
            wall = abs(mid[0]) < tol or abs(mid[1]) < tol
            bf.append((c, e, "wall" if wall else "outflow"))
        m.boundary_faces = bf
        return m.validate()

    def initial_state(self, law):
        def fn(x):
            rho = np.ones(x.shape[:-1])
            p = np.full(x.shape[:-1], 1e-14)
            return law.primitive_to_conserved(rho, np.zeros(x.shape[:-1] + (2,)), p)
        return fn

    def post_init(self, scheme, ubar):
        # locate the subcell containing the origin and place the source
        cent = scheme.topo.sub_centroids
        dist = np.linalg.norm(cent, axis=-1)
        c, m = np.unravel_index(np.argmin(dist), dist.shape)
        vol = scheme.topo.sub_areas[c, m]
        ubar = ubar.copy()
        ubar[c, m, -1] = self.e0 / vol          # zero velocity: E = p/(g-1)
        return ubar

    def shock_radius(self, t):
        return np.sqrt(t)


class ForwardStep(CaseDefinition):
    """Mach 3 wind tunnel with a step; smoke-scale configuration."""

    def __init__(self):
        super().__init__("forward-step", "euler-2d", t_end=4.0,
                         defaults={"k": 1, "flux": "hll",
                                   "blend": ("euler-positivity", "euler-lmp"),
                                   "smoother": "avg"})

    def build_mesh(self, ncells=None, path=None):
        n = ncells or 5000
        nx_unit = max(5, int(round(np.sqrt(n / 5.6) / 5.0)) * 5)
        return meshmod.step_channel_mesh(nx_unit)

    def initial_state(self, law):
        def fn(x):
            rho = np.full(x.shape[:-1], 1.4)
            vel = np.zeros(x.shape[:-1] + (2,))
            vel[..., 0] = 3.0
            return law.primitive_to_conserved(rho, vel, np.ones(x.shape[:-1]))
        return fn

    def inflow_state(self, law):
        def fn(x, t):
            rho = np.full(x.shape[:-1], 1.4)
            vel = np.zeros(x.shape[:-1] + (2,))
            vel[..., 0] = 3.0
            return law.primitive_to_conserved(rho, vel, np.ones(x.shape[:-1]))
        return fn


class HalfCylinder(CaseDefinition):
    """Mach 20 flow onto a half cylinder; carbuncle-sensitivity testbed."""

    mach = 20.0

    def __init__(self):
        super().__init__("half-cylinder", "euler-2d", t_end=2.5,
                         defaults={"k": 2, "flux": "hllc", "flux_fv": "hll",
                                   "blend": ("euler-positivity", "euler-lmp"),
                                   "smoother": "avg"})

    def build_mesh(self, ncells=None, path=None):
        n = ncells or 1044
        nr = max(3, int(round(np.sqrt(n / 3.4))))
        return meshmod.half_annulus_mesh(1.0, 3.0, nr, int(round(1.7 * nr)))

    def _state(self, law, shape):
        rho = np.ones(shape)
        vel = np.zeros(shape + (2,))
        vel[..., 0] = self.mach * np.sqrt(law.gas_gamma)
        return law.primitive_to_conserved(rho, vel, np.ones(shape))

    def initial_state(self, law):
        return lambda x: self._state(law, x.shape[:-1])

    def inflow_state(self, law):
        return lambda x, t: self._state(law, x.shape[:-1])


def case_catalog():
    cases = [
        AdvectSine(), AdvectComposite(), Rotation(), Burgers2D(),
        Buckley1(), Buckley2(), KPP(), SodModified(), IsentropicSmooth(),
        Sod2D(), Sedov(), ForwardStep(), HalfCylinder(),
    ]
    return {c.name: c for c in cases}


def get_case(name):
    cat = case_catalog()
    if name not in cat:
        raise ConfigError(f"unknown case {name!r}; known: {sorted(cat)}")
    return cat[name]
