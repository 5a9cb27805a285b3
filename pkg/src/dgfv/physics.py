"""Conservation laws and entropy pairs.

States are arrays with a trailing component axis (length 1 for scalar
laws).  Fluxes carry one extra trailing axis for the space dimension.
Scalar entropy machinery works componentwise on the squeezed state; the
Euler entropy pair operates on the full conserved vector.
"""

from __future__ import annotations

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .errors import ConfigError, DgfvError

# ---------------------------------------------------------------------------
# conservation laws
# ---------------------------------------------------------------------------


class ConservationLaw:
    """Base class: flux, directional wave-speed bound, admissibility."""

    name = "abstract"
    dim = 1
    nvars = 1
    is_euler = False
    space_dependent = False

    def flux(self, u, x=None):
        raise NotImplementedError

    def dflux(self, u, x=None):
        """Flux derivative for scalar laws, shape (..., dim)."""
        raise NotImplementedError

    def max_wavespeed(self, ul, ur, n, x=None):
        """Upper bound of |F'(w).n| over the segment between the states."""
        raise NotImplementedError

    def mesh_speed_bound(self, nodes):
        """State-independent global wave-speed bound, when one exists.

        Returns None for genuinely nonlinear laws; the global
        Lax-Friedrichs coefficient is then the mesh maximum of the local
        bounds, re-evaluated every stage.
        """
        return None

    def admissible(self, u):
        return np.all(np.isfinite(u), axis=-1)


class _ScalarLaw(ConservationLaw):
    def max_wavespeed(self, ul, ur, n, x=None):
        a = self.dflux(ul, x)
        b = self.dflux(ur, x)
        sa = np.abs(np.sum(a * n, axis=-1))
        sb = np.abs(np.sum(b * n, axis=-1))
        return np.maximum(sa, sb)


class Advection1D(_ScalarLaw):
    dim = 1

    def __init__(self, speed=1.0):
        self.speed = float(speed)
        self.name = "advection-1d"

    def flux(self, u, x=None):
        return (self.speed * u)[..., None]

    def dflux(self, u, x=None):
        return np.broadcast_to(
            np.array([self.speed]), u.shape[:-1] + (1,)).copy()

    def max_wavespeed(self, ul, ur, n, x=None):
        return np.full(np.broadcast_shapes(ul.shape[:-1], ur.shape[:-1]),
                       abs(self.speed))

    def mesh_speed_bound(self, nodes):
        return abs(self.speed)


class Rotation2D(_ScalarLaw):
    """Rigid rotation about (1/2, 1/2): divergence-free linear transport."""

    dim = 2
    space_dependent = True
    name = "rotation-2d"

    def velocity(self, x):
        return np.stack([0.5 - x[..., 1], x[..., 0] - 0.5], axis=-1)

    def flux(self, u, x=None):
        a = self.velocity(x)
        return u[..., None] * a[..., None, :]

    def dflux(self, u, x=None):
        return np.broadcast_to(self.velocity(x), u.shape[:-1] + (2,)).copy()

    def mesh_speed_bound(self, nodes):
        # the speed magnitude is convex in x: maximized at a mesh node
        return float(np.max(np.linalg.norm(self.velocity(nodes), axis=-1)))


class Burgers(_ScalarLaw):
    def __init__(self, dim=1):
        self.dim = dim
        self.name = f"burgers-{dim}d"

    def flux(self, u, x=None):
        f = 0.5 * u**2
        return np.repeat(f[..., None], self.dim, axis=-1)

    def dflux(self, u, x=None):
        return np.repeat(u[..., None], self.dim, axis=-1)

    def max_wavespeed(self, ul, ur, n, x=None):
        # |F'(w).n| = |w| |sum(n)| is monotone in |w|: endpoints suffice
        w = np.maximum(np.abs(ul[..., 0]), np.abs(ur[..., 0]))
        return w * np.abs(np.sum(n, axis=-1))


class Buckley1D(_ScalarLaw):
    """Non-convex two-phase flux 4u^2 / (4u^2 + (1-u)^2)."""

    dim = 1
    name = "buckley-1d"

    def __init__(self):
        # stationary points of F' for the interval wave-speed bound
        xs = np.linspace(-10.0, 10.0, 20001)
        d2 = self._d2(xs)
        crit = []
        for i in range(len(xs) - 1):
            if d2[i] == 0.0:
                crit.append(xs[i])
            elif d2[i] * d2[i + 1] < 0:
                crit.append(brentq(self._d2, xs[i], xs[i + 1]))
        self._crit = np.array(crit)

    @staticmethod
    def _g(u):
        return 4.0 * u**2 + (1.0 - u) ** 2

    def flux(self, u, x=None):
        v = u[..., 0]
        return (4.0 * v**2 / self._g(v))[..., None, None]

    def dflux(self, u, x=None):
        v = u[..., 0]
        return (8.0 * v * (1.0 - v) / self._g(v) ** 2)[..., None]

    def _d2(self, u):
        g = self._g(u)
        dg = 10.0 * u - 2.0
        num = 8.0 * u * (1.0 - u)
        dnum = 8.0 - 16.0 * u
        return (dnum * g - 2.0 * num * dg) / g**3

    def max_wavespeed(self, ul, ur, n, x=None):
        lo = np.minimum(ul[..., 0], ur[..., 0])
        hi = np.maximum(ul[..., 0], ur[..., 0])
        cand = [np.abs(self.dflux(lo[..., None])[..., 0]),
                np.abs(self.dflux(hi[..., None])[..., 0])]
        for c in self._crit:
            inside = (lo <= c) & (c <= hi)
            val = abs(float(self.dflux(np.array([c]))[0]))
            cand.append(np.where(inside, val, 0.0))
        return np.abs(n[..., 0]) * np.maximum.reduce(cand)


class KPP2D(_ScalarLaw):
    """Rotating-wave flux (sin u, cos u); |F'| = 1 everywhere."""

    dim = 2
    name = "kpp-2d"

    def flux(self, u, x=None):
        v = u[..., 0]
        return np.stack([np.sin(v), np.cos(v)], axis=-1)[..., None, :]

    def dflux(self, u, x=None):
        v = u[..., 0]
        return np.stack([np.cos(v), -np.sin(v)], axis=-1)

    def max_wavespeed(self, ul, ur, n, x=None):
        shape = np.broadcast_shapes(ul.shape[:-1], ur.shape[:-1], n.shape[:-1])
        return np.broadcast_to(np.linalg.norm(n, axis=-1), shape).copy()

    def mesh_speed_bound(self, nodes):
        return 1.0


class Euler(ConservationLaw):
    """Compressible gas dynamics with a gamma-law equation of state."""

    is_euler = True

    def __init__(self, dim=1, gas_gamma=1.4):
        self.dim = dim
        self.nvars = dim + 2
        self.gas_gamma = float(gas_gamma)
        self.name = f"euler-{dim}d"

    def split(self, u):
        rho = u[..., 0]
        mom = u[..., 1:1 + self.dim]
        ene = u[..., -1]
        return rho, mom, ene

    def pressure(self, u):
        rho, mom, ene = self.split(u)
        kin = 0.5 * np.sum(mom**2, axis=-1) / rho
        return (self.gas_gamma - 1.0) * (ene - kin)

    def sound_speed(self, u):
        # inadmissible states yield NaN on purpose (blending reacts to it)
        with np.errstate(invalid="ignore"):
            return np.sqrt(self.gas_gamma * self.pressure(u) / u[..., 0])

    def flux(self, u, x=None):
        rho, mom, ene = self.split(u)
        p = self.pressure(u)
        vel = mom / rho[..., None]
        out = np.empty(u.shape + (self.dim,))
        out[..., 0, :] = mom
        for d in range(self.dim):
            out[..., 1 + d, :] = vel * mom[..., d][..., None]
            out[..., 1 + d, d] += p
        out[..., -1, :] = vel * (ene + p)[..., None]
        return out

    def max_wavespeed(self, ul, ur, n, x=None):
        def side(u):
            vn = np.sum(u[..., 1:1 + self.dim] * n, axis=-1) / u[..., 0]
            return np.abs(vn) + self.sound_speed(u)

        return np.maximum(side(ul), side(ur))

    def admissible(self, u):
        with np.errstate(invalid="ignore"):
            ok = np.isfinite(u).all(axis=-1) & (u[..., 0] > 0)
            p = np.where(ok, self.pressure(np.where(ok[..., None], u, 1.0)), -1.0)
        return ok & (p > 0)

    def primitive_to_conserved(self, rho, vel, p):
        """Assemble (rho, q, E) from density, velocity (..., dim), pressure."""
        rho = np.asarray(rho, dtype=float)
        p = np.asarray(p, dtype=float)
        vel = np.broadcast_to(np.asarray(vel, dtype=float), rho.shape + (self.dim,))
        mom = rho[..., None] * vel
        kin = 0.5 * rho * np.sum(vel**2, axis=-1)
        ene = p / (self.gas_gamma - 1.0) + kin
        return np.concatenate([rho[..., None], mom, ene[..., None]], axis=-1)


def law_catalog():
    """Names and constructors of the bundled conservation laws."""
    return {
        "advection-1d": Advection1D,
        "rotation-2d": Rotation2D,
        "burgers-1d": lambda: Burgers(1),
        "burgers-2d": lambda: Burgers(2),
        "buckley-1d": Buckley1D,
        "kpp-2d": KPP2D,
        "euler-1d": lambda gas_gamma=1.4: Euler(1, gas_gamma),
        "euler-2d": lambda gas_gamma=1.4: Euler(2, gas_gamma),
    }


def make_law(name, **params):
    cat = law_catalog()
    if name not in cat:
        raise ConfigError(f"unknown conservation law {name!r}")
    return cat[name](**params)


# ---------------------------------------------------------------------------
# entropy pairs
# ---------------------------------------------------------------------------


class _PhiCache:
    """Entropy flux by cumulative quadrature of v(w) F'(w), pinned at 0.

    Cached on a dense spline; the grid is geometrically refined around any
    point where the entropy variable has a kink (smoothed Kruzkov center),
    so interpolation error stays far below the advertised 1e-10.  Evaluation
    outside the cached range raises.
    """

    HARD_RANGE = 512.0

    def __init__(self, vfun, dflux_1d, lo, hi, npts=2049, singular=()):
        self._vfun = vfun
        self._dflux = dflux_1d
        self._npts = npts
        self._singular = tuple(singular)
        self._build(lo, hi)

    def _build(self, lo, hi):
        grid = np.linspace(lo, hi, self._npts)
        refine = [grid]
        for c in self._singular:
            if lo < c < hi:
                offs = np.geomspace(1e-13, (hi - lo) * 1e-2, 80)
                refine.append(np.clip(np.concatenate([[c], c + offs, c - offs]),
                                      lo, hi))
        grid = np.unique(np.concatenate(refine))
        gx, gw = np.polynomial.legendre.leggauss(8)
        mid = 0.5 * (grid[:-1] + grid[1:])
        half = 0.5 * np.diff(grid)
        pts = mid[:, None] + half[:, None] * gx[None, :]
        vals = self._vfun(pts) * self._dflux(pts)
        seg = np.sum(vals * gw[None, :], axis=1) * half
        cum = np.concatenate([[0.0], np.cumsum(seg)])
        if lo <= 0.0 <= hi:
            cum -= np.interp(0.0, grid, cum)
        self.lo, self.hi = lo, hi
        self._spline = CubicSpline(grid, cum)

    def __call__(self, u):
        u = np.asarray(u, dtype=float)
        finite = u[np.isfinite(u)]
        if finite.size:
            lo_req, hi_req = float(finite.min()), float(finite.max())
            if lo_req < self.lo or hi_req > self.hi:
                if max(abs(lo_req), abs(hi_req)) > self.HARD_RANGE:
                    raise DgfvError(
                        "entropy flux evaluated far outside its cached range")
                # rebuild over a doubled window so repeated overshoots from
                # high-order traces stay cheap and keep full accuracy
                span = max(self.hi - self.lo, 1.0)
                self._build(min(self.lo - span, lo_req - 0.5),
                            max(self.hi + span, hi_req + 0.5))
        out = self._spline(np.clip(u, self.lo, self.hi))
        return np.where(np.isfinite(u), out, np.nan)


class ScalarEntropyPair:
    """Strictly convex entropy with compatible flux for one scalar law.

    ``v_range`` is the open image of the entropy variable; sub-resolution
    coefficients outside it have no state interpretation and make the
    affected cells fall back to first order.
    """

    v_range = (-np.inf, np.inf)

    def __init__(self, law, name, eta, v, u_of_v, phi_components=None,
                 cache_range=(-3.5, 3.5), singular=(), v_range=None):
        if v_range is not None:
            self.v_range = v_range
        self.law = law
        self.name = name
        self._eta = eta
        self._v = v
        self._u_of_v = u_of_v
        if phi_components is None:
            if law.space_dependent:
                raise ConfigError(
                    "numeric entropy-flux cache unsupported for "
                    "space-dependent fluxes")
            lo, hi = cache_range
            phi_components = [
                _PhiCache(v, lambda w, d=d: law.dflux(w[..., None])[..., d],
                          lo, hi, singular=singular)
                for d in range(law.dim)
            ]
        self._phi = phi_components

    def eta(self, u):
        return self._eta(u[..., 0])

    def v(self, u):
        return self._v(u[..., 0])[..., None]

    def u_of_v(self, v):
        return self._u_of_v(v[..., 0])[..., None]

    def phi(self, u):
        w = u[..., 0]
        return np.stack([p(w) for p in self._phi], axis=-1)

    def psi(self, u):
        return self.v(u)[..., 0, None] * self.law.flux(u)[..., 0, :] - self.phi(u)

    def Psi(self, v):
        return self.psi(self.u_of_v(v))

    def pair_dot(self, a, b):
        """Inner product over state components (scalar: plain product)."""
        return np.sum(a * b, axis=-1)


def _square_phi(law):
    """Closed-form entropy flux for eta = u^2/2 where available."""
    if isinstance(law, Advection1D):
        return [lambda u, a=law.speed: a * 0.5 * u**2]
    if isinstance(law, Burgers):
        return [lambda u: u**3 / 3.0] * law.dim
    if isinstance(law, KPP2D):
        return [lambda u: np.cos(u) + u * np.sin(u) - 1.0,
                lambda u: u * np.cos(u) - np.sin(u)]
    return None


class EulerLogEntropyPair:
    """eta(U) = -rho log(p rho^-gamma) for the gamma-law Euler system."""

    v_range = (-np.inf, np.inf)

    def __init__(self, law):
        if not law.is_euler:
            raise ConfigError("euler-log entropy requires an Euler law")
        self.law = law
        self.name = "euler-log"

    def _specific_entropy(self, u):
        rho = u[..., 0]
        p = self.law.pressure(u)
        if np.any(rho <= 0) or np.any(p <= 0):
            raise DgfvError("euler-log entropy undefined for rho<=0 or p<=0")
        return np.log(p) - self.law.gas_gamma * np.log(rho)

    def eta(self, u):
        return -u[..., 0] * self._specific_entropy(u)

    def v(self, u):
        g = self.law.gas_gamma
        rho = u[..., 0]
        p = self.law.pressure(u)
        s = self._specific_entropy(u)
        vel = u[..., 1:1 + self.law.dim] / rho[..., None]
        ke = 0.5 * np.sum(vel**2, axis=-1)
        out = np.empty_like(u)
        out[..., 0] = (g - 1.0) * ((g - s) / (g - 1.0) - rho * ke / p)
        out[..., 1:1 + self.law.dim] = (g - 1.0) * rho[..., None] * vel / p[..., None]
        out[..., -1] = -(g - 1.0) * rho / p
        return out

    def u_of_v(self, v):
        g = self.law.gas_gamma
        w = v / (g - 1.0)
        ve = w[..., -1]
        vel = -w[..., 1:1 + self.law.dim] / ve[..., None]
        ke = 0.5 * np.sum(vel**2, axis=-1)
        s = g - (g - 1.0) * (w[..., 0] - ve * ke)
        rho = (np.exp(-s) / (-ve)) ** (1.0 / (g - 1.0))
        p = rho / (-ve)
        out = np.empty(v.shape)
        out[..., 0] = rho
        out[..., 1:1 + self.law.dim] = rho[..., None] * vel
        out[..., -1] = p / (g - 1.0) + rho * ke
        return out

    def phi(self, u):
        vel = u[..., 1:1 + self.law.dim] / u[..., 0][..., None]
        return self.eta(u)[..., None] * vel

    def psi(self, u):
        return (self.law.gas_gamma - 1.0) * u[..., 1:1 + self.law.dim]

    def Psi(self, v):
        return self.psi(self.u_of_v(v))

    def pair_dot(self, a, b):
        return np.sum(a * b, axis=-1)


def entropy_catalog():
    return ("square", "smoothed-kruzkov", "atan-mollified", "euler-log")


def make_entropy_pair(law, name, ke=0.0, eps=0.25, sharpness=20.0,
                      cache_range=None):
    """Construct a named entropy pair bound to a conservation law."""
    if name == "euler-log":
        return EulerLogEntropyPair(law)
    if law.is_euler:
        raise ConfigError(f"entropy {name!r} is scalar-only")
    if cache_range is None:
        cache_range = (-3.5, 3.5)
    if name == "square":
        return ScalarEntropyPair(
            law, name,
            eta=lambda u: 0.5 * u**2,
            v=lambda u: u,
            u_of_v=lambda v: v,
            phi_components=_square_phi(law),
            cache_range=cache_range,
        )
    if name == "smoothed-kruzkov":
        ex = float(eps)

        def eta(u):
            return np.abs(u - ke) ** (1.0 + ex) / (1.0 + ex)

        def v(u):
            return np.sign(u - ke) * np.abs(u - ke) ** ex

        phi = None
        if isinstance(law, Advection1D):
            phi = [lambda u, a=law.speed: a * (eta(u) - eta(0.0))]
        elif isinstance(law, Burgers):
            def cum(s):
                return (np.sign(s) * np.abs(s) ** (ex + 2.0) / (ex + 2.0)
                        + ke * np.abs(s) ** (ex + 1.0) / (ex + 1.0))

            phi = [lambda u: cum(u - ke) - cum(-ke)] * law.dim
        return ScalarEntropyPair(
            law, name, eta=eta, v=v,
            u_of_v=lambda w: ke + np.sign(w) * np.abs(w) ** (1.0 / ex),
            phi_components=phi, cache_range=cache_range, singular=(ke,),
        )
    if name == "atan-mollified":
        s = float(sharpness)

        def eta(u):
            return u * np.arctan(s * u) - np.log1p((s * u) ** 2) / (2 * s)

        phi = None
        if isinstance(law, Advection1D):
            phi = [lambda u, a=law.speed: a * eta(u)]
        elif isinstance(law, Burgers):
            phi = [lambda u: (0.5 * u**2 + 0.5 / s**2) * np.arctan(s * u)
                   - u / (2 * s)] * law.dim
        # the entropy-variable image is (-pi/2, pi/2); clip the inverse just
        # inside it so out-of-range sub-resolution coefficients map to large
        # but bounded states (those cells fall back to first order anyway)
        vcap = np.pi / 2 - 1e-3
        return ScalarEntropyPair(
            law, name, eta=eta,
            v=lambda u: np.arctan(s * u),
            u_of_v=lambda w: np.tan(np.clip(w, -vcap, vcap)) / s,
            phi_components=phi, cache_range=cache_range,
            v_range=(-vcap, vcap),
        )
    raise ConfigError(f"unknown entropy pair {name!r}")


def wavespeed_bound(law, ul, ur, n, x=None):
    """Directional wave-speed bound over the state segment (or acoustic)."""
    return law.max_wavespeed(np.asarray(ul), np.asarray(ur), np.asarray(n), x)
