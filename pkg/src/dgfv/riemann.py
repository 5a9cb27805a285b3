"""Numerical fluxes, Riemann intermediate states and entropy fluxes.

All functions are vectorized over leading axes; states carry a trailing
component axis and normals a trailing space axis.  Viscosity-form fluxes
cover Rusanov (local coefficient) and global Lax-Friedrichs; HLL and HLLC
apply to the Euler system only.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, DgfvError

FLUX_KINDS = ("rusanov", "global-lf", "hll", "hllc")


def normal_flux(law, u, n, x=None):
    """Physical flux projected on a unit normal, F(u).n."""
    return np.sum(law.flux(u, x) * n[..., None, :], axis=-1)


def viscosity_flux(law, ul, ur, n, gamma, x=None):
    """Central flux plus scaled jump dissipation.

    With ``gamma`` at least the directional wave-speed bound this is an
    E-flux, hence entropy dissipative for every entropy.
    """
    fl = normal_flux(law, ul, n, x)
    fr = normal_flux(law, ur, n, x)
    g = np.asarray(gamma)[..., None]
    return 0.5 * (fl + fr) - 0.5 * g * (ur - ul)


def intermediate_state(law, ul, ur, n, gamma, x=None):
    """First-order single-state Riemann average behind the two fastest waves.

    Contained in the state interval (componentwise convex combination for
    scalar laws) whenever gamma dominates the wave-speed bound.
    """
    fl = normal_flux(law, ul, n, x)
    fr = normal_flux(law, ur, n, x)
    g = np.asarray(gamma)[..., None]
    return 0.5 * (ul + ur) - (fr - fl) / (2.0 * g)


def side_states(law, ul, ur, n, flux_val, gamma, x=None, fl=None, fr=None):
    """Left/right Godunov states consistent with an arbitrary face flux.

    For viscosity-form fluxes both sides coincide with the single
    intermediate state; for HLL-type fluxes with gamma = max(|S_L|, |S_R|)
    each side is a convex combination of its input state and the fan state.
    Precomputed one-sided normal fluxes can be passed to skip reevaluation.
    """
    g = np.asarray(gamma)[..., None]
    if fl is None:
        fl = normal_flux(law, ul, n, x)
    if fr is None:
        fr = normal_flux(law, ur, n, x)
    um = ul - (flux_val - fl) / g
    up = ur + (flux_val - fr) / g
    return um, up


def blended_intermediate_states(ustar, d_flux, gamma, theta):
    """Shift the FV intermediate state by the scaled blended-flux increment."""
    g = np.asarray(gamma)[..., None]
    shift = np.asarray(theta)[..., None] * d_flux / g
    return ustar - shift, ustar + shift


# ---------------------------------------------------------------------------
# HLL / HLLC for the Euler system
# ---------------------------------------------------------------------------


def _rotated(law, u, n):
    """Density, normal/tangential velocity, pressure, energy."""
    rho = u[..., 0]
    vel = u[..., 1:1 + law.dim] / rho[..., None]
    vn = np.sum(vel * n, axis=-1)
    p = law.pressure(u)
    return rho, vel, vn, p


def einfeldt_speeds(law, ul, ur, n):
    """Einfeldt-type wave-speed estimates (one-sided and Roe-averaged)."""
    g = law.gas_gamma
    rl, vell, vnl, pl = _rotated(law, ul, n)
    rr, velr, vnr, pr = _rotated(law, ur, n)
    cl = np.sqrt(g * pl / rl)
    cr = np.sqrt(g * pr / rr)
    sl_ = np.sqrt(rl)
    sr_ = np.sqrt(rr)
    w = 1.0 / (sl_ + sr_)
    vroe = (sl_[..., None] * vell + sr_[..., None] * velr) * w[..., None]
    hl = (ul[..., -1] + pl) / rl
    hr = (ur[..., -1] + pr) / rr
    hroe = (sl_ * hl + sr_ * hr) * w
    c2 = (g - 1.0) * (hroe - 0.5 * np.sum(vroe**2, axis=-1))
    croe = np.sqrt(np.maximum(c2, 0.0))
    vnroe = np.sum(vroe * n, axis=-1)
    sl = np.minimum(vnl - cl, vnroe - croe)
    sr = np.maximum(vnr + cr, vnroe + croe)
    return sl, sr


def hll_flux(law, ul, ur, n):
    """HLL flux; returns (flux, S_L, S_R)."""
    if not law.is_euler:
        raise ConfigError("hll flux is defined for the Euler system only")
    sl, sr = einfeldt_speeds(law, ul, ur, n)
    fl = normal_flux(law, ul, n)
    fr = normal_flux(law, ur, n)
    den = sr - sl
    mid = (sr[..., None] * fl - sl[..., None] * fr
           + (sl * sr)[..., None] * (ur - ul)) / den[..., None]
    flux = np.where(sl[..., None] >= 0, fl,
                    np.where(sr[..., None] <= 0, fr, mid))
    return flux, sl, sr


def hllc_flux(law, ul, ur, n):
    """HLLC flux with the Toro contact-speed closure; returns (flux, S_L, S_R).

    Contact speed from the momentum jump conditions across the outer waves;
    combined with Einfeldt outer speeds this is the standard
    positivity-compatible variant.
    """
    if not law.is_euler:
        raise ConfigError("hllc flux is defined for the Euler system only")
    sl, sr = einfeldt_speeds(law, ul, ur, n)
    rl, vell, vnl, pl = _rotated(law, ul, n)
    rr, velr, vnr, pr = _rotated(law, ur, n)
    num = pr - pl + rl * vnl * (sl - vnl) - rr * vnr * (sr - vnr)
    den = rl * (sl - vnl) - rr * (sr - vnr)
    sstar = num / den

    def star_state(u, rho, vel, vn, p, s):
        factor = rho * (s - vn) / (s - sstar)
        out = np.empty_like(u)
        out[..., 0] = factor
        vstar = vel + (sstar - vn)[..., None] * n
        out[..., 1:1 + law.dim] = factor[..., None] * vstar
        e_spec = u[..., -1] / rho + (sstar - vn) * (
            sstar + p / (rho * (s - vn)))
        out[..., -1] = factor * e_spec
        return out

    fl = normal_flux(law, ul, n)
    fr = normal_flux(law, ur, n)
    ustar_l = star_state(ul, rl, vell, vnl, pl, sl)
    ustar_r = star_state(ur, rr, velr, vnr, pr, sr)
    fsl = fl + sl[..., None] * (ustar_l - ul)
    fsr = fr + sr[..., None] * (ustar_r - ur)
    flux = np.where(
        sl[..., None] >= 0, fl,
        np.where(sstar[..., None] >= 0, fsl,
                 np.where(sr[..., None] >= 0, fsr, fr)))
    return flux, sl, sr


# ---------------------------------------------------------------------------
# flux-kind dispatch used by the scheme
# ---------------------------------------------------------------------------


class FluxFunction:
    """Named numerical flux returning (flux, face viscosity coefficient)."""

    def __init__(self, kind):
        if kind not in FLUX_KINDS:
            raise ConfigError(f"unknown numerical flux kind {kind!r}")
        self.kind = kind

    def needs_global_coefficient(self):
        return self.kind == "global-lf"

    def __call__(self, law, ul, ur, n, x=None, gamma_global=None):
        return self.evaluate(law, ul, ur, n, x, gamma_global)[:2]

    def evaluate(self, law, ul, ur, n, x=None, gamma_global=None):
        """Flux, coefficient and the two one-sided normal fluxes."""
        fl = normal_flux(law, ul, n, x)
        fr = normal_flux(law, ur, n, x)
        if self.kind in ("rusanov", "global-lf"):
            if self.kind == "rusanov":
                gamma = law.max_wavespeed(ul, ur, n, x)
            else:
                if gamma_global is None:
                    raise DgfvError(
                        "global-lf flux needs the mesh-wide coefficient")
                shape = np.broadcast_shapes(ul.shape[:-1], ur.shape[:-1])
                gamma = np.full(shape, float(gamma_global))
            flux = 0.5 * (fl + fr) - 0.5 * gamma[..., None] * (ur - ul)
            return flux, gamma, fl, fr
        if self.kind == "hll":
            flux, sl, sr = hll_flux(law, ul, ur, n)
        else:
            flux, sl, sr = hllc_flux(law, ul, ur, n)
        gamma = np.maximum(np.abs(sl), np.abs(sr))
        return flux, gamma, fl, fr


# ---------------------------------------------------------------------------
# entropy fluxes and diagnostics
# ---------------------------------------------------------------------------


def numerical_entropy_flux(ul, ur, n, pair, gamma):
    """Entropy flux paired with the viscosity flux: central + eta jump term."""
    pl = np.sum(pair.phi(ul) * n, axis=-1)
    pr = np.sum(pair.phi(ur) * n, axis=-1)
    return 0.5 * (pl + pr) - 0.5 * np.asarray(gamma) * (pair.eta(ur) - pair.eta(ul))


def tadmor_entropy_flux(ul, ur, n, pair, flux_val):
    """Two-point consistent entropy flux for an arbitrary face flux value."""
    vl, vr = pair.v(ul), pair.v(ur)
    psl = np.sum(pair.psi(ul) * n, axis=-1)
    psr = np.sum(pair.psi(ur) * n, axis=-1)
    return 0.5 * pair.pair_dot(vl + vr, flux_val) - 0.5 * (psl + psr)


def entropy_dissipation_coefficient(ul, ur, n, pair, gamma):
    """Dissipation coefficient in the entropy-variable form of the flux.

    Nonnegative whenever gamma dominates the wave-speed bound.  Undefined
    for equal states (raises).
    """
    ul = np.asarray(ul, dtype=float)
    ur = np.asarray(ur, dtype=float)
    dv = pair.v(ur)[..., 0] - pair.v(ul)[..., 0]
    if np.any(np.abs(dv) < 1e-300) or np.any(ul == ur):
        raise DgfvError("entropy dissipation coefficient undefined for equal states")
    flux = viscosity_flux(pair.law, ul, ur, n, gamma)[..., 0]
    dpsi = np.sum((pair.Psi(pair.v(ur)) - pair.Psi(pair.v(ul))) * n, axis=-1)
    return 2.0 * (dpsi / dv - flux) / dv
