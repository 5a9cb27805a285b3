"""Blending coefficients: one bound per enforced property, composed by min.

Each strategy returns an array of face coefficients in [0, 1] (1 where its
activation condition is idle).  Bounds of the form min(1, X/|dF|) return 1
when |dF| falls under the division guard: a vanishing flux increment means
the blended flux already sits on the safe first-order value.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

STRATEGY_NAMES = (
    "entropy-any", "entropy-tadmor", "entropy-cell",
    "gmp", "lmp", "euler-positivity", "euler-lmp",
)
SMOOTHERS = ("none", "avg", "min")


def division_guard(reference, eps=1e-14):
    return eps * (1.0 + np.abs(reference))


def _clip01(x):
    return np.clip(x, 0.0, 1.0)


# ---------------------------------------------------------------------------
# entropy strategies
# ---------------------------------------------------------------------------


def theta_entropy_any(ul, ur, d_flux, gamma, gamma_max, eps=1e-14):
    """Keep the blended flux an E-flux (scalar laws).

    Active when the flux increment and the state jump are aligned; the
    bound restores an effective viscosity at least the wave-speed bound.
    """
    du = ur[..., 0] - ul[..., 0]
    df = d_flux[..., 0]
    guard = division_guard(np.abs(gamma) * np.abs(du), eps)
    active = (df * du > 0) & (np.abs(df) > guard)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = (gamma - gamma_max) * du / (2.0 * df)
    return np.where(active, _clip01(np.where(np.isfinite(bound), bound, 1.0)), 1.0)


def theta_entropy_tadmor(ul, ur, ffv, d_flux, n, pair, eps=1e-14):
    """Enforce the two-point entropy-dissipation inequality for one pair."""
    dv = pair.v(ur)[..., 0] - pair.v(ul)[..., 0]
    df = d_flux[..., 0]
    dpsi = np.sum((pair.psi(ur) - pair.psi(ul)) * n, axis=-1)
    num = dpsi - ffv[..., 0] * dv
    den = df * dv
    guard = division_guard(np.abs(ffv[..., 0]) * np.abs(dv), eps)
    active = (den > 0) & (np.abs(den) > guard * np.maximum(np.abs(dv), 1e-300))
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = num / den
    return np.where(active, _clip01(np.where(np.isfinite(bound), bound, 1.0)), 1.0)


def knapsack_greedy(costs, budget, theta_max, order=None):
    """Maximize sum(theta) under costs . theta <= budget, 0 <= theta <= cap.

    Nonpositive costs only add slack, so those coefficients take their cap;
    the rest are granted in ascending cost order (ties by `order`, the
    global face id) until the budget runs out.
    """
    costs = np.asarray(costs, dtype=float)
    cap = np.broadcast_to(np.asarray(theta_max, dtype=float), costs.shape).copy()
    theta = np.where(costs <= 0, cap, 0.0)
    remaining = budget - np.sum(np.where(costs <= 0, costs * cap, 0.0))
    pos = np.nonzero(costs > 0)[0]
    if order is None:
        order = np.arange(len(costs))
    ranked = pos[np.lexsort((np.asarray(order)[pos], costs[pos]))]
    for i in ranked:
        if remaining <= 0:
            break
        take = min(cap[i], remaining / costs[i])
        theta[i] = take
        remaining -= costs[i] * take
    return theta


# ---------------------------------------------------------------------------
# maximum principles
# ---------------------------------------------------------------------------


def theta_gmp(um, up, df, gamma, alpha, beta, eps=1e-14):
    """Hold both shifted intermediate states inside the global bounds.

    Arguments are plain scalar-valued arrays: the two side intermediate
    states, the flux increment of the bounded variable and the face
    viscosity coefficient.
    """
    guard = division_guard(np.abs(gamma), eps)
    slack_m = np.minimum(beta - um, um - alpha)
    slack_p = np.minimum(beta - up, up - alpha)
    slack = np.maximum(np.minimum(slack_m, slack_p), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = np.abs(gamma / df) * slack
    return np.where(np.abs(df) > guard,
                    _clip01(np.where(np.isfinite(bound), bound, 1.0)), 1.0)


def theta_lmp(um, up, df, gamma, alpha_m, beta_m, alpha_p, beta_p, eps=1e-14):
    """Two-branch local bound: each side stays inside its stencil range.

    The minus state moves by -theta dF/gamma, the plus state by the
    opposite; the binding slack pair follows the sign of dF.  Ghost sides
    pass +-infinity bounds and never bind.
    """
    guard = division_guard(np.abs(gamma), eps)
    pos = np.minimum(um - alpha_m, beta_p - up)
    neg = np.minimum(beta_m - um, up - alpha_p)
    slack = np.maximum(np.where(df > 0, pos, neg), 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        bound = np.abs(gamma / df) * slack
    return np.where(np.abs(df) > guard,
                    _clip01(np.where(np.isfinite(bound), bound, 1.0)), 1.0)


def theta_positivity_euler(law, ustar_m, ustar_p, d_flux, gamma, eps=1e-14):
    """Positivity of density then internal energy for both blended states.

    Returns (theta, bad_count): ``bad_count`` counts faces whose FV
    intermediate state already has nonpositive internal energy (wave-speed
    estimates too tight); those faces fall back to theta = 0.
    """
    dim = law.dim
    drho = d_flux[..., 0]
    dmom = d_flux[..., 1:1 + dim]
    dene = d_flux[..., -1]
    guard = division_guard(np.abs(gamma), eps)

    def density_bound(us):
        with np.errstate(divide="ignore", invalid="ignore"):
            b = np.abs(gamma / drho) * us[..., 0]
        return np.where(np.abs(drho) > guard,
                        _clip01(np.where(np.isfinite(b), b, 1.0)), 1.0)

    th1 = np.minimum(density_bound(ustar_m), density_bound(ustar_p))

    def energy_bound(us):
        rho_s = us[..., 0]
        mom_s = us[..., 1:1 + dim]
        ene_s = us[..., -1]
        m_val = rho_s * ene_s - 0.5 * np.sum(mom_s**2, axis=-1)
        a_val = (0.5 * np.sum(dmom**2, axis=-1) - th1 * drho * dene) / gamma**2
        b_val = (np.sum(mom_s * dmom, axis=-1) - rho_s * dene
                 - th1 * ene_s * drho) / gamma
        den = np.abs(b_val) + np.maximum(0.0, a_val)
        with np.errstate(divide="ignore", invalid="ignore"):
            b2 = m_val / den
        ok = den > division_guard(m_val, eps)
        return m_val, np.where(ok, _clip01(np.where(np.isfinite(b2), b2, 1.0)), 1.0)

    m_m, th2_m = energy_bound(ustar_m)
    m_p, th2_p = energy_bound(ustar_p)
    theta = th1 * np.minimum(th2_m, th2_p)
    bad = (m_m <= 0) | (m_p <= 0)
    theta = np.where(bad, 0.0, theta)

    # replay safety: halve the few faces (roundoff near vacuum) where the
    # closed-form bound leaves a blended state marginally inadmissible
    shift = (theta / gamma)[..., None] * d_flux
    ok = (law.admissible(ustar_m - shift) & law.admissible(ustar_p + shift)
          | (theta == 0.0))
    idx = np.nonzero(~ok)
    if idx[0].size:
        th_s = theta[idx]
        um_s, up_s = ustar_m[idx], ustar_p[idx]
        df_s = d_flux[idx]
        g_s = gamma[idx]
        active = np.ones(th_s.shape, dtype=bool)
        for _ in range(60):
            th_s = np.where(active & (th_s < 1e-12), 0.0,
                            np.where(active, 0.5 * th_s, th_s))
            sh = (th_s / g_s)[..., None] * df_s
            ok_s = (law.admissible(um_s - sh) & law.admissible(up_s + sh)
                    | (th_s == 0.0))
            active &= ~ok_s
            if not np.any(active):
                break
        theta[idx] = th_s
    return theta, int(np.count_nonzero(bad))


# ---------------------------------------------------------------------------
# smoothening and composition
# ---------------------------------------------------------------------------


def _segment_reduce(values, indptr, how):
    if how == "mean":
        sums = np.add.reduceat(values, indptr[:-1])
        counts = np.diff(indptr)
        return sums / counts
    return np.minimum.reduceat(values, indptr[:-1])


def smoothen(theta, topo, mode):
    """Spread low coefficients to face neighborhoods; never increases theta.

    Mode ``avg`` aggregates per-subcell face means then caps each face by
    the mean over node-sharing subcells; ``min`` replaces both averages by
    minima, the stronger variant for non-convex fluxes.
    """
    if mode == "none":
        return theta
    if mode not in SMOOTHERS:
        raise ConfigError(f"unknown smoother {mode!r}")
    how = "mean" if mode == "avg" else "min"
    per_sub = _segment_reduce(theta[topo.subface_indices], topo.subface_indptr, how)
    per_face = _segment_reduce(per_sub[topo.facenode_indices],
                               topo.facenode_indptr, how)
    return np.minimum(theta, per_face)


def subcell_theta(theta, topo, how="mean"):
    """Per-subcell aggregate of face coefficients (diagnostics, outputs)."""
    return _segment_reduce(theta[topo.subface_indices], topo.subface_indptr, how)


def compose(strategies, poisoned=None):
    """Minimum over strategy outputs; non-finite flux increments force 0.

    `strategies` maps name -> array; returns (theta, binding) where binding
    holds the index of the binding strategy per face (-1 for pure DG).
    """
    names = list(strategies)
    if not names:
        theta = None
    else:
        stack = np.stack([np.nan_to_num(strategies[n], nan=0.0) for n in names])
        theta = stack.min(axis=0)
        binding = stack.argmin(axis=0)
    if theta is None:
        if poisoned is None:
            raise ConfigError("compose needs strategy outputs or a poison mask")
        theta = np.ones(poisoned.shape)
        binding = np.full(poisoned.shape, -1, dtype=int)
    else:
        binding = np.where(theta >= 1.0, -1, binding)
    if poisoned is not None:
        theta = np.where(poisoned, 0.0, theta)
    return theta, binding
