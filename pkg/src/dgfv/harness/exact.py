"""Reference solutions: scalar Riemann fans by flux envelopes, the exact
gamma-law Riemann solver, the isentropic characteristic solution, and a
first-order finite-volume oracle for cases without closed forms."""

from __future__ import annotations

import numpy as np
from scipy.optimize import brentq

from ..errors import DgfvError

# ---------------------------------------------------------------------------
# scalar Riemann problem via convex/concave envelopes
# ---------------------------------------------------------------------------


def scalar_riemann_fan(law, ul, ur, nsample=4001):
    """Entropy solution u(x/t) of a scalar 1D Riemann problem.

    Increasing data follow the lower convex envelope of the flux between
    the states, decreasing data the upper concave envelope; envelope
    chords are shocks, runs along the flux graph are rarefactions.
    Returns a vectorized callable of the similarity variable x/t.
    """
    if ul == ur:
        return lambda xi: np.full_like(np.asarray(xi, dtype=float), ul)
    lo, hi = min(ul, ur), max(ul, ur)
    us = np.linspace(lo, hi, nsample)
    fs = law.flux(us[:, None])[:, 0, 0]
    increasing = ul < ur

    # monotone-chain envelope over the sampled graph
    keep = []
    for i in range(nsample):
        while len(keep) >= 2:
            x1, y1 = us[keep[-2]], fs[keep[-2]]
            x2, y2 = us[keep[-1]], fs[keep[-1]]
            x3, y3 = us[i], fs[i]
            cross = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
            if (cross <= 0 and increasing) or (cross >= 0 and not increasing):
                keep.pop()
            else:
                break
        keep.append(i)
    uh, fh = us[keep], fs[keep]
    slopes = np.diff(fh) / np.diff(uh)
    # wave fan: traverse from the left state; for decreasing data the left
    # state is the upper envelope end at u = hi
    if increasing:
        u_seq = np.repeat(uh, 2)[1:-1].reshape(-1, 2)
        s_seq = slopes
    else:
        u_seq = np.repeat(uh[::-1], 2)[1:-1].reshape(-1, 2)
        s_seq = slopes[::-1]
    order = np.argsort(s_seq, kind="stable")
    s_seq = s_seq[order]
    u_seq = u_seq[order]
    s_flat = np.repeat(s_seq, 2)
    u_flat = u_seq.reshape(-1)
    u_left = ul if increasing else ul
    u_right = ur

    def fan(xi):
        xi = np.asarray(xi, dtype=float)
        out = np.interp(xi, s_flat, u_flat,
                        left=u_left, right=u_right)
        return out

    return fan


# ---------------------------------------------------------------------------
# exact gamma-law Riemann solver (pressure-function iteration)
# ---------------------------------------------------------------------------


class EulerRiemannExact:
    """Exact solution of the 1D gamma-law Riemann problem.

    States are primitive (rho, u, p).  `sample(xi)` evaluates the
    self-similar solution at xi = (x - x0)/t and returns (rho, u, p).
    """

    def __init__(self, left, right, gas_gamma=1.4):
        self.g = g = float(gas_gamma)
        self.rl, self.ul, self.pl = left
        self.rr, self.ur, self.pr = right
        self.cl = np.sqrt(g * self.pl / self.rl)
        self.cr = np.sqrt(g * self.pr / self.rr)
        if 2.0 * (self.cl + self.cr) / (g - 1.0) <= self.ur - self.ul:
            raise DgfvError("vacuum-generating Riemann data")
        self.pstar, self.ustar = self._solve_star()

    def _f_side(self, p, rho_k, p_k, c_k):
        g = self.g
        if p > p_k:
            a = 2.0 / ((g + 1.0) * rho_k)
            b = (g - 1.0) / (g + 1.0) * p_k
            return (p - p_k) * np.sqrt(a / (p + b))
        return 2.0 * c_k / (g - 1.0) * ((p / p_k) ** ((g - 1.0) / (2 * g)) - 1.0)

    def _solve_star(self):
        du = self.ur - self.ul

        def f(p):
            return (self._f_side(p, self.rl, self.pl, self.cl)
                    + self._f_side(p, self.rr, self.pr, self.cr) + du)

        p_lo, p_hi = 1e-12 * min(self.pl, self.pr), 10.0 * max(self.pl, self.pr)
        while f(p_hi) < 0:
            p_hi *= 10.0
        pstar = brentq(f, p_lo, p_hi, xtol=1e-15, rtol=1e-14)
        ustar = 0.5 * (self.ul + self.ur) + 0.5 * (
            self._f_side(pstar, self.rr, self.pr, self.cr)
            - self._f_side(pstar, self.rl, self.pl, self.cl))
        return pstar, ustar

    def sample(self, xi):
        xi = np.asarray(xi, dtype=float)
        g, ps, us = self.g, self.pstar, self.ustar
        rho = np.empty_like(xi)
        vel = np.empty_like(xi)
        prs = np.empty_like(xi)
        gm, gp = g - 1.0, g + 1.0

        left = xi <= us
        # left side
        if ps > self.pl:            # left shock
            rsl = self.rl * ((ps / self.pl + gm / gp) / (gm / gp * ps / self.pl + 1))
            sl = self.ul - self.cl * np.sqrt((gp * ps / self.pl + gm) / (2 * g))
            pre = xi < sl
            rho[left] = np.where(pre[left], self.rl, rsl)
            vel[left] = np.where(pre[left], self.ul, us)
            prs[left] = np.where(pre[left], self.pl, ps)
        else:                       # left rarefaction
            cs = self.cl * (ps / self.pl) ** (gm / (2 * g))
            head, tail = self.ul - self.cl, us - cs
            inside = (xi >= head) & (xi <= tail)
            c = gm / gp * (self.ul - xi) + 2.0 / gp * self.cl
            pre = xi < head
            rho[left] = np.where(
                pre, self.rl,
                np.where(inside, self.rl * (c / self.cl) ** (2 / gm),
                         self.rl * (ps / self.pl) ** (1 / g)))[left]
            vel[left] = np.where(pre, self.ul, np.where(inside, xi + c, us))[left]
            prs[left] = np.where(
                pre, self.pl,
                np.where(inside, self.pl * (c / self.cl) ** (2 * g / gm), ps))[left]

        rgt = ~left
        if ps > self.pr:            # right shock
            rsr = self.rr * ((ps / self.pr + gm / gp) / (gm / gp * ps / self.pr + 1))
            sr = self.ur + self.cr * np.sqrt((gp * ps / self.pr + gm) / (2 * g))
            post = xi > sr
            rho[rgt] = np.where(post[rgt], self.rr, rsr)
            vel[rgt] = np.where(post[rgt], self.ur, us)
            prs[rgt] = np.where(post[rgt], self.pr, ps)
        else:                       # right rarefaction
            cs = self.cr * (ps / self.pr) ** (gm / (2 * g))
            head, tail = self.ur + self.cr, us + cs
            inside = (xi >= tail) & (xi <= head)
            c = gm / gp * (xi - self.ur) + 2.0 / gp * self.cr
            post = xi > head
            rho[rgt] = np.where(
                post, self.rr,
                np.where(inside, self.rr * (c / self.cr) ** (2 / gm),
                         self.rr * (ps / self.pr) ** (1 / g)))[rgt]
            vel[rgt] = np.where(post, self.ur, np.where(inside, xi - c, us))[rgt]
            prs[rgt] = np.where(
                post, self.pr,
                np.where(inside, self.pr * (c / self.cr) ** (2 * g / gm), ps))[rgt]
        return rho, vel, prs

    def conserved(self, xi, law):
        rho, vel, prs = self.sample(xi)
        return law.primitive_to_conserved(rho, vel[..., None], prs)


# ---------------------------------------------------------------------------
# smooth isentropic flow, gamma = 3 (decoupled characteristic equations)
# ---------------------------------------------------------------------------


class IsentropicExact:
    """gamma=3 isentropic solution: both Riemann invariants obey Burgers.

    The initial invariants are +-sqrt(3) rho0(x); each is transported at
    its own value and resolved pointwise by Newton iteration (valid until
    characteristic crossing).
    """

    def __init__(self, rho0, period=2.0):
        self.rho0 = rho0
        self.period = period

    def _invariant(self, sign, x, t):
        w = sign * np.sqrt(3.0) * self.rho0(x)
        for _ in range(100):
            x0 = x - w * t
            w_new = sign * np.sqrt(3.0) * self.rho0(x0)
            if np.max(np.abs(w_new - w)) < 1e-14:
                w = w_new
                break
            w = 0.5 * (w + w_new)
        return w

    def primitives(self, x, t):
        wp = self._invariant(+1.0, x, t)
        wm = self._invariant(-1.0, x, t)
        vel = 0.5 * (wp + wm)
        c = 0.5 * (wp - wm)
        rho = c / np.sqrt(3.0)
        return rho, vel, rho**3

    def conserved(self, x, t, law):
        rho, vel, prs = self.primitives(x, t)
        return law.primitive_to_conserved(rho, vel[..., None], prs)


# ---------------------------------------------------------------------------
# fine-grid first-order FV oracle (1D scalar)
# ---------------------------------------------------------------------------


def fv_reference_1d(law, u0, a, b, t_end, ncells=8000, cfl=0.45,
                    bc="outflow"):
    """First-order viscosity-flux solution on a fine uniform 1D grid.

    Returns (cell centers, cell means) at t_end; the workhorse reference
    for non-convex scalar cases whose waves interact.
    """
    x_edges = np.linspace(a, b, ncells + 1)
    xc = 0.5 * (x_edges[:-1] + x_edges[1:])
    h = (b - a) / ncells
    u = np.array([
        np.mean(u0(np.linspace(x_edges[i], x_edges[i + 1], 5)))
        for i in range(ncells)
    ])
    t = 0.0
    n = np.ones((1, 1))
    while t < t_end - 1e-14:
        if bc == "periodic":
            ul = np.concatenate([[u[-1]], u])
            ur = np.concatenate([u, [u[0]]])
        else:
            ul = np.concatenate([[u[0]], u])
            ur = np.concatenate([u, [u[-1]]])
        gam = law.max_wavespeed(ul[:, None], ur[:, None], n)
        dt = min(cfl * h / max(gam.max(), 1e-300), t_end - t)
        fl = law.flux(ul[:, None])[:, 0, 0]
        fr = law.flux(ur[:, None])[:, 0, 0]
        fnum = 0.5 * (fl + fr) - 0.5 * gam * (ur - ul)
        u = u - dt / h * (fnum[1:] - fnum[:-1])
        t += dt
    return xc, u
