"""Polynomial bases, quadrature rules and per-cell operator algebra.

Bases are orthonormal on the reference element (shifted Legendre on [0,1],
a Jacobi-type simplex basis on the unit triangle), so the reference mass
matrix is the identity and the physical one is a Jacobian multiple of it.
All operators here are reference-space objects shared by every cell of a
run; per-cell geometry enters only through affine factors.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import gamma as _gamma

import numpy as np
from numpy.polynomial import legendre as npleg
from scipy.special import eval_jacobi

from .errors import DgfvError, SubdivisionError
from .mesh import triangulate

# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


def gauss01(n):
    """n-point Gauss-Legendre rule on [0,1]; exact to degree 2n-1."""
    x, w = npleg.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


_TRI3 = np.array([[1 / 6, 1 / 6], [2 / 3, 1 / 6], [1 / 6, 2 / 3]])


def triangle_rule(degree):
    """Positive-weight rule on the unit triangle, exact to `degree`.

    Low degrees use the classical symmetric rules; higher degrees fall back
    to a collapsed-coordinate Gauss-Legendre product, which keeps all
    weights positive at any order.
    """
    if degree <= 1:
        return np.array([[1 / 3, 1 / 3]]), np.array([0.5])
    if degree == 2:
        return _TRI3.copy(), np.full(3, 1 / 6)
    nx = (degree + 3) // 2
    ny = (degree + 2) // 2
    x, wx = gauss01(nx)
    y, wy = gauss01(ny)
    X, Y = np.meshgrid(x, y, indexing="ij")
    pts = np.stack([X.ravel(), (Y * (1.0 - X)).ravel()], axis=1)
    w = (wx[:, None] * wy[None, :] * (1.0 - x)[:, None]).ravel()
    return pts, w


@dataclass(frozen=True)
class QuadratureRule:
    points: np.ndarray
    weights: np.ndarray
    exact_degree: int

    def __post_init__(self):
        if np.any(self.weights <= 0):
            raise DgfvError("quadrature weights must be positive")


def volume_rule(dim, degree):
    """Reference-element rule exact for all polynomials up to `degree`."""
    if dim == 1:
        n = degree // 2 + 1
        x, w = gauss01(n)
        rule = QuadratureRule(x[:, None], w, degree)
    else:
        pts, w = triangle_rule(degree)
        rule = QuadratureRule(pts, w, degree)
    _check_exactness(rule, dim)
    return rule


def _check_exactness(rule, dim, tol=1e-13):
    deg = rule.exact_degree
    pts, w = rule.points, rule.weights
    if dim == 1:
        for a in range(deg + 1):
            exact = 1.0 / (a + 1)
            got = np.sum(w * pts[:, 0] ** a)
            if abs(got - exact) > tol * max(1.0, abs(exact)):
                raise DgfvError(f"rule not exact for x^{a}")
    else:
        for a in range(deg + 1):
            for b in range(deg + 1 - a):
                exact = _gamma(a + 1) * _gamma(b + 1) / _gamma(a + b + 3)
                got = np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b)
                if abs(got - exact) > tol * max(1.0, abs(exact)):
                    raise DgfvError(f"rule not exact for x^{a} y^{b}")


def triangle_map_rule(tri, pts, w):
    """Map a unit-triangle rule onto an arbitrary triangle (3,2).

    The affine Jacobian equals twice the target area, so scaled weights sum
    to that area.
    """
    j = np.stack([tri[1] - tri[0], tri[2] - tri[0]], axis=1)
    det = j[0, 0] * j[1, 1] - j[0, 1] * j[1, 0]
    mapped = tri[0][None, :] + pts @ j.T
    return mapped, w * det


# ---------------------------------------------------------------------------
# orthonormal bases
# ---------------------------------------------------------------------------


def _jacobi_norm(n, alpha, beta):
    num = 2.0 ** (alpha + beta + 1) * _gamma(n + alpha + 1) * _gamma(n + beta + 1)
    den = (2 * n + alpha + beta + 1) * _gamma(n + alpha + beta + 1) * _gamma(n + 1)
    return np.sqrt(num / den)


def _jacobi(x, n, alpha, beta):
    return eval_jacobi(n, alpha, beta, x) / _jacobi_norm(n, alpha, beta)


def _djacobi(x, n, alpha, beta):
    if n == 0:
        return np.zeros_like(x)
    scale = np.sqrt(n * (n + alpha + beta + 1))
    return scale * _jacobi(x, n - 1, alpha + 1, beta + 1)


class PolynomialBasis:
    """Orthonormal modal basis of total degree <= k on the reference cell.

    1D: shifted Legendre on [0,1].  2D: warped Jacobi products on the unit
    triangle (0,0)-(1,0)-(0,1), ordered by total degree.  The first mode
    spans constants.
    """

    def __init__(self, dim, degree):
        self.dim = dim
        self.degree = degree
        if dim == 1:
            self.nk = degree + 1
            self.mode_orders = [(i,) for i in range(self.nk)]
        elif dim == 2:
            self.nk = (degree + 1) * (degree + 2) // 2
            self.mode_orders = [
                (d - n, n) for d in range(degree + 1) for n in range(d + 1)
            ]
        else:
            raise DgfvError("only 1D and 2D bases are supported")

    # 1D -------------------------------------------------------------------

    def _eval_1d(self, x):
        t = 2.0 * x[:, 0] - 1.0
        out = np.zeros((len(x), self.nk))
        for i in range(self.nk):
            c = np.zeros(i + 1)
            c[i] = 1.0
            out[:, i] = np.sqrt(2 * i + 1) * npleg.legval(t, c)
        return out

    def _grad_1d(self, x):
        t = 2.0 * x[:, 0] - 1.0
        out = np.zeros((len(x), self.nk, 1))
        for i in range(self.nk):
            c = np.zeros(i + 1)
            c[i] = 1.0
            out[:, i, 0] = 2.0 * np.sqrt(2 * i + 1) * npleg.legval(t, npleg.legder(c))
        return out

    # 2D -------------------------------------------------------------------

    @staticmethod
    def _collapsed(x):
        r = 2.0 * x[:, 0] - 1.0
        s = 2.0 * x[:, 1] - 1.0
        b = s
        denom = 1.0 - s
        safe = np.abs(denom) > 1e-14
        a = np.where(safe, 2.0 * (1.0 + r) / np.where(safe, denom, 1.0) - 1.0, -1.0)
        return a, b

    def _eval_2d(self, x):
        a, b = self._collapsed(x)
        out = np.zeros((len(x), self.nk))
        for idx, (m, n) in enumerate(self.mode_orders):
            fa = _jacobi(a, m, 0, 0)
            gb = _jacobi(b, n, 2 * m + 1, 0)
            out[:, idx] = 2.0 * np.sqrt(2.0) * fa * gb * (1.0 - b) ** m
        return out

    def _grad_2d(self, x):
        a, b = self._collapsed(x)
        out = np.zeros((len(x), self.nk, 2))
        for idx, (m, n) in enumerate(self.mode_orders):
            fa = _jacobi(a, m, 0, 0)
            dfa = _djacobi(a, m, 0, 0)
            gb = _jacobi(b, n, 2 * m + 1, 0)
            dgb = _djacobi(b, n, 2 * m + 1, 0)
            q = 1.0 - b
            if m == 0:
                dpsi_dr = np.zeros_like(a)
                dpsi_ds = fa * dgb
            else:
                qm1 = q ** (m - 1)
                dpsi_dr = 2.0 * dfa * gb * qm1
                dpsi_ds = (
                    dfa * gb * (1.0 + a) * qm1
                    + fa * (dgb * q**m - m * gb * qm1)
                )
            # d/dx = 2 d/dr, d/dy = 2 d/ds on top of the sqrt(2) mode scale
            out[:, idx, 0] = 2.0 * np.sqrt(2.0) * 2.0 * dpsi_dr
            out[:, idx, 1] = 2.0 * np.sqrt(2.0) * 2.0 * dpsi_ds
        return out

    def eval(self, points):
        points = np.atleast_2d(points)
        return self._eval_1d(points) if self.dim == 1 else self._eval_2d(points)

    def grad(self, points):
        points = np.atleast_2d(points)
        return self._grad_1d(points) if self.dim == 1 else self._grad_2d(points)


# ---------------------------------------------------------------------------
# per-cell operator algebra (reference-space representative)
# ---------------------------------------------------------------------------


class CellOperators:
    """Mass/projection/recovery algebra for one (subdivision, degree) pair.

    Conventions, with J the per-cell affine Jacobian determinant:
      * reference mass matrix is the identity, so M_cell = J * I;
      * ``project`` (moments -> submeans) and ``recover`` (least-squares
        inverse) are Jacobian-free;
      * the sub-resolution solve is Jacobian-free as well.
    """

    def __init__(self, subdiv, basis):
        if subdiv.dim != basis.dim:
            raise DgfvError("subdivision and basis dimensions differ")
        self.subdiv = subdiv
        self.basis = basis
        self.dim = basis.dim
        self.degree = basis.degree
        self.nk = basis.nk
        self.nsub = subdiv.nsub
        if self.nsub < self.nk:
            raise SubdivisionError("subdivision has fewer subcells than modes")
        self.volume = volume_rule(self.dim, 2 * self.degree)
        self.basis_at_volume = basis.eval(self.volume.points)
        self.grad_at_volume = basis.grad(self.volume.points)
        self._build_subcell_integrals()
        self._build_projection()
        self._build_traces()

    # -- integrals over subcell polygons ------------------------------------

    def _subcell_quadrature(self, m):
        """Points and weights covering subcell m of the reference cell."""
        sub = self.subdiv
        if self.dim == 1:
            a, b = sub.pieces[m][0][0, 0], sub.pieces[m][0][1, 0]
            x, w = gauss01(self.degree + 1)
            return (a + (b - a) * x)[:, None], (b - a) * w
        pts_ref, w_ref = triangle_rule(2 * self.degree)
        pts, ws = [], []
        for poly in sub.pieces[m]:
            for tri in triangulate(poly):
                p, w = triangle_map_rule(tri, pts_ref, w_ref)
                pts.append(p)
                ws.append(w)
        return np.vstack(pts), np.concatenate(ws)

    def _build_subcell_integrals(self):
        ns, nk, dim = self.nsub, self.nk, self.dim
        self.proj = np.zeros((ns, nk))             # (1/|S_m|) int_{S_m} sigma_p
        self.deriv_mean = np.zeros((dim, ns, nk))
        self.hess_mean = np.zeros((dim, dim, ns, nk))
        for m in range(ns):
            pts, w = self._subcell_quadrature(m)
            area = self.subdiv.areas[m]
            vals = self.basis.eval(pts)
            grads = self.basis.grad(pts)
            self.proj[m] = (w @ vals) / area
            for d in range(dim):
                self.deriv_mean[d, m] = (w @ grads[:, :, d]) / area
            # Hessian means by the divergence theorem over the subcell
            # boundary: mean of d2(sigma)/dxd dxe = (1/|S|) oint dsigma/dxd n_e
            self.hess_mean[:, :, m, :] = self._hessian_mean(m) / area

    def _hessian_mean(self, m):
        dim, nk = self.dim, self.nk
        acc = np.zeros((dim, dim, nk))
        if dim == 1:
            a = self.subdiv.pieces[m][0][0, 0]
            b = self.subdiv.pieces[m][0][1, 0]
            ga = self.basis.grad(np.array([[a]]))[0, :, 0]
            gb = self.basis.grad(np.array([[b]]))[0, :, 0]
            acc[0, 0] = gb - ga
            return acc
        x, w = gauss01(max(1, self.degree))
        for poly in self.subdiv.pieces[m]:
            nv = len(poly)
            for i in range(nv):
                p0, p1 = poly[i], poly[(i + 1) % nv]
                d = p1 - p0
                ln = np.hypot(d[0], d[1])
                if ln < 1e-14:
                    continue
                nrm = np.array([d[1], -d[0]]) / ln
                pts = p0[None, :] + x[:, None] * d[None, :]
                grads = self.basis.grad(pts)          # (g, nk, 2)
                seg = np.einsum("g,gpd->pd", w * ln, grads)
                for dd in range(2):
                    for ee in range(2):
                        acc[dd, ee] += seg[:, dd] * nrm[ee]
        return acc

    # -- projection / recovery ----------------------------------------------

    def _build_projection(self):
        p = self.proj
        gram = p.T @ p
        cond = np.linalg.cond(gram)
        if not np.isfinite(cond) or cond > 1e14:
            raise SubdivisionError(
                f"inadmissible subdivision: projection Gram matrix singular "
                f"(cond {cond:.2e})"
            )
        self.recovery = np.linalg.solve(gram, p.T)
        # sub-resolution moments: minimum-norm solve of (D P)^T v = V
        dp = self.subdiv.areas[:, None] * p
        self.subres = np.linalg.pinv(dp.T, rcond=1e-12)
        # cell-mean derivative operators (degree-2 detector runs cellwise)
        w, vals = self.volume.weights, self.basis_at_volume
        ref_vol = self.subdiv.areas.sum()
        self.cell_deriv_mean = np.einsum(
            "q,qpd->dp", w, self.grad_at_volume) / ref_vol
        self.cell_hess_mean = self._cell_hessian_mean() / ref_vol

    def _cell_hessian_mean(self):
        dim, nk = self.dim, self.nk
        acc = np.zeros((dim, dim, nk))
        if dim == 1:
            ga = self.basis.grad(np.array([[0.0]]))[0, :, 0]
            gb = self.basis.grad(np.array([[1.0]]))[0, :, 0]
            acc[0, 0] = gb - ga
            return acc
        corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
        x, w = gauss01(max(1, self.degree))
        for i in range(3):
            p0, p1 = corners[i], corners[(i + 1) % 3]
            d = p1 - p0
            ln = np.hypot(d[0], d[1])
            nrm = np.array([d[1], -d[0]]) / ln
            pts = p0[None, :] + x[:, None] * d[None, :]
            grads = self.basis.grad(pts)
            seg = np.einsum("g,gpd->pd", w * ln, grads)
            for dd in range(2):
                for ee in range(2):
                    acc[dd, ee] += seg[:, dd] * nrm[ee]
        return acc

    def project_to_submeans(self, moments):
        """Submean values of the polynomial with the given modal vector."""
        return np.einsum("mp,...p->...m", self.proj, moments)

    def recover_moments(self, submeans):
        """Least-squares modal vector reproducing the given submeans."""
        return np.einsum("pm,...m->...p", self.recovery, submeans)

    def subresolution_moments(self, proj_moments):
        """Sub-resolution coefficients of an L2-projected field.

        Solves the diagonal pairing system; for more subcells than modes the
        minimum-norm solution is returned.
        """
        return np.einsum("mp,...p->...m", self.subres, proj_moments)

    def l2_project(self, fn):
        """Modal vector of the reference-space L2 projection of `fn`."""
        vals = fn(self.volume.points)
        return np.einsum("q,qp,q...->p...", self.volume.weights,
                         self.basis_at_volume, np.asarray(vals))

    # -- traces --------------------------------------------------------------

    def _build_traces(self):
        """Basis values at the per-segment Gauss points of every local edge."""
        sub, k = self.subdiv, self.degree
        self.edge_gauss, self.edge_gauss_w = gauss01(k + 1)
        npts = len(self.edge_gauss)
        if self.dim == 1:
            rows = np.array([[0.0], [1.0]])
            self.trace_points = rows
            self.edge_offsets = [0, 1]
            self.points_per_edge = 1
            self.segment_slices = [[(0, 1)], [(1, 2)]]
        else:
            corners = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])
            pts = []
            self.edge_offsets = []
            self.segment_slices = []
            for e in range(3):
                self.edge_offsets.append(len(pts))
                a = corners[(0, 1, 2)[e]]
                b = corners[(1, 2, 0)[e]]
                slices = []
                for (owner, t0, t1) in sub.edge_segments[e]:
                    start = len(pts)
                    for g in self.edge_gauss:
                        t = t0 + (t1 - t0) * g
                        pts.append(a + t * (b - a))
                    slices.append((start, len(pts)))
                self.segment_slices.append(slices)
            self.trace_points = np.asarray(pts)
            self.points_per_edge = len(sub.edge_segments[0]) * npts
        self.trace_matrix = self.basis.eval(self.trace_points)

    def mass_matrix(self, jacobian=1.0):
        return jacobian * np.eye(self.nk)


def build_operators(subdiv, degree=None):
    """Convenience constructor pairing a subdivision with its basis."""
    k = subdiv.degree if degree is None else degree
    return CellOperators(subdiv, PolynomialBasis(subdiv.dim, k))
