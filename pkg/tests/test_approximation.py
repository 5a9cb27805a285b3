"""Bases, quadrature exactness, projection/recovery, sub-resolution solve."""

import numpy as np
import pytest

from dgfv.approximation import (
    CellOperators, PolynomialBasis, build_operators, gauss01, triangle_rule,
    volume_rule,
)
from dgfv.errors import DgfvError
from dgfv.mesh import build_subdivision


def _poly2d(coeffs):
    def fn(x):
        out = np.zeros(x.shape[:-1])
        for (a, b), c in coeffs.items():
            out += c * x[..., 0] ** a * x[..., 1] ** b
        return out
    return fn


# ---------------------------------------------------------------------------
# quadrature
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("degree", [1, 2, 3, 4, 6, 10, 12, 16])
def test_triangle_rule_exact_and_positive(degree):
    pts, w = triangle_rule(degree)
    assert np.all(w > 0)
    assert abs(w.sum() - 0.5) < 1e-14
    from math import factorial
    for a in range(degree + 1):
        for b in range(degree + 1 - a):
            exact = factorial(a) * factorial(b) / factorial(a + b + 2)
            got = np.sum(w * pts[:, 0] ** a * pts[:, 1] ** b)
            assert abs(got - exact) < 1e-13, (a, b)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 8])
def test_volume_rule_meets_mandated_degree(k):
    # volume rules must integrate degree 2k, edge rules degree 2k+1
    r2 = volume_rule(2, 2 * k)
    assert r2.exact_degree >= 2 * k
    x, w = gauss01(k + 1)
    for d in range(2 * k + 2):
        assert abs(np.sum(w * x**d) - 1.0 / (d + 1)) < 1e-13


# ---------------------------------------------------------------------------
# bases
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("dim,k", [(1, 3), (1, 8), (2, 2), (2, 5), (2, 8)])
def test_basis_orthonormal(dim, k):
    basis = PolynomialBasis(dim, k)
    rule = volume_rule(dim, 2 * k)
    v = basis.eval(rule.points)
    gram = np.einsum("q,qi,qj->ij", rule.weights, v, v)
    assert np.abs(gram - np.eye(basis.nk)).max() < 5e-14
    # first mode spans constants
    assert np.ptp(v[:, 0]) < 1e-13


def test_basis_gradients_match_difference_quotients():
    basis = PolynomialBasis(2, 4)
    pts = np.array([[0.31, 0.22], [0.05, 0.71], [0.45, 0.33]])
    g = basis.grad(pts)
    eps = 1e-7
    for d, e in ((0, np.array([1e-7, 0])), (1, np.array([0, 1e-7]))):
        fd = (basis.eval(pts + e) - basis.eval(pts - e)) / (2 * eps)
        assert np.abs(g[:, :, d] - fd).max() < 1e-6


def test_mass_matrix_is_jacobian_multiple():
    ops = build_operators(build_subdivision(2, "quad-tri", 3))
    np.testing.assert_allclose(ops.mass_matrix(2.5), 2.5 * np.eye(ops.nk))


# ---------------------------------------------------------------------------
# projection and recovery
# ---------------------------------------------------------------------------


def test_project_constant_reproduced():
    ops = build_operators(build_subdivision(2, "voronoi-type", 2))
    moments = np.zeros(ops.nk)
    moments[0] = 3.0 / ops.basis.eval(np.array([[0.3, 0.3]]))[0, 0]
    np.testing.assert_allclose(ops.project_to_submeans(moments), 3.0,
                               rtol=1e-13)


def test_project_linear_midpoint_means_1d():
    # u(x) = x on [0,1], two subcells: means 1/4 and 3/4
    ops = build_operators(build_subdivision(1, "1d-uniform", 1))
    moments = ops.l2_project(lambda p: p[:, 0])
    np.testing.assert_allclose(ops.project_to_submeans(moments),
                               [0.25, 0.75], atol=1e-14)


@pytest.mark.parametrize("scheme,k", [("quad-tri", 3), ("voronoi-type", 3),
                                      ("tri-uniform", 2)])
def test_project_matches_quadrature_oracle(scheme, k):
    rng = np.random.default_rng(3)
    sub = build_subdivision(2, scheme, k)
    ops = build_operators(sub)
    moments = rng.standard_normal(ops.nk)
    got = ops.project_to_submeans(moments)
    # independent high-order oracle over each subcell polygon
    from dgfv.approximation import triangle_map_rule
    from dgfv.mesh import triangulate
    pts_ref, w_ref = triangle_rule(2 * k + 4)
    for m in range(sub.nsub):
        total = 0.0
        for poly in sub.pieces[m]:
            for tri in triangulate(poly):
                p, w = triangle_map_rule(tri, pts_ref, w_ref)
                total += np.sum(w * (ops.basis.eval(p) @ moments))
        assert abs(got[m] - total / sub.areas[m]) < 1e-12


@pytest.mark.parametrize("scheme,k", [("quad-tri", 2), ("voronoi-type", 3),
                                      ("tri-uniform", 3), ("quad-tri", 5)])
def test_recover_project_roundtrip(scheme, k):
    rng = np.random.default_rng(11)
    ops = build_operators(build_subdivision(2, scheme, k))
    moments = rng.standard_normal(ops.nk)
    sub = ops.project_to_submeans(moments)
    np.testing.assert_allclose(ops.recover_moments(sub), moments, atol=1e-11)


def test_recover_square_case_matches_direct_inverse():
    # N_s = N_k: least squares reduces to the exact inverse
    rng = np.random.default_rng(5)
    ops = build_operators(build_subdivision(2, "quad-tri", 2))
    assert ops.nsub == ops.nk
    sub = rng.standard_normal(ops.nsub)
    direct = np.linalg.solve(ops.proj, sub)
    np.testing.assert_allclose(ops.recover_moments(sub), direct, atol=1e-12)


def test_recover_overdetermined_normal_equations():
    # N_s > N_k: residual orthogonal to the projection range
    rng = np.random.default_rng(6)
    ops = build_operators(build_subdivision(2, "tri-uniform", 2))
    assert ops.nsub > ops.nk
    sub = rng.standard_normal(ops.nsub)
    mom = ops.recover_moments(sub)
    resid = ops.proj @ mom - sub
    assert np.abs(ops.proj.T @ resid).max() < 1e-11
    # oracle: lstsq solution minimizes the same functional
    ref = np.linalg.lstsq(ops.proj, sub, rcond=None)[0]
    np.testing.assert_allclose(mom, ref, atol=1e-11)


# ---------------------------------------------------------------------------
# sub-resolution moments
# ---------------------------------------------------------------------------


def test_subresolution_constant():
    ops = build_operators(build_subdivision(2, "quad-tri", 3))
    const = 2.75
    moments = ops.l2_project(lambda p: np.full(len(p), const))
    np.testing.assert_allclose(ops.subresolution_moments(moments), const,
                               rtol=1e-12)


def test_subresolution_square_case_dense_oracle():
    rng = np.random.default_rng(8)
    ops = build_operators(build_subdivision(1, "1d-uniform", 1))
    moments = rng.standard_normal(ops.nk)
    got = ops.subresolution_moments(moments)
    dp = ops.subdiv.areas[:, None] * ops.proj
    ref = np.linalg.solve(dp.T, moments)
    np.testing.assert_allclose(got, ref, atol=1e-12)


@pytest.mark.parametrize("scheme,k", [("quad-tri", 3), ("tri-uniform", 2)])
def test_subresolution_total_integral(scheme, k):
    # summing |S_m| vlow_m recovers the integral of the projected field
    rng = np.random.default_rng(9)
    ops = build_operators(build_subdivision(2, scheme, k))
    moments = rng.standard_normal(ops.nk)
    vlow = ops.subresolution_moments(moments)
    total = np.sum(ops.subdiv.areas * vlow)
    rule = ops.volume
    field = ops.basis.eval(rule.points) @ moments
    ref = np.sum(rule.weights * field)
    assert abs(total - ref) < 1e-12


def test_l2_projection_identity_for_polynomials():
    ops = build_operators(build_subdivision(2, "quad-tri", 3))
    rng = np.random.default_rng(13)
    moments = rng.standard_normal(ops.nk)
    projected = ops.l2_project(lambda p: ops.basis.eval(p) @ moments)
    np.testing.assert_allclose(projected, moments, atol=1e-13)


def test_l2_projection_nonpolynomial_oracle():
    # oversampled quadrature reference for a transcendental integrand; the
    # difference is the quadrature error of the mandated 2k rule
    ops = build_operators(build_subdivision(2, "quad-tri", 5))
    fn = lambda p: np.arctan(0.8 * (p[..., 0] - p[..., 1]))
    got = ops.l2_project(lambda p: fn(p))
    pts, w = triangle_rule(2 * ops.degree + 12)
    ref = np.einsum("q,qp->p", w * fn(pts), ops.basis.eval(pts))
    assert np.abs(got - ref).max() < 1e-4


def test_quadrature_negative_weights_rejected():
    from dgfv.approximation import QuadratureRule
    with pytest.raises(DgfvError):
        QuadratureRule(np.array([[0.5]]), np.array([-1.0]), 1)
