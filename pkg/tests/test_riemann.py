"""Numerical fluxes, intermediate states, entropy fluxes and diagnostics."""

import numpy as np
import pytest

from dgfv.errors import ConfigError, DgfvError
from dgfv.physics import make_entropy_pair, make_law
from dgfv.riemann import (
    FluxFunction, blended_intermediate_states, einfeldt_speeds,
    entropy_dissipation_coefficient, hll_flux, hllc_flux, intermediate_state,
    numerical_entropy_flux, side_states, tadmor_entropy_flux, viscosity_flux,
)

N1 = np.array([1.0])


def _sod_states(law):
    ul = law.primitive_to_conserved(1.0, [0.0], 1.0)
    ur = law.primitive_to_conserved(0.125, [0.0], 0.1)
    return ul, ur


# ---------------------------------------------------------------------------
# viscosity flux
# ---------------------------------------------------------------------------


def test_viscosity_flux_consistency_and_conservativity():
    law = make_law("burgers-1d")
    rng = np.random.default_rng(0)
    u = rng.uniform(-2, 2, (50, 1))
    v = rng.uniform(-2, 2, (50, 1))
    g = law.max_wavespeed(u, v, N1)
    f_uu = viscosity_flux(law, u, u, N1, g)
    np.testing.assert_allclose(f_uu, 0.5 * u[:, 0:1] ** 2, atol=1e-12)
    f_lr = viscosity_flux(law, u, v, N1, g)
    f_rl = viscosity_flux(law, v, u, -N1, g)
    np.testing.assert_allclose(f_lr, -f_rl, atol=1e-13)


def test_viscosity_flux_upwind_limit():
    law = make_law("advection-1d")
    f = viscosity_flux(law, np.array([2.0]), np.array([0.0]), N1, 1.0)
    assert abs(f[0] - 2.0) < 1e-14


def test_viscosity_flux_burgers_hand_value():
    law = make_law("burgers-1d")
    f = viscosity_flux(law, np.array([1.0]), np.array([-1.0]), N1, 1.0)
    assert abs(f[0] - 1.5) < 1e-14


def test_eflux_property_randomized():
    # deviation from any intermediate physical flux opposes the jump sign
    rng = np.random.default_rng(1)
    for name in ("burgers-1d", "buckley-1d"):
        law = make_law(name)
        for _ in range(150):
            a, b = rng.uniform(-2.5, 2.5, 2)
            ul, ur = np.array([a]), np.array([b])
            g = law.max_wavespeed(ul, ur, N1)
            f = viscosity_flux(law, ul, ur, N1, g)[0]
            w = np.linspace(a, b, 60)
            fw = law.flux(w[:, None])[:, 0, 0]
            assert np.all((f - fw) * np.sign(b - a) <= 1e-11)


# ---------------------------------------------------------------------------
# intermediate states
# ---------------------------------------------------------------------------


def test_intermediate_state_equal_states():
    law = make_law("burgers-1d")
    u = np.array([0.7])
    np.testing.assert_allclose(
        intermediate_state(law, u, u, N1, 1.0), u, atol=1e-15)


def test_intermediate_state_advection_upwind():
    law = make_law("advection-1d")
    ul, ur = np.array([2.0]), np.array([-1.0])
    np.testing.assert_allclose(
        intermediate_state(law, ul, ur, N1, 1.0), ul, atol=1e-15)


def test_intermediate_state_containment_randomized():
    rng = np.random.default_rng(2)
    law = make_law("burgers-1d")
    a = rng.uniform(-3, 3, 100_000)
    b = rng.uniform(-3, 3, 100_000)
    g = law.max_wavespeed(a[:, None], b[:, None], N1)
    us = intermediate_state(law, a[:, None], b[:, None], N1, g)[:, 0]
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    assert np.all(us >= lo - 1e-12)
    assert np.all(us <= hi + 1e-12)


def test_blended_states_shift():
    us = np.array([[0.5]])
    df = np.array([[1.0]])
    um, up = blended_intermediate_states(us, df, 1.0, 1.0)
    np.testing.assert_allclose(um, [[-0.5]])
    np.testing.assert_allclose(up, [[1.5]])
    um, up = blended_intermediate_states(us, df, 1.0, 0.0)
    np.testing.assert_allclose(um, us)
    np.testing.assert_allclose(up, us)


def test_side_states_match_single_state_for_viscosity():
    law = make_law("burgers-1d")
    ul, ur = np.array([[1.3]]), np.array([[-0.4]])
    g = law.max_wavespeed(ul, ur, N1)
    f = viscosity_flux(law, ul, ur, N1, g)
    um, up = side_states(law, ul, ur, N1, f, g)
    us = intermediate_state(law, ul, ur, N1, g)
    np.testing.assert_allclose(um, us, atol=1e-14)
    np.testing.assert_allclose(up, us, atol=1e-14)


# ---------------------------------------------------------------------------
# HLL / HLLC
# ---------------------------------------------------------------------------


def test_hll_consistency():
    law = make_law("euler-1d")
    u = law.primitive_to_conserved(1.0, [0.3], 2.0)
    f, sl, sr = hll_flux(law, u, u, N1)
    ref = np.sum(law.flux(u) * N1, axis=-1)
    np.testing.assert_allclose(f, ref, atol=1e-12)


def test_hll_sod_states_formula_oracle():
    law = make_law("euler-1d")
    ul, ur = _sod_states(law)
    f, sl, sr = hll_flux(law, ul, ur, N1)
    fl = np.sum(law.flux(ul) * N1, axis=-1)
    fr = np.sum(law.flux(ur) * N1, axis=-1)
    assert sl < 0 < sr
    ref = (sr * fl - sl * fr + sl * sr * (ur - ul)) / (sr - sl)
    np.testing.assert_allclose(f, ref, atol=1e-12)


def test_hllc_preserves_stationary_contact():
    law = make_law("euler-1d")
    ul = law.primitive_to_conserved(1.0, [0.0], 1.0)
    ur = law.primitive_to_conserved(0.4, [0.0], 1.0)
    f_hllc, _, _ = hllc_flux(law, ul, ur, N1)
    f_hll, _, _ = hll_flux(law, ul, ur, N1)
    assert abs(f_hllc[0]) < 1e-12            # no mass flux across the contact
    assert abs(f_hll[0]) > 1e-3


def test_hll_conservativity_2d():
    law = make_law("euler-2d")
    rng = np.random.default_rng(3)
    n = np.array([0.6, 0.8])
    ul = law.primitive_to_conserved(1.2, [0.4, -0.1], 0.9)
    ur = law.primitive_to_conserved(0.7, [-0.2, 0.5], 1.4)
    f1, _, _ = hll_flux(law, ul, ur, n)
    f2, _, _ = hll_flux(law, ur, ul, -n)
    np.testing.assert_allclose(f1, -f2, atol=1e-12)
    f1, _, _ = hllc_flux(law, ul, ur, n)
    f2, _, _ = hllc_flux(law, ur, ul, -n)
    np.testing.assert_allclose(f1, -f2, atol=1e-12)


def test_hll_scalar_rejected():
    with pytest.raises(ConfigError):
        hll_flux(make_law("burgers-1d"), np.array([1.0]), np.array([0.0]), N1)


def test_flux_function_exposes_speed_bound():
    law = make_law("euler-1d")
    ul, ur = _sod_states(law)
    for kind in ("hll", "hllc"):
        f, gamma = FluxFunction(kind)(law, ul, ur, N1)
        sl, sr = einfeldt_speeds(law, ul, ur, N1)
        np.testing.assert_allclose(gamma, max(abs(sl), abs(sr)))


def test_hll_side_states_admissible_randomized():
    law = make_law("euler-1d")
    rng = np.random.default_rng(4)
    m = 20_000
    ul = law.primitive_to_conserved(
        rng.uniform(0.05, 3, m), rng.uniform(-2, 2, (m, 1)),
        rng.uniform(0.05, 3, m))
    ur = law.primitive_to_conserved(
        rng.uniform(0.05, 3, m), rng.uniform(-2, 2, (m, 1)),
        rng.uniform(0.05, 3, m))
    for kind in ("hll", "rusanov"):
        f, g, fl, fr = FluxFunction(kind).evaluate(law, ul, ur, N1)
        um, up = side_states(law, ul, ur, N1, f, g, fl=fl, fr=fr)
        assert np.all(law.admissible(um))
        assert np.all(law.admissible(up))


# ---------------------------------------------------------------------------
# entropy fluxes
# ---------------------------------------------------------------------------


def test_numerical_entropy_flux_consistency():
    law = make_law("burgers-1d")
    pair = make_entropy_pair(law, "square")
    u = np.array([[0.8]])
    got = numerical_entropy_flux(u, u, N1, pair, 1.0)
    np.testing.assert_allclose(got, pair.phi(u)[..., 0], atol=1e-14)


def test_numerical_entropy_flux_upwind_value():
    # advection, square entropy, gamma = 1: pure upwind entropy transport
    law = make_law("advection-1d")
    pair = make_entropy_pair(law, "square")
    ul, ur = np.array([[0.9]]), np.array([[0.2]])
    got = numerical_entropy_flux(ul, ur, N1, pair, 1.0)
    assert abs(got[0] - 0.5 * 0.9**2) < 1e-14


def test_tadmor_entropy_flux_consistency_and_symmetry():
    law = make_law("burgers-1d")
    pair = make_entropy_pair(law, "square")
    u = np.array([[1.1]])
    f = viscosity_flux(law, u, u, N1, 1.0)
    got = tadmor_entropy_flux(u, u, N1, pair, f)
    np.testing.assert_allclose(got, pair.phi(u)[..., 0], atol=1e-13)
    ul, ur = np.array([[0.4]]), np.array([[-0.9]])
    fc = 0.5 * (law.flux(ul) + law.flux(ur))[..., 0, :].sum(axis=-1)[..., None]
    a = tadmor_entropy_flux(ul, ur, N1, pair, fc)
    b = tadmor_entropy_flux(ur, ul, -N1, pair, -fc)
    np.testing.assert_allclose(a, -b, atol=1e-13)


def test_tadmor_inequality_for_eflux_randomized():
    rng = np.random.default_rng(5)
    law = make_law("burgers-1d")
    for ent, params in (("square", {}), ("smoothed-kruzkov", {"ke": 0.1}),
                        ("atan-mollified", {})):
        pair = make_entropy_pair(law, ent, **params)
        a = rng.uniform(-2.5, 2.5, 3000)
        b = rng.uniform(-2.5, 2.5, 3000)
        ul, ur = a[:, None], b[:, None]
        g = law.max_wavespeed(ul, ur, N1)
        f = viscosity_flux(law, ul, ur, N1, g)
        dv = pair.v(ur)[:, 0] - pair.v(ul)[:, 0]
        dpsi = (pair.psi(ur) - pair.psi(ul))[:, 0]
        assert np.all(f[:, 0] * dv <= dpsi + 1e-10)


def test_entropy_dissipation_coefficient_advection():
    # v = u reduces the coefficient to gamma itself
    law = make_law("advection-1d")
    pair = make_entropy_pair(law, "square")
    d = entropy_dissipation_coefficient(
        np.array([[0.3]]), np.array([[0.9]]), N1, pair, 1.0)
    np.testing.assert_allclose(d, 1.0, atol=1e-10)


def test_entropy_dissipation_negative_when_underresolved():
    # halving gamma below the wave-speed bound can push D negative
    law = make_law("burgers-1d")
    pair = make_entropy_pair(law, "square")
    ul, ur = np.array([[2.0]]), np.array([[-1.9]])
    g = float(law.max_wavespeed(ul, ur, N1)[0])
    d_ok = entropy_dissipation_coefficient(ul, ur, N1, pair, g)
    d_low = entropy_dissipation_coefficient(ul, ur, N1, pair, 0.5 * g)
    assert d_ok >= -1e-12
    assert d_low < d_ok


def test_entropy_dissipation_rejects_equal_states():
    law = make_law("burgers-1d")
    pair = make_entropy_pair(law, "square")
    with pytest.raises(DgfvError):
        entropy_dissipation_coefficient(
            np.array([[0.5]]), np.array([[0.5]]), N1, pair, 1.0)


def test_jensen_consistency_randomized():
    # eta(u*) <= mean entropy minus entropy-flux jump over 2 gamma
    rng = np.random.default_rng(6)
    law = make_law("burgers-1d")
    pair = make_entropy_pair(law, "square")
    a = rng.uniform(-2, 2, 5000)
    b = rng.uniform(-2, 2, 5000)
    ul, ur = a[:, None], b[:, None]
    g = np.maximum(law.max_wavespeed(ul, ur, N1), 1e-12)
    us = intermediate_state(law, ul, ur, N1, g)
    lhs = pair.eta(us)
    dphi = (pair.phi(ur) - pair.phi(ul))[:, 0]
    rhs = 0.5 * (pair.eta(ul) + pair.eta(ur)) - dphi / (2 * g)
    assert np.all(lhs <= rhs + 1e-11)
