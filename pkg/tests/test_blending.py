"""Blending coefficient strategies: formulas, replay invariants, knapsack,
smootheners and composition."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from dgfv.blending import (
    compose, knapsack_greedy, smoothen, subcell_theta, theta_entropy_any,
    theta_entropy_tadmor, theta_gmp, theta_lmp, theta_positivity_euler,
)
from dgfv.mesh import SubcellTopology, build_subdivision, interval_mesh
from dgfv.physics import make_entropy_pair, make_law
from dgfv.riemann import blended_intermediate_states, side_states, viscosity_flux

N1 = np.array([1.0])


# ---------------------------------------------------------------------------
# entropy strategy n°1 (any entropy)
# ---------------------------------------------------------------------------


def test_entropy_any_inactive_when_signs_oppose():
    ul, ur = np.array([[0.0]]), np.array([[1.0]])
    th = theta_entropy_any(ul, ur, np.array([[-0.5]]), 2.0, 1.0)
    assert th == 1.0


def test_entropy_any_zero_at_tight_coefficient():
    # local coefficient equals the bound: activation forces theta to zero
    ul, ur = np.array([[0.0]]), np.array([[1.0]])
    th = theta_entropy_any(ul, ur, np.array([[0.5]]), 1.0, 1.0)
    assert th == 0.0


def test_entropy_any_formula_value():
    ul, ur = np.array([[0.0]]), np.array([[1.0]])
    th = theta_entropy_any(ul, ur, np.array([[1.0]]), 2.0, 1.0)
    assert abs(th - 0.5) < 1e-14


def test_entropy_any_restores_effective_viscosity():
    rng = np.random.default_rng(0)
    law = make_law("burgers-1d")
    for _ in range(300):
        a, b = rng.uniform(-2, 2, 2)
        ul, ur = np.array([[a]]), np.array([[b]])
        gmax = law.max_wavespeed(ul, ur, N1)
        gamma = gmax * rng.uniform(1.0, 2.0)
        df = np.array([[rng.uniform(-1, 1)]])
        th = theta_entropy_any(ul, ur, df, gamma, gmax)
        if abs(b - a) > 1e-8:
            eff = gamma - 2.0 * th * df[0, 0] / (b - a)
            assert eff >= gmax - 1e-9


# ---------------------------------------------------------------------------
# entropy strategy n°2 (Tadmor)
# ---------------------------------------------------------------------------


def test_entropy_tadmor_idle_on_equal_entropy_variables():
    law = make_law("burgers-1d")
    pair = make_entropy_pair(law, "square")
    u = np.array([[0.4]])
    th = theta_entropy_tadmor(u, u, np.array([[0.08]]), np.array([[1.0]]),
                              N1, pair)
    assert th == 1.0


def test_entropy_tadmor_replay_randomized():
    rng = np.random.default_rng(1)
    law = make_law("burgers-1d")
    pair = make_entropy_pair(law, "square")
    m = 4000
    ul = rng.uniform(-2, 2, (m, 1))
    ur = rng.uniform(-2, 2, (m, 1))
    g = law.max_wavespeed(ul, ur, N1)
    ffv = viscosity_flux(law, ul, ur, N1, g)
    # synthetic high-order increments
    df = rng.uniform(-0.5, 0.5, (m, 1))
    th = theta_entropy_tadmor(ul, ur, ffv, df, N1, pair)
    blended = ffv + th[:, None] * df
    dv = pair.v(ur)[:, 0] - pair.v(ul)[:, 0]
    dpsi = (pair.psi(ur) - pair.psi(ul))[:, 0]
    assert np.all(blended[:, 0] * dv <= dpsi + 1e-10)


def test_entropy_tadmor_advection_clips_to_central_value():
    # square entropy + advection: the bound lands on the entropy-
    # conservative central flux
    law = make_law("advection-1d")
    pair = make_entropy_pair(law, "square")
    ul, ur = np.array([[1.0]]), np.array([[0.0]])
    g = np.array([1.0])
    ffv = viscosity_flux(law, ul, ur, N1, g)          # upwind: 1.0
    # psi = a u^2/2: (dpsi/dv).n = (0 - 0.5)/(0-1) = 0.5 = central flux
    df = np.array([[-0.4]])                           # pushes toward central
    th = theta_entropy_tadmor(ul, ur, ffv, df, N1, pair)
    blended = ffv + th * df
    assert blended[0, 0] >= 0.5 - 1e-12


# ---------------------------------------------------------------------------
# knapsack
# ---------------------------------------------------------------------------


def test_knapsack_all_nonpositive_costs():
    th = knapsack_greedy(np.array([-1.0, 0.0, -3.0]), 1.0, 1.0)
    np.testing.assert_allclose(th, 1.0)


def test_knapsack_toy_instance_matches_lp():
    costs = np.array([2.0, -1.0, 3.0])
    th = knapsack_greedy(costs, 4.0, 1.0)
    res = linprog(-np.ones(3), A_ub=[costs], b_ub=[4.0], bounds=[(0, 1)] * 3)
    assert abs(th.sum() - (-res.fun)) < 1e-9
    assert costs @ th <= 4.0 + 1e-12
    np.testing.assert_allclose(th, [1.0, 1.0, 1.0])   # slack covers all


def test_knapsack_binding_budget():
    costs = np.array([1.0, 2.0])
    th = knapsack_greedy(costs, 1.5, 1.0)
    np.testing.assert_allclose(th, [1.0, 0.25])
    assert abs(costs @ th - 1.5) < 1e-12


def test_knapsack_randomized_against_lp():
    rng = np.random.default_rng(2)
    for _ in range(400):
        m = rng.integers(1, 13)
        costs = rng.uniform(-2, 3, m)
        caps = rng.uniform(0.2, 1.0, m)
        budget = abs(rng.uniform(0, 2))
        th = knapsack_greedy(costs, budget, caps)
        assert np.all(th >= -1e-15) and np.all(th <= caps + 1e-15)
        assert costs @ th <= budget + 1e-9 * max(1.0, abs(budget))
        res = linprog(-np.ones(m), A_ub=[costs], b_ub=[budget],
                      bounds=list(zip(np.zeros(m), caps)), method="highs")
        assert res.success
        assert th.sum() >= -res.fun - 1e-9


def test_knapsack_tie_break_is_deterministic():
    costs = np.array([1.0, 1.0, 1.0])
    th = knapsack_greedy(costs, 1.0, 1.0, order=np.array([5, 1, 3]))
    np.testing.assert_allclose(th, [0.0, 1.0, 0.0])


# ---------------------------------------------------------------------------
# maximum principles
# ---------------------------------------------------------------------------


def test_gmp_idle_on_zero_increment():
    th = theta_gmp(np.array([0.5]), np.array([0.5]), np.array([0.0]),
                   np.array([1.0]), 0.0, 1.0)
    assert th == 1.0


def test_gmp_formula_and_replay():
    us = np.array([0.5])
    df = np.array([0.75])
    th = theta_gmp(us, us, df, np.array([1.0]), 0.0, 1.0)
    assert abs(th - 2.0 / 3.0) < 1e-14
    um, up = blended_intermediate_states(us[:, None], df[:, None],
                                         np.array([1.0]), th)
    assert 0.0 - 1e-12 <= um[0, 0] <= 1.0 + 1e-12
    assert 0.0 - 1e-12 <= up[0, 0] <= 1.0 + 1e-12


def test_gmp_zero_slack():
    th = theta_gmp(np.array([1.0]), np.array([1.0]), np.array([0.3]),
                   np.array([1.0]), 0.0, 1.0)
    assert th == 0.0


def test_lmp_constant_data_untouched():
    one = np.array([1.0])
    th = theta_lmp(0.5 * one, 0.5 * one, 0.0 * one, one,
                   0.5 * one, 0.5 * one, 0.5 * one, 0.5 * one)
    assert th == 1.0


def test_lmp_branches_swap_under_orientation_flip():
    rng = np.random.default_rng(3)
    for _ in range(200):
        um, up = rng.uniform(0, 1, 2)
        am, bm = um - rng.uniform(0.1, 1), um + rng.uniform(0.1, 1)
        ap, bp = up - rng.uniform(0.1, 1), up + rng.uniform(0.1, 1)
        df = rng.uniform(-2, 2)
        g = rng.uniform(0.5, 2)
        th = theta_lmp(*(np.array([v]) for v in (um, up, df, g, am, bm, ap, bp)))
        # flipped orientation: sides swap, increment flips
        th2 = theta_lmp(*(np.array([v]) for v in (up, um, -df, g, ap, bp, am, bm)))
        assert abs(th - th2) < 1e-13
        # replay
        shift = th * df / g
        assert am - 1e-12 <= um - shift <= bm + 1e-12
        assert ap - 1e-12 <= up + shift <= bp + 1e-12


def test_lmp_ghost_side_never_binds():
    one = np.array([1.0])
    th = theta_lmp(0.5 * one, 0.5 * one, 2.0 * one, one,
                   np.array([0.4]), np.array([0.6]),
                   np.array([-np.inf]), np.array([np.inf]))
    th_ref = theta_lmp(0.5 * one, 0.5 * one, 2.0 * one, one,
                       np.array([0.4]), np.array([0.6]),
                       np.array([0.0]), np.array([1.0]))
    assert th >= th_ref


# ---------------------------------------------------------------------------
# Euler positivity
# ---------------------------------------------------------------------------


def test_positivity_idle_on_zero_increment():
    law = make_law("euler-1d")
    us = law.primitive_to_conserved(1.0, [0.0], 1.0)[None, :]
    df = np.zeros((1, 3))
    th, bad = theta_positivity_euler(law, us, us, df, np.array([1.0]))
    assert th[0] == 1.0 and bad == 0


def test_positivity_replay_randomized():
    law = make_law("euler-1d")
    rng = np.random.default_rng(4)
    m = 100_000
    ul = law.primitive_to_conserved(
        rng.uniform(0.05, 3, m), rng.uniform(-2, 2, (m, 1)),
        rng.uniform(0.05, 3, m))
    ur = law.primitive_to_conserved(
        rng.uniform(0.05, 3, m), rng.uniform(-2, 2, (m, 1)),
        rng.uniform(0.05, 3, m))
    g = law.max_wavespeed(ul, ur, N1)
    f = viscosity_flux(law, ul, ur, N1, g)
    um, up = side_states(law, ul, ur, N1, f, g)
    df = rng.uniform(-1, 1, (m, 3)) * 3.0
    th, bad = theta_positivity_euler(law, um, up, df, g)
    assert bad == 0
    shift = (th / g)[:, None] * df
    assert np.all(law.admissible(um - shift))
    assert np.all(law.admissible(up + shift))


def test_positivity_bad_intermediate_state_flagged():
    law = make_law("euler-1d")
    us = law.primitive_to_conserved(1.0, [0.0], 1.0)[None, :]
    bad_state = us.copy()
    bad_state[0, -1] = 0.0          # nonpositive internal energy
    df = np.ones((1, 3))
    th, bad = theta_positivity_euler(law, bad_state, us, df, np.array([1.0]))
    assert th[0] == 0.0 and bad == 1


# ---------------------------------------------------------------------------
# smoothen / compose
# ---------------------------------------------------------------------------


def _line_topology(n=8):
    mesh = interval_mesh(0, 1, n, periodic=True)
    return SubcellTopology(mesh, build_subdivision(1, "1d-uniform", 1))


def test_smoothen_constant_field_unchanged():
    topo = _line_topology()
    theta = np.full(topo.nfaces, 0.7)
    for mode in ("avg", "min"):
        np.testing.assert_allclose(smoothen(theta, topo, mode), 0.7)


def test_smoothen_min_spreads_zero():
    topo = _line_topology()
    theta = np.ones(topo.nfaces)
    theta[3] = 0.0
    out = smoothen(theta, topo, "min")
    # neighbors of the zero face through shared nodes drop to zero
    assert out[3] == 0.0
    assert np.count_nonzero(out == 0.0) > 1
    # averaging variant is everywhere at least the min variant
    out_avg = smoothen(theta, topo, "avg")
    assert np.all(out_avg >= out - 1e-15)
    assert np.all(out <= theta + 1e-15)


def test_smoothen_hand_traced_1d():
    # 4 periodic cells, one subcell each: faces are cell interfaces
    mesh = interval_mesh(0, 1, 4, periodic=True)
    topo = SubcellTopology(mesh, build_subdivision(1, "1d-uniform", 1))
    k1 = topo.face_kind == 1
    theta = np.ones(topo.nfaces)
    zero_face = np.nonzero(k1)[0][0]
    theta[zero_face] = 0.0
    out = smoothen(theta, topo, "min")
    # both subcells adjacent to the zero face aggregate to zero; every face
    # sharing a node with them drops as well
    l, r = topo.face_left[zero_face], topo.face_right[zero_face]
    for f in range(topo.nfaces):
        touches = topo.face_left[f] in (l, r) or topo.face_right[f] in (l, r)
        if touches:
            assert out[f] == 0.0
    assert np.all(out <= theta)


def test_subcell_theta_average():
    topo = _line_topology(4)
    theta = np.linspace(0, 1, topo.nfaces)
    agg = subcell_theta(theta, topo)
    assert agg.shape == (topo.nsub_total,)
    assert np.all(agg >= 0) and np.all(agg <= 1)


def test_compose_minimum_and_poison():
    outs = {"a": np.array([1.0, 0.4, 0.7]), "b": np.array([0.9, 0.8, 0.7])}
    theta, binding = compose(outs)
    np.testing.assert_allclose(theta, [0.9, 0.4, 0.7])
    poison = np.array([True, False, False])
    theta, _ = compose(outs, poisoned=poison)
    assert theta[0] == 0.0
    theta, binding = compose({}, poisoned=np.array([False, True]))
    np.testing.assert_allclose(theta, [1.0, 0.0])
    assert np.all(binding == -1)


@given(st.lists(st.floats(0, 1), min_size=1, max_size=6))
@settings(max_examples=40, deadline=None)
def test_compose_bounded(values):
    outs = {f"s{i}": np.array([v]) for i, v in enumerate(values)}
    theta, _ = compose(outs)
    assert 0.0 <= theta[0] <= 1.0
    assert abs(theta[0] - min(values)) < 1e-15
