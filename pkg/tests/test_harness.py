"""Case registry, driver, error norms, outputs, CLI."""

import os
import subprocess
import sys

import numpy as np
import pytest

from dgfv.errors import ConfigError
from dgfv.harness.cases import case_catalog, composite_signal, get_case
from dgfv.harness.driver import (
    RunConfig, build_scheme, convergence_study, error_norms, exact_submeans,
    run,
)
from dgfv.harness.exact import (
    EulerRiemannExact, IsentropicExact, fv_reference_1d, scalar_riemann_fan,
)
from dgfv.harness.outputs import write_outputs
from dgfv.physics import make_law


def test_catalog_contents():
    names = set(case_catalog())
    assert {"advect-sine", "advect-composite", "rotation", "burgers-2d",
            "buckley-1", "buckley-2", "kpp", "sod-modified", "isentropic",
            "sod-2d", "sedov", "forward-step", "half-cylinder"} <= names
    with pytest.raises(ConfigError):
        get_case("unknown-case")


def test_buckley1_registry_values():
    case = get_case("buckley-1")
    law = case.make_law()
    ic = case.initial_state(law)
    x = np.array([[-0.4], [0.4]])
    np.testing.assert_allclose(ic(x)[:, 0], [-3.0, 3.0])
    assert case.t_end == 1.0
    mesh = case.build_mesh()
    assert mesh.nodes.min() == -0.5 and mesh.nodes.max() == 0.5


def test_sedov_source_pressure_rule():
    cfg, case, law, scheme = build_scheme(
        RunConfig(case="sedov", k=2, ncells=128))
    ub = scheme.init_submeans(case.initial_state(law))
    ub2 = case.post_init(scheme, ub)
    changed = np.nonzero(np.abs(ub2 - ub).sum(axis=-1))
    assert len(changed[0]) == 1
    c, m = changed[0][0], changed[1][0]
    vol = scheme.topo.sub_areas[c, m]
    # source energy follows p = (gamma-1) e0 / v with zero velocity
    p_src = (law.gas_gamma - 1.0) * ub2[c, m, -1]
    assert abs(p_src - (law.gas_gamma - 1.0) * case.e0 / vol) < 1e-12
    # the chosen subcell contains the origin
    assert np.linalg.norm(scheme.topo.sub_centroids[c, m]) < 0.2


def test_advect_sine_high_order_near_exact():
    # five cells at degree 8 transport the sine almost exactly
    cfg = RunConfig(case="advect-sine", k=8, ncells=5, blend=(), cfl=0.1)
    art = run(cfg)
    exact = art.case.exact_solution(art.scheme.law, art.t_end)
    e1, e2 = error_norms(art.scheme, art.state, exact)
    assert e2 < 1e-6


def test_initial_submeans_in_pointwise_hull():
    cfg, case, law, scheme = build_scheme(
        RunConfig(case="advect-composite", k=4, ncells=24))
    ub = scheme.init_submeans(case.initial_state(law))
    assert ub.min() >= -1e-12
    assert ub.max() <= 1.0 + 1e-12


def test_error_norm_zero_for_exact_projection():
    cfg, case, law, scheme = build_scheme(
        RunConfig(case="advect-sine", k=4, ncells=6))
    exact0 = case.exact_solution(law, 0.0)
    ub = exact_submeans(scheme, exact0)
    e1, e2 = error_norms(scheme, ub, exact0)
    assert e1 < 1e-13 and e2 < 1e-13


def test_convergence_study_pure_dg_order():
    cfg = RunConfig(case="advect-sine", k=3, blend=(), cfl=0.4)
    rows = convergence_study(cfg, [4, 8, 16])
    assert rows[0]["q_l2"] > 3.5
    assert rows[1]["q_l2"] > 3.5


# ---------------------------------------------------------------------------
# exact solutions
# ---------------------------------------------------------------------------


def test_scalar_fan_burgers_shock_and_rarefaction():
    law = make_law("burgers-1d")
    # shock: speed (fl - fr)/(ul - ur) = 0.5
    fan = scalar_riemann_fan(law, 1.0, 0.0)
    assert fan(np.array([0.49]))[0] == pytest.approx(1.0, abs=2e-2)
    assert fan(np.array([0.51]))[0] == pytest.approx(0.0, abs=2e-2)
    # rarefaction: u = xi inside the fan
    fan = scalar_riemann_fan(law, -1.0, 1.0)
    xi = np.array([-0.5, 0.0, 0.5])
    np.testing.assert_allclose(fan(xi), xi, atol=2e-3)


def test_scalar_fan_buckley_against_fv():
    case = get_case("buckley-1")
    law = case.make_law()
    fan = scalar_riemann_fan(law, -3.0, 3.0)
    xr, ur = fv_reference_1d(law, lambda x: np.where(x < 0, -3.0, 3.0),
                             -0.5, 0.5, 1.0, ncells=3000)
    err = np.mean(np.abs(fan(xr / 1.0) - ur))
    assert err < 0.02


def test_euler_exact_riemann_sod():
    ex = EulerRiemannExact((1.0, 0.0, 1.0), (0.125, 0.0, 0.1))
    # standard Sod star values
    assert ex.pstar == pytest.approx(0.30313, abs=2e-5)
    assert ex.ustar == pytest.approx(0.92745, abs=2e-5)
    rho, u, p = ex.sample(np.array([-2.0, 2.0]))
    np.testing.assert_allclose(rho, [1.0, 0.125])


def test_isentropic_exact_initial_data():
    case = get_case("isentropic")
    law = case.make_law()
    ex = IsentropicExact(case.rho0)
    rho, vel, p = ex.primitives(np.array([0.25, -0.1]), 0.0)
    np.testing.assert_allclose(rho, case.rho0(np.array([0.25, -0.1])),
                               rtol=1e-12)
    np.testing.assert_allclose(vel, 0.0, atol=1e-12)


def test_isentropic_exact_satisfies_pde():
    # finite-difference residual of mass conservation at a smooth time
    case = get_case("isentropic")
    ex = IsentropicExact(case.rho0)
    x = np.linspace(-0.9, 0.9, 7)
    t, h = 0.05, 1e-5
    rho_t = (ex.primitives(x, t + h)[0] - ex.primitives(x, t - h)[0]) / (2 * h)
    def flux(xx):
        r, v, _ = ex.primitives(xx, t)
        return r * v
    q_x = (flux(x + h) - flux(x - h)) / (2 * h)
    assert np.abs(rho_t + q_x).max() < 1e-5


# ---------------------------------------------------------------------------
# outputs
# ---------------------------------------------------------------------------


def test_outputs_written_with_provenance(tmp_path):
    cfg = RunConfig(case="advect-sine", k=2, ncells=4, blend=(), cfl=0.4,
                    t_end=0.05)
    art = run(cfg)
    paths = write_outputs(art, tmp_path, ("profile", "diagnostics"))
    assert len(paths) == 2
    for p in paths:
        text = open(p).read()
        assert text.startswith("# config:")
        assert "mesh_sha" in text


def test_vtk_output_2d(tmp_path):
    cfg = RunConfig(case="burgers-2d", k=1, ncells=18, cfl=0.4, t_end=0.02,
                    blend=("gmp", "lmp"), smoother="avg")
    art = run(cfg)
    paths = write_outputs(art, tmp_path, ("profile", "vtk", "diagnostics"))
    vtk = [p for p in paths if p.endswith(".vtk")][0]
    text = open(vtk).read()
    assert "DATASET UNSTRUCTURED_GRID" in text
    assert "SCALARS theta" in text
    ncells_line = [ln for ln in text.splitlines() if ln.startswith("CELLS")][0]
    npolys = int(ncells_line.split()[1])
    assert npolys == art.scheme.mesh.ncells * art.scheme.ref.nsub


def test_outputs_deterministic(tmp_path):
    cfg = RunConfig(case="advect-sine", k=2, ncells=4, blend=(), cfl=0.4,
                    t_end=0.05)
    a = write_outputs(run(cfg), tmp_path / "a", ("profile",))[0]
    b = write_outputs(run(cfg), tmp_path / "b", ("profile",))[0]
    assert open(a).read() == open(b).read()


def test_empty_selection_no_files(tmp_path):
    cfg = RunConfig(case="advect-sine", k=1, ncells=4, blend=(), cfl=0.4,
                    t_end=0.02)
    assert write_outputs(run(cfg), tmp_path, ()) == []


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _cli(*args):
    return subprocess.run(
        [sys.executable, "-m", "dgfv.harness.cli", *args],
        capture_output=True, text=True)


def test_cli_run_smoke(tmp_path):
    r = _cli("run", "--case", "advect-sine", "--k", "2", "--ncells", "4",
             "--blend", "none", "--t-end", "0.05", "--out", str(tmp_path))
    assert r.returncode == 0, r.stderr
    assert "steps=" in r.stdout
    assert (tmp_path / "advect-sine_profile.csv").exists()


def test_cli_config_file(tmp_path):
    cfgfile = tmp_path / "run.cfg"
    cfgfile.write_text("case=advect-sine\nk=2\nncells=4\nblend=none\n"
                       "t-end=0.05\n")
    r = _cli("run", "--case", "advect-sine", "--config", str(cfgfile))
    assert r.returncode == 0, r.stderr


def test_cli_unknown_strategy_is_config_error():
    r = _cli("run", "--case", "advect-sine", "--k", "2", "--ncells", "4",
             "--blend", "warp-drive", "--t-end", "0.01")
    assert r.returncode == 3


def test_cli_equivalence_smoke():
    r = _cli("equivalence", "--case", "rotation", "--k", "1", "--ncells",
             "32", "--steps", "3", "--cfl", "0.3")
    assert r.returncode == 0, r.stderr
    assert "max pairwise" in r.stdout


def test_cli_convergence_smoke(tmp_path):
    r = _cli("convergence", "--case", "advect-sine", "--k", "2", "--ncells",
             "4", "--levels", "2", "--blend", "none", "--out", str(tmp_path))
    assert r.returncode == 0, r.stderr
    assert (tmp_path / "advect-sine_convergence.csv").exists()
