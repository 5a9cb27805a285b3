"""Semi-discrete monolithic scheme: one object wiring mesh, operators,
fluxes and blending into a right-hand-side evaluation over submean values.

The unknown layout is (ncells, nsub, nvars).  One `rhs` call performs the
full stage pipeline: moment recovery, trace exchange, DG residual,
reconstructed fluxes, first-order face fluxes, blending coefficients and
conservative assembly.  All heavy operations are vectorized over cells or
faces; the only per-cell Python loop is the knapsack solve of the cell
entropy strategy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import blending as bl
from . import riemann as rs
from .approximation import CellOperators, PolynomialBasis, gauss01, triangle_rule, triangle_map_rule
from .errors import ConfigError, DgfvError
from .mesh import SubcellTopology, build_subdivision, triangulate
from .physics import make_entropy_pair

BC_PERIODIC, BC_INFLOW, BC_OUTFLOW, BC_WALL = 0, 1, 2, 3


@dataclass
class BlendingConfig:
    """Active strategies plus their shared knobs."""

    strategies: tuple = ()
    entropy_name: str = "square"
    entropy_params: dict = field(default_factory=dict)
    gmp_bounds: tuple = None          # (alpha, beta); default: initial range
    lmp_variable: str = "rho"         # euler-lmp bounded conserved variable
    smooth_relax: bool = True
    smoother: str = "none"
    eps_div: float = 1e-14
    force_theta: float = None         # exact 0.0 / 1.0 override for tests

    def validate(self, law):
        for s in self.strategies:
            if s not in bl.STRATEGY_NAMES:
                raise ConfigError(f"unknown blending strategy {s!r}")
            if s in ("gmp", "lmp", "entropy-any", "entropy-tadmor") and law.is_euler:
                raise ConfigError(f"strategy {s!r} applies to scalar laws only")
            if s in ("euler-positivity", "euler-lmp") and not law.is_euler:
                raise ConfigError(f"strategy {s!r} requires the Euler system")
        if self.smoother not in bl.SMOOTHERS:
            raise ConfigError(f"unknown smoother {self.smoother!r}")
        if self.lmp_variable not in ("rho", "qx", "qy", "E"):
            raise ConfigError(f"unknown euler-lmp variable {self.lmp_variable!r}")
        return self


class StageInfo:
    """Per-stage scalars collected for diagnostics and run monitors."""

    def __init__(self):
        self.theta_min = 1.0
        self.theta_mean = 1.0
        self.binding_counts = {}
        self.dc_min = np.inf
        self.positivity_fallbacks = 0
        self.poisoned_faces = 0
        self.cfl_bound = None


class SpatialScheme:
    def __init__(self, mesh, law, degree, subdivision, flux_dg="global-lf",
                 flux_fv=None, blending=None, inflow_state=None):
        self.mesh = mesh
        self.law = law
        self.degree = degree
        if law.dim != mesh.dim:
            raise ConfigError(
                f"law {law.name} is {law.dim}D but the mesh is {mesh.dim}D")
        self.ref = build_subdivision(mesh.dim, subdivision, degree)
        self.ops = CellOperators(self.ref, PolynomialBasis(mesh.dim, degree))
        self.topo = SubcellTopology(mesh, self.ref)
        self.flux_dg = rs.FluxFunction(flux_dg)
        self.flux_fv = rs.FluxFunction(flux_fv or flux_dg)
        self.blending = (blending or BlendingConfig()).validate(law)
        self.inflow_state = inflow_state
        self.nvars = law.nvars
        self._entropy_pair = None
        if any(s.startswith("entropy") for s in self.blending.strategies):
            self._entropy_pair = make_entropy_pair(
                law, self.blending.entropy_name, **self.blending.entropy_params)
        self._gmp_range = self.blending.gmp_bounds
        self._precompute()

    def set_gmp_range(self, alpha, beta):
        """Global bounds for the gmp strategy (taken from initial data)."""
        self._gmp_range = (float(alpha), float(beta))

    _gamma_global_fv = None

    # ------------------------------------------------------------------
    # static precomputations
    # ------------------------------------------------------------------

    def _precompute(self):
        ops, topo, ref = self.ops, self.topo, self.ref
        nc = self.mesh.ncells
        self.jinv = topo.jinv                       # (nc, ref, phys)
        self.det = topo.det
        self.jw = self.det[:, None, None] * self.jinv
        self.xvol = topo.map_points(ops.volume.points)
        self.areas_flat = topo.sub_areas.reshape(-1)

        # trace gather indices
        ppe = ops.points_per_edge
        self.ppe = ppe
        npt_all = len(ops.trace_points)
        base = np.arange(ppe)
        off = np.array(ops.edge_offsets)
        lrow = (topo.mf_left_cell[:, None] * npt_all
                + off[topo.mf_left_edge][:, None] + base[None, :])
        self.lrow = lrow
        rr = np.where(topo.mf_reversed[:, None], ppe - 1 - base[None, :],
                      base[None, :])
        rrow = (topo.mf_right_cell[:, None] * npt_all
                + off[np.maximum(topo.mf_right_edge, 0)][:, None] + rr)
        self.rrow = np.where(topo.mf_right_cell[:, None] >= 0, rrow, -1)
        self.has_neighbor = topo.mf_right_cell >= 0

        # physical quadrature points/weights per mesh face
        nseg = topo.nseg
        if self.mesh.dim == 1:
            self.ng = 1
            xfq = np.zeros((topo.nmf, 1, 1))
            for f in range(topo.nmf):
                xfq[f] = topo._edge_points(topo.mf_left_cell[f],
                                           topo.mf_left_edge[f], [0.0])
            self.xfq = xfq
            self.wfq = np.ones((topo.nmf, 1))
            self.nfq = topo.seg_normal.copy()
        else:
            ng = len(ops.edge_gauss)
            self.ng = ng
            params = np.concatenate([
                t0 + (t1 - t0) * ops.edge_gauss
                for e in range(len(ref.edge_segments))
                for (owner, t0, t1) in ref.edge_segments[e]
            ]).reshape(len(ref.edge_segments), nseg * ng)
            xfq = np.zeros((topo.nmf, ppe, 2))
            for f in range(topo.nmf):
                c, e = topo.mf_left_cell[f], topo.mf_left_edge[f]
                xfq[f] = topo._edge_points(c, e, params[e])
            self.xfq = xfq
            self.wfq = np.repeat(topo.seg_len, ng, axis=1) * np.tile(
                ops.edge_gauss_w, nseg)[None, :]
            self.nfq = np.repeat(topo.seg_normal, ng, axis=1)
            self._verify_conformity(npt_all)

        # operators
        self.DP = ref.areas[:, None] * ops.proj
        self.KK = ref.adjacency.T @ ref.lap_pinv
        self.onevec_check = np.ones(ref.nsub)

        self._assemble_idx = np.concatenate(
            [topo.face_left, topo.face_right[topo.face_right >= 0]])
        # exclusive face-neighbor scatter (derivative spike detection)
        sel_int = topo.face_right >= 0
        self._nb_dst = np.concatenate(
            [topo.face_left[sel_int], topo.face_right[sel_int]])
        self._nb_src = np.concatenate(
            [topo.face_right[sel_int], topo.face_left[sel_int]])
        # cell-level face adjacency for the degree-2 detector
        has_r = topo.mf_right_cell >= 0
        self._nbc_dst = np.concatenate(
            [topo.mf_left_cell[has_r], topo.mf_right_cell[has_r]])
        self._nbc_src = np.concatenate(
            [topo.mf_right_cell[has_r], topo.mf_left_cell[has_r]])

        # face gid layout for segments
        self.seg_gid0 = topo.n_intra
        self.face_bc_kind = topo.face_bc
        self.is_ghost_face = topo.face_right < 0
        self.interior_faces = ~self.is_ghost_face

        # per-cell lists of segment faces (cell entropy strategy)
        if "entropy-cell" in self.blending.strategies:
            bnd = [[] for _ in range(nc)]
            for f in range(topo.nmf):
                for s in range(nseg):
                    gid = self.seg_gid0 + f * nseg + s
                    bnd[topo.mf_left_cell[f]].append((gid, f, s, +1))
                    if topo.mf_right_cell[f] >= 0:
                        bnd[topo.mf_right_cell[f]].append((gid, f, s, -1))
            self._cell_bnd_gid = [np.array([r[0] for r in b], dtype=int) for b in bnd]
            self._cell_bnd_f = [np.array([r[1] for r in b], dtype=int) for b in bnd]
            self._cell_bnd_s = [np.array([r[2] for r in b], dtype=int) for b in bnd]
            self._cell_bnd_side = [np.array([r[3] for r in b], dtype=int) for b in bnd]
            self._intra_gids = np.arange(topo.n_intra).reshape(nc, ref.nfaces)
        self._subcell_quad_cache = None

    def _verify_conformity(self, npt_all):
        """Both sides of every interior mesh face must quadrature-match."""
        topo = self.topo
        sel = np.nonzero(self.has_neighbor)[0]
        if sel.size == 0:
            return
        ops = self.ops
        ppe = self.ppe
        for f in sel[: min(len(sel), 64)]:
            v, b = topo.mf_right_cell[f], topo.mf_right_edge[f]
            params = []
            for (owner, t0, t1) in self.ref.edge_segments[b]:
                params.extend(t0 + (t1 - t0) * ops.edge_gauss)
            xr = topo._edge_points(v, b, np.asarray(params))
            if topo.mf_reversed[f]:
                xr = xr[::-1]
            shift = self.xfq[f].mean(axis=0) - xr.mean(axis=0)
            err = np.max(np.abs(self.xfq[f] - (xr + shift)))
            scale = np.sqrt(np.median(self.topo.cell_volumes))
            if err > 1e-9 * max(scale, 1e-30):
                raise DgfvError(f"face {f}: trace quadrature points mismatch")

    # ------------------------------------------------------------------
    # initialization helpers
    # ------------------------------------------------------------------

    def subcell_quadrature(self, extra_degree=0):
        """Reference subcell rules stacked as (Ns, Q, dim), (Ns, Q)."""
        key = extra_degree
        if self._subcell_quad_cache and self._subcell_quad_cache[0] == key:
            return self._subcell_quad_cache[1:]
        deg = 2 * self.degree + extra_degree
        pts_all, w_all = [], []
        for m in range(self.ref.nsub):
            if self.mesh.dim == 1:
                a = self.ref.pieces[m][0][0, 0]
                b = self.ref.pieces[m][0][1, 0]
                x, w = gauss01(deg // 2 + 1)
                pts = (a + (b - a) * x)[:, None]
                ws = (b - a) * w
            else:
                tp, tw = triangle_rule(deg)
                pts, ws = [], []
                for poly in self.ref.pieces[m]:
                    for tri in triangulate(poly):
                        p, w = triangle_map_rule(tri, tp, tw)
                        pts.append(p)
                        ws.append(w)
                pts, ws = np.vstack(pts), np.concatenate(ws)
            pts_all.append(pts)
            w_all.append(ws)
        qmax = max(len(w) for w in w_all)
        P = np.zeros((self.ref.nsub, qmax, self.mesh.dim))
        W = np.zeros((self.ref.nsub, qmax))
        for m, (p, w) in enumerate(zip(pts_all, w_all)):
            P[m, :len(w)] = p
            W[m, :len(w)] = w
        self._subcell_quad_cache = (key, P, W)
        return P, W

    def init_submeans(self, fn, extra_degree=4):
        """Subcell means of a pointwise initial state (quadrature averages)."""
        P, W = self.subcell_quadrature(extra_degree)
        flat = P.reshape(-1, self.mesh.dim)
        x = self.topo.map_points(flat).reshape(
            self.mesh.ncells, self.ref.nsub, -1, self.mesh.dim)
        vals = np.asarray(fn(x))
        wn = W / self.ref.areas[:, None]
        return np.einsum("mq,cmqk->cmk", wn, vals)

    def init_moments_l2(self, fn):
        """L2-projection moments of a pointwise state (shared across schemes)."""
        vals = np.asarray(fn(self.xvol))
        return np.einsum("q,qp,cqk->cpk", self.ops.volume.weights,
                         self.ops.basis_at_volume, vals)

    def recover(self, ubar):
        return np.matmul(self.ops.recovery[None], ubar)

    def project(self, moments):
        return np.matmul(self.ops.proj[None], moments)

    # ------------------------------------------------------------------
    # ghosts
    # ------------------------------------------------------------------

    def _ghost(self, u_int, bc, normal, x, t):
        """Exterior state per boundary kind, vectorized over entries.

        Outflow copies the interior state, walls mirror the momentum
        (plain copy for scalar laws), inflow holds the prescribed state.
        """
        out = u_int.copy()
        if np.any(bc == BC_INFLOW):
            if self.inflow_state is None:
                raise ConfigError("mesh has inflow faces but no inflow state")
            sel = bc == BC_INFLOW
            out[sel] = self.inflow_state(x[sel], t)
        if np.any(bc == BC_WALL) and self.law.is_euler:
            sel = bc == BC_WALL
            q = out[sel][:, 1:1 + self.law.dim]
            n = normal[sel]
            qn = np.sum(q * n, axis=-1, keepdims=True)
            out[sel, 1:1 + self.law.dim] = q - 2.0 * qn * n
        return out

    # ------------------------------------------------------------------
    # stage pipeline
    # ------------------------------------------------------------------

    def rhs(self, ubar, t):
        """Semi-discrete right-hand side and stage diagnostics."""
        from . import dg_core
        law, topo = self.law, self.topo
        ds = self.nvars
        info = StageInfo()
        cfg = self.blending
        pure_fv = cfg.force_theta == 0.0

        with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
            # FV face states (possibly entropy-modified)
            moments = None if pure_fv else self.recover(ubar)
            states, vlow, ent = self._fv_states(ubar, moments)
            sflat = states.reshape(-1, ds)
            s_l = sflat[topo.face_left]
            s_r = np.where(self.interior_faces[:, None],
                           sflat[np.maximum(topo.face_right, 0)], s_l)
            ghost_sel = self.is_ghost_face
            if np.any(ghost_sel):
                s_r[ghost_sel] = self._ghost(
                    s_l[ghost_sel], self.face_bc_kind[ghost_sel],
                    topo.face_normal[ghost_sel], topo.face_mid[ghost_sel], t)

            self._gamma_global_fv = None
            if (self.flux_fv.needs_global_coefficient()
                    or self.flux_dg.needs_global_coefficient()):
                g = law.mesh_speed_bound(self.mesh.nodes)
                if g is None:
                    g = float(np.max(law.max_wavespeed(
                        s_l, s_r, topo.face_normal, topo.face_mid)))
                self._gamma_global_fv = g

            if pure_fv:
                ffv, gamma_f = self.flux_fv(
                    law, s_l, s_r, topo.face_normal, topo.face_mid,
                    self._gamma_global_fv)
                info.cfl_bound = self._cfl_bound(gamma_f)
                lffv = topo.face_length[:, None] * ffv
                dudt = self._assemble(lffv)
                return dudt, info

            # trace exchange, DG residual, reconstructed fluxes
            phi, wf, fnum, traces, gamma_global = dg_core.dg_residual(
                self, moments, t, return_face_data=True)
            self._last_traces = traces
            bc_arr, bseg = dg_core.boundary_contributions(self, wf)
            lfhat_intra = dg_core.reconstructed_fluxes(self, phi, bc_arr)
            lfhat = np.concatenate(
                [lfhat_intra.reshape(-1, ds), bseg.reshape(-1, ds)])

            # first-order fluxes over every registered face
            ffv, gamma_f, fl_n, fr_n = self.flux_fv.evaluate(
                law, s_l, s_r, topo.face_normal, topo.face_mid, gamma_global)
            lffv = topo.face_length[:, None] * ffv
            dlf = lfhat - lffv
            df_unit = dlf / topo.face_length[:, None]
            ustar_m, ustar_p = rs.side_states(
                law, s_l, s_r, topo.face_normal, ffv, gamma_f, topo.face_mid,
                fl=fl_n, fr=fr_n)
            info.cfl_bound = self._cfl_bound(gamma_f)

            theta = self._compute_theta(
                ubar, moments, s_l, s_r, df_unit, dlf, gamma_f,
                ustar_m, ustar_p, ffv, lffv, vlow, ent, fnum, info, t)

            lblend = lffv + np.where(theta[:, None] > 0,
                                     theta[:, None] * dlf, 0.0)
            dudt = self._assemble(lblend)

        info.theta_min = float(theta.min()) if len(theta) else 1.0
        info.theta_mean = float(theta.mean()) if len(theta) else 1.0
        self._last_theta = theta
        return dudt, info

    def _global_coefficient_traces(self, u_lq, u_rq):
        """Finish the global Lax-Friedrichs coefficient with trace bounds."""
        if not (self.flux_fv.needs_global_coefficient()
                or self.flux_dg.needs_global_coefficient()):
            return None
        g = self.law.mesh_speed_bound(self.mesh.nodes)
        if g is not None:
            return float(g)
        base = self._gamma_global_fv or 0.0
        return max(base, float(np.max(self.law.max_wavespeed(
            u_lq, u_rq, self.nfq, self.xfq))))

    def _assemble(self, lflux):
        topo = self.topo
        idx = self._assemble_idx
        vals = np.concatenate([-lflux, lflux[self.interior_faces]])
        acc = np.empty((topo.nsub_total, self.nvars))
        for k in range(self.nvars):
            acc[:, k] = np.bincount(idx, weights=vals[:, k],
                                    minlength=topo.nsub_total)
        acc /= self.areas_flat[:, None]
        return acc.reshape(self.mesh.ncells, self.ref.nsub, self.nvars)

    # ------------------------------------------------------------------
    # FV states (entropy-cell modification)
    # ------------------------------------------------------------------

    def _fv_states(self, ubar, moments):
        """States feeding the first-order fluxes.

        With the cell entropy strategy active the face states are rebuilt
        from the sub-resolution coefficients of the projected entropy
        variable, as the cell entropy budget requires.
        """
        if "entropy-cell" not in self.blending.strategies or moments is None:
            return ubar, None, None
        pair = self._entropy_pair
        uq = np.matmul(self.ops.basis_at_volume[None], moments)
        vq = pair.v(uq)
        wv = self.ops.volume.weights[:, None] * self.ops.basis_at_volume
        vmom = np.matmul(wv.T[None], vq)
        vlow = np.matmul(self.ops.subres[None], vmom)
        states = pair.u_of_v(vlow)
        return states, vlow, pair

    # ------------------------------------------------------------------
    # blending
    # ------------------------------------------------------------------

    def _compute_theta(self, ubar, moments, s_l, s_r, df_unit, dlf, gamma_f,
                       ustar_m, ustar_p, ffv, lffv, vlow, ent, fnum,
                       info, t):
        cfg = self.blending
        topo = self.topo
        poisoned = ~np.all(np.isfinite(df_unit), axis=-1) | ~np.isfinite(gamma_f)
        info.poisoned_faces = int(np.count_nonzero(poisoned))
        if cfg.force_theta is not None:
            if cfg.force_theta == 1.0:
                return np.ones(topo.nfaces)
            return np.full(topo.nfaces, float(cfg.force_theta))
        if not cfg.strategies:
            theta, _ = bl.compose({}, poisoned=poisoned)
            return theta

        outputs = {}
        eps = cfg.eps_div
        if "gmp" in cfg.strategies:
            alpha, beta = self._gmp_range
            outputs["gmp"] = bl.theta_gmp(
                ustar_m[..., 0], ustar_p[..., 0], df_unit[..., 0],
                gamma_f, alpha, beta, eps)
        if "lmp" in cfg.strategies or "euler-lmp" in cfg.strategies:
            outputs["lmp"] = self._theta_lmp(
                ubar, moments, ustar_m, ustar_p, df_unit, gamma_f, eps)
        if "euler-positivity" in cfg.strategies:
            th, bad = bl.theta_positivity_euler(
                self.law, ustar_m, ustar_p, df_unit, gamma_f, eps)
            outputs["euler-positivity"] = th
            info.positivity_fallbacks += bad
        if "entropy-any" in cfg.strategies:
            gmax = self.law.max_wavespeed(s_l, s_r, topo.face_normal,
                                          topo.face_mid)
            outputs["entropy-any"] = bl.theta_entropy_any(
                s_l, s_r, df_unit, gamma_f, gmax, eps)
        if "entropy-tadmor" in cfg.strategies:
            outputs["entropy-tadmor"] = bl.theta_entropy_tadmor(
                s_l, s_r, ffv, df_unit, topo.face_normal,
                self._entropy_pair, eps)

        if "entropy-cell" in cfg.strategies:
            others, _ = bl.compose(outputs, poisoned=poisoned)
            if cfg.smoother != "none":
                others = bl.smoothen(others, topo, cfg.smoother)
            theta = self._theta_entropy_cell(
                vlow, ent, dlf, lffv, self._last_traces, fnum, others, info)
            theta = np.where(poisoned, 0.0, theta)
            binding = None
        else:
            theta, binding = bl.compose(outputs, poisoned=poisoned)
            if cfg.smoother != "none":
                theta = bl.smoothen(theta, topo, cfg.smoother)
        if binding is not None:
            names = list(outputs)
            uniq, counts = np.unique(binding[binding >= 0], return_counts=True)
            info.binding_counts = {names[i]: int(n) for i, n in zip(uniq, counts)}
        return theta

    # -- local maximum principle -------------------------------------------

    def _theta_lmp(self, ubar, moments, ustar_m, ustar_p, df_unit, gamma_f, eps):
        cfg, topo, law = self.blending, self.topo, self.law
        if law.is_euler:
            comp = {"rho": 0, "qx": 1, "qy": 2, "E": law.nvars - 1}[cfg.lmp_variable]
        else:
            comp = 0
        w = ubar[..., comp].reshape(-1)
        lo = np.minimum.reduceat(w[topo.stencil_indices], topo.stencil_indptr[:-1])
        hi = np.maximum.reduceat(w[topo.stencil_indices], topo.stencil_indptr[:-1])
        if law.is_euler:
            # conserved variables have no a priori local bound; widen the
            # stencil range with the face intermediate states
            um, up = ustar_m[..., comp], ustar_p[..., comp]
            np.minimum.at(lo, topo.face_left, um)
            np.maximum.at(hi, topo.face_left, um)
            sel = self.interior_faces
            np.minimum.at(lo, topo.face_right[sel], up[sel])
            np.maximum.at(hi, topo.face_right[sel], up[sel])
        a_m = lo[topo.face_left]
        b_m = hi[topo.face_left]
        a_p = np.where(self.interior_faces, lo[np.maximum(topo.face_right, 0)],
                       -np.inf)
        b_p = np.where(self.interior_faces, hi[np.maximum(topo.face_right, 0)],
                       np.inf)
        theta = bl.theta_lmp(ustar_m[..., comp], ustar_p[..., comp],
                             df_unit[..., comp], gamma_f,
                             a_m, b_m, a_p, b_p, eps)
        if cfg.smooth_relax and self.degree >= 2:
            smooth = self._smooth_flags(moments[..., comp])
            left_ok = smooth[topo.face_left]
            right_ok = np.where(self.interior_faces,
                                smooth[np.maximum(topo.face_right, 0)], left_ok)
            theta = np.where(left_ok & right_ok, 1.0, theta)
        return theta

    def _smooth_flags(self, mom):
        """Smooth-extrema detector on one scalar moment field.

        Linearized first derivatives must stay inside the vertex-neighbor
        range of their subcell means; degree 2 runs at cell level since the
        second derivatives are cellwise constant.
        """
        topo, ops = self.topo, self.ops
        if self.degree == 2:
            return self._smooth_flags_cell(mom)
        dref = np.einsum("emp,cp->cem", ops.deriv_mean, mom)
        dmean = np.einsum("cei,cem->cim", self.jinv, dref)      # (nc, dim, Ns)
        href = np.einsum("efmp,cp->cefm", ops.hess_mean, mom)
        hess = np.einsum("cei,cfj,cefm->cijm", self.jinv, self.jinv, href)
        nsub = topo.nsub_total
        dim = self.mesh.dim
        dflat = dmean.transpose(0, 2, 1).reshape(nsub, dim)
        hflat = hess.transpose(0, 3, 1, 2).reshape(nsub, dim, dim)
        cflat = topo.sub_centroids.reshape(nsub, dim)
        sub = topo.pv_sub
        ver = topo.pv_vertex
        dx = topo.vertex_coords[ver] - cflat[sub]
        means = dflat[sub]
        vals = means + np.einsum("pij,pj->pi", hflat[sub], dx)
        by_v = topo.pv_byvertex
        lo = np.minimum.reduceat(means[by_v], topo.pv_v_indptr[:-1], axis=0)
        hi = np.maximum.reduceat(means[by_v], topo.pv_v_indptr[:-1], axis=0)
        tol = 1e-12 * (1.0 + np.abs(dflat).max(axis=0))
        ok = np.all((vals >= lo[ver] - tol) & (vals <= hi[ver] + tol), axis=1)
        flags = np.logical_and.reduceat(ok, topo.pv_s_indptr[:-1])
        # a monotone derivative profile excludes isolated spikes: the own
        # derivative mean must not exceed every face neighbor's (both signs)
        flags &= ~self._derivative_spike(dflat, self._nb_dst, self._nb_src,
                                         topo.nsub_total, tol)
        return flags

    @staticmethod
    def _derivative_spike(dflat, dst, src, n, tol):
        lo = np.full((n, dflat.shape[1]), np.inf)
        hi = np.full((n, dflat.shape[1]), -np.inf)
        np.minimum.at(lo, dst, dflat[src])
        np.maximum.at(hi, dst, dflat[src])
        spike = (dflat > hi + tol) | (dflat < lo - tol)
        return np.any(spike, axis=1)

    def _smooth_flags_cell(self, mom):
        topo, ops = self.topo, self.ops
        nc, dim = self.mesh.ncells, self.mesh.dim
        dref = np.einsum("ep,cp->ce", ops.cell_deriv_mean, mom)
        dmean = np.einsum("cei,ce->ci", self.jinv, dref)
        href = np.einsum("efp,cp->cef", ops.cell_hess_mean, mom)
        hess = np.einsum("cei,cfj,cef->cij", self.jinv, self.jinv, href)
        ccent = self.topo.map_points(
            np.full((1, dim), 0.5 if dim == 1 else 1.0 / 3.0))[:, 0, :]
        cell = topo.cellv_cell
        node = topo.cellv_node
        dx = self.mesh.nodes[node] - ccent[cell]
        vals = dmean[cell] + np.einsum("pij,pj->pi", hess[cell], dx)
        nn = len(self.mesh.nodes)
        means = dmean[cell]
        by_n = topo.cellv_bynode
        lo = np.full((nn, dim), np.inf)
        hi = np.full((nn, dim), -np.inf)
        red_lo = np.minimum.reduceat(means[by_n], topo.cellv_n_indptr[:-1], axis=0)
        red_hi = np.maximum.reduceat(means[by_n], topo.cellv_n_indptr[:-1], axis=0)
        used = topo.cellv_node_used
        lo[used] = red_lo[used]
        hi[used] = red_hi[used]
        tol = 1e-12 * (1.0 + np.abs(dmean).max(axis=0))
        ok = np.all((vals >= lo[node] - tol) & (vals <= hi[node] + tol), axis=1)
        flags_c = np.logical_and.reduceat(ok, topo.cellv_c_indptr[:-1])
        flags_c &= ~self._derivative_spike(dmean, self._nbc_dst,
                                           self._nbc_src, nc, tol)
        return np.repeat(flags_c, self.ref.nsub)

    # -- cell entropy budget -------------------------------------------------

    def _boundary_entropy_costs(self, trace, vown, fnum, sign, pair):
        """Segment integrals of (v(u_h) - vlow).F - (psi(u_h) - Psi(vlow)).n.

        `sign` flips flux and normal for the neighbor-side orientation.
        """
        topo = self.topo
        nseg, ng, ds = topo.nseg, self.ng, self.nvars
        wgt = self.wfq.reshape(topo.nmf, nseg, ng)
        vv = pair.v(trace).reshape(topo.nmf, nseg, ng, ds)
        ps = pair.psi(trace).reshape(topo.nmf, nseg, ng, self.mesh.dim)
        ff = sign * fnum.reshape(topo.nmf, nseg, ng, ds)
        nn = sign * self.nfq.reshape(topo.nmf, nseg, ng, self.mesh.dim)
        dv = vv - vown[:, :, None, :]
        dpsi = ps - pair.Psi(vown)[:, :, None, :]
        out = np.einsum("fsg,fsgk,fsgk->fs", wgt, dv, ff)
        out -= np.einsum("fsg,fsgd,fsgd->fs", wgt, dpsi, nn)
        return out

    def _theta_entropy_cell(self, vlow, pair, dlf, lffv, traces, fnum, caps,
                            info):
        """Per-cell continuous knapsack over all faces touching the cell.

        Budget D_c collects the boundary entropy-potential fluxes minus the
        interior first-order entropy production; it is nonnegative by the
        two-point property of the modified first-order fluxes, which is
        asserted and reported.
        """
        topo = self.topo
        nc, ds = self.mesh.ncells, self.nvars
        nfi = self.ref.nfaces
        vflat = vlow.reshape(-1, ds)
        u_lq, u_rq = traces
        lcell, rcell = topo.mf_left_cell, topo.mf_right_cell
        vl_own = vlow[lcell[:, None], topo.mf_left_owner]
        c_left = self._boundary_entropy_costs(u_lq, vl_own, fnum, +1.0, pair)
        vr_own = vlow[np.maximum(rcell, 0)[:, None],
                      np.maximum(topo.mf_right_owner, 0)]
        c_right = self._boundary_entropy_costs(u_rq, vr_own, fnum, -1.0, pair)

        # interior-face costs and budget, assembled in bulk
        n_in = topo.n_intra
        dv_in = vflat[topo.face_right[:n_in]] - vflat[topo.face_left[:n_in]]
        c_intra = np.sum(dv_in * dlf[:n_in], axis=-1)
        fv_intra = np.sum(dv_in * lffv[:n_in], axis=-1)
        cells_in = np.repeat(np.arange(nc), nfi)
        budget = np.zeros(nc)
        np.add.at(budget, cells_in, -fv_intra)
        scale = np.zeros(nc)
        np.add.at(scale, cells_in, np.abs(fv_intra))
        # boundary parts of the budget: l Psi(vlow_own).n_own per segment
        seg_l = topo.seg_len
        psin_l = np.einsum("fsd,fsd->fs", pair.Psi(vl_own), topo.seg_normal)
        np.add.at(budget, lcell, (seg_l * psin_l).sum(axis=1))
        np.add.at(scale, lcell, np.abs(seg_l * psin_l).sum(axis=1))
        sel = self.has_neighbor
        psin_r = np.einsum("fsd,fsd->fs", pair.Psi(vr_own), -topo.seg_normal)
        np.add.at(budget, rcell[sel], (seg_l * psin_r).sum(axis=1)[sel])
        np.add.at(scale, rcell[sel], np.abs(seg_l * psin_r).sum(axis=1)[sel])

        # cells whose sub-resolution coefficients leave the entropy
        # variable's image (or touch such a neighbor) lose their state
        # interpretation: they degrade to first order instead of being
        # budget-checked
        lo_v, hi_v = pair.v_range
        sub_valid = np.all(np.isfinite(vlow) & (vlow > lo_v) & (vlow < hi_v),
                           axis=-1).reshape(-1)
        if self.law.is_euler:
            states = pair.u_of_v(vlow).reshape(-1, ds)
            sub_valid &= self.law.admissible(states)
        cell_valid = sub_valid.reshape(nc, -1).all(axis=1)
        n_in = topo.n_intra
        kind1 = np.arange(n_in, topo.nfaces)
        fl_sub = topo.face_left[kind1]
        fr_sub = topo.face_right[kind1]
        cross_ok = sub_valid[fl_sub] & np.where(
            fr_sub >= 0, sub_valid[np.maximum(fr_sub, 0)], True)
        bad_faces = kind1[~cross_ok]
        cell_valid_arr = cell_valid.copy()
        np.logical_and.at(cell_valid_arr, topo.mf_left_cell,
                          cross_ok.reshape(topo.nmf, topo.nseg).all(axis=1))
        sel = self.has_neighbor
        np.logical_and.at(
            cell_valid_arr, topo.mf_right_cell[sel],
            cross_ok.reshape(topo.nmf, topo.nseg).all(axis=1)[sel])

        checkable = cell_valid_arr & np.isfinite(budget)
        if np.any(checkable):
            info.dc_min = min(info.dc_min, float(np.min(budget[checkable])))
        tol = 1e-12 * np.maximum(1.0, scale)
        viol = checkable & (budget < -tol)
        if np.any(viol):
            bad = int(np.nonzero(viol)[0][0])
            raise DgfvError(
                f"cell entropy budget negative in cell {bad} "
                f"({budget[bad]:.3e}); first-order fluxes inconsistent")

        theta = np.ones(topo.nfaces)
        for c in np.nonzero(~cell_valid_arr)[0]:
            theta[self._intra_gids[c]] = 0.0
            theta[self._cell_bnd_gid[c]] = 0.0
        theta[bad_faces] = 0.0
        for c in range(nc):
            if not cell_valid_arr[c]:
                continue
            gids_in = self._intra_gids[c]
            gids_bd = self._cell_bnd_gid[c]
            fb, sb = self._cell_bnd_f[c], self._cell_bnd_s[c]
            side = self._cell_bnd_side[c]
            c_bd = np.where(side > 0, c_left[fb, sb], c_right[fb, sb])
            gids = np.concatenate([gids_bd, gids_in])
            costs = np.concatenate([c_bd, c_intra[gids_in]])
            sol = bl.knapsack_greedy(costs, max(budget[c], 0.0),
                                     caps[gids], order=gids)
            np.minimum.at(theta, gids, sol)
        return theta

    # ------------------------------------------------------------------
    # time step
    # ------------------------------------------------------------------

    def _cfl_bound(self, gamma_f):
        """min |S| / sum(l gamma) from the face coefficients of this stage."""
        if not np.all(np.isfinite(gamma_f)):
            return np.nan
        lg = self.topo.face_length * gamma_f
        vals = np.concatenate([lg, lg[self.interior_faces]])
        acc = np.bincount(self._assemble_idx, weights=vals,
                          minlength=self.topo.nsub_total)
        return float(np.min(self.areas_flat / acc))

    def compute_dt(self, ubar, t, cfl):
        """CFL bound min |S| / sum(l gamma) over subcells, scaled by cfl."""
        topo, law = self.topo, self.law
        ds = self.nvars
        sflat = ubar.reshape(-1, ds)
        s_l = sflat[topo.face_left]
        s_r = np.where(self.interior_faces[:, None],
                       sflat[np.maximum(topo.face_right, 0)], s_l)
        ghost_sel = self.is_ghost_face
        if np.any(ghost_sel):
            s_r[ghost_sel] = self._ghost(
                s_l[ghost_sel], self.face_bc_kind[ghost_sel],
                topo.face_normal[ghost_sel], topo.face_mid[ghost_sel], t)
        gamma = law.max_wavespeed(s_l, s_r, topo.face_normal, topo.face_mid)
        if self.flux_fv.needs_global_coefficient() or \
                self.flux_dg.needs_global_coefficient():
            g = law.mesh_speed_bound(self.mesh.nodes)
            gamma = np.full_like(gamma, float(np.max(gamma)) if g is None else g)
        if not np.all(np.isfinite(gamma)):
            bad = int(np.nonzero(~np.isfinite(gamma))[0][0])
            raise DgfvError(f"non-finite wave speed at face {bad}")
        acc = np.zeros(topo.nsub_total)
        lg = topo.face_length * gamma
        np.add.at(acc, topo.face_left, lg)
        sel = self.interior_faces
        np.add.at(acc, topo.face_right[sel], lg[sel])
        return cfl * float(np.min(self.areas_flat / acc))
