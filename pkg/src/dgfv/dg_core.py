"""DG residuals and reconstructed fluxes.

The residual collects the volume quadrature of F(u_h).grad(sigma) minus
the face quadrature of sigma times the numerical flux.  Reconstructed
fluxes are the unique subgrid face fluxes whose finite-volume divergence
reproduces the DG submean dynamics; on the cell boundary they are the
numerical-flux integrals over the conforming segments.  Non-finite values
propagate untouched so the blending stage can react to them.
"""

from __future__ import annotations

import numpy as np

from .errors import DgfvError


def exchange_traces(scheme, moments, t):
    """Evaluate both-side polynomial traces at every mesh-face point.

    Returns (u_left, u_right) of shape (nmf, points_per_edge, nvars);
    boundary faces hold ghost values on the right.
    """
    topo = scheme.topo
    ds = scheme.nvars
    tr = np.matmul(scheme.ops.trace_matrix[None], moments)
    trf = tr.reshape(-1, ds)
    u_lq = trf[scheme.lrow.reshape(-1)].reshape(topo.nmf, scheme.ppe, ds)
    u_rq = np.where(
        scheme.has_neighbor[:, None, None],
        trf[np.maximum(scheme.rrow, 0).reshape(-1)].reshape(
            topo.nmf, scheme.ppe, ds),
        u_lq)
    bnd = ~scheme.has_neighbor
    if np.any(bnd):
        gh = scheme._ghost(
            u_lq[bnd].reshape(-1, ds),
            np.repeat(topo.mf_bc[bnd], scheme.ppe),
            scheme.nfq[bnd].reshape(-1, scheme.mesh.dim),
            scheme.xfq[bnd].reshape(-1, scheme.mesh.dim), t)
        u_rq[bnd] = gh.reshape(-1, scheme.ppe, ds)
    return u_lq, u_rq


def volume_term(scheme, moments):
    """Quadrature of F(u_h) . grad(sigma_p) over every cell."""
    uq = np.matmul(scheme.ops.basis_at_volume[None], moments)
    fq = scheme.law.flux(uq, scheme.xvol)
    nc, q = fq.shape[0], fq.shape[1]
    ds, dim = scheme.nvars, scheme.mesh.dim
    tmp = np.matmul(fq.reshape(nc, q * ds, dim), np.swapaxes(scheme.jw, 1, 2))
    wg = (scheme.ops.volume.weights[:, None, None]
          * scheme.ops.grad_at_volume)
    return np.tensordot(tmp.reshape(nc, q, ds, dim), wg,
                        axes=([1, 3], [0, 2])).swapaxes(1, 2)


def surface_term(scheme, wf):
    """Scatter weighted flux values against both sides' trace bases."""
    topo, ops = scheme.topo, scheme.ops
    nc, ds = scheme.mesh.ncells, scheme.nvars
    surf = np.zeros((nc, ops.nk, ds))
    nedges = len(scheme.ref.edge_segments)
    base = np.arange(scheme.ppe)
    for e in range(nedges):
        t_e = ops.trace_matrix[ops.edge_offsets[e]:
                               ops.edge_offsets[e] + scheme.ppe]
        sel = topo.mf_left_edge == e
        if np.any(sel):
            contrib = np.matmul(np.swapaxes(wf[sel], 1, 2), t_e)
            np.add.at(surf, topo.mf_left_cell[sel], np.swapaxes(contrib, 1, 2))
        sel = (topo.mf_right_edge == e) & scheme.has_neighbor
        if np.any(sel):
            rev = topo.mf_reversed[sel]
            perm = np.where(rev[:, None], scheme.ppe - 1 - base[None, :],
                            base[None, :])
            w_r = -np.take_along_axis(wf[sel], perm[:, :, None], axis=1)
            contrib = np.matmul(np.swapaxes(w_r, 1, 2), t_e)
            np.add.at(surf, topo.mf_right_cell[sel], np.swapaxes(contrib, 1, 2))
    return surf


def dg_residual(scheme, moments, t, return_face_data=False):
    """Full DG residual; optionally also the face flux data it consumed.

    Non-finite entries are propagated, not masked: downstream blending
    zeroes the affected reconstructed fluxes.
    """
    u_lq, u_rq = exchange_traces(scheme, moments, t)
    gamma_global = scheme._global_coefficient_traces(u_lq, u_rq)
    fnum, _ = scheme.flux_dg(scheme.law, u_lq, u_rq, scheme.nfq, scheme.xfq,
                             gamma_global)
    wf = scheme.wfq[..., None] * fnum
    phi = volume_term(scheme, moments) - surface_term(scheme, wf)
    if return_face_data:
        return phi, wf, fnum, (u_lq, u_rq), gamma_global
    return phi


def boundary_contributions(scheme, wf):
    """Per-subcell boundary flux integrals and per-segment totals.

    Returns (B, bseg): B collects each subcell's share of its cell's
    boundary flux (both orientations); bseg holds the left-oriented
    segment integrals reused as the boundary reconstructed fluxes.
    """
    topo = scheme.topo
    nc, ds = scheme.mesh.ncells, scheme.nvars
    bseg = wf.reshape(topo.nmf, topo.nseg, scheme.ng, ds).sum(axis=2)
    b_arr = np.zeros((nc, scheme.ref.nsub, ds))
    np.add.at(b_arr, (topo.mf_left_cell[:, None], topo.mf_left_owner), bseg)
    sel = scheme.has_neighbor
    np.add.at(b_arr, (topo.mf_right_cell[sel][:, None],
                      topo.mf_right_owner[sel]), -bseg[sel])
    return b_arr, bseg


def reconstructed_fluxes(scheme, phi, b_arr, check=False):
    """Length-weighted interior reconstructed fluxes, (ncells, NF, nvars).

    Solves the subdivision graph system through the precomputed Laplacian
    pseudoinverse.  With ``check`` the kernel-consistency of the right-hand
    side (a conservation identity) is asserted instead of projected.
    """
    rhs_vec = np.matmul(scheme.DP[None], phi) + b_arr
    if check:
        resid = rhs_vec.sum(axis=1)
        finite = np.all(np.isfinite(rhs_vec), axis=(1, 2))
        scale = np.abs(rhs_vec[finite]).max() if np.any(finite) else 1.0
        if np.any(np.abs(resid[finite]) > 1e-11 * max(scale, 1e-30)):
            raise DgfvError(
                "reconstructed-flux system inconsistent with the Laplacian "
                "kernel: assembly bug")
    return -np.matmul(scheme.KK[None], rhs_vec)
