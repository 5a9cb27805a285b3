"""File outputs: profile/scatter CSV, legacy VTK polygons, diagnostics CSV.

Every file starts with comment lines embedding the serialized run
configuration and a mesh content hash, so results stay attributable.
"""

from __future__ import annotations

import os

import numpy as np


def _header_lines(artifacts):
    cfg = artifacts.config.serialize()
    mesh_hash = artifacts.scheme.mesh.content_hash()
    return [f"# config: {cfg}", f"# mesh_sha: {mesh_hash}"]


def _var_names(law):
    if not law.is_euler:
        return ["u"]
    return ["rho", "qx", "E"] if law.dim == 1 else ["rho", "qx", "qy", "E"]


def write_profile_csv(artifacts, path, radial=False):
    """Subcell centroid coordinates (or radii) vs submeans and theta."""
    scheme = artifacts.scheme
    law = scheme.law
    cent = scheme.topo.sub_centroids.reshape(-1, scheme.mesh.dim)
    state = artifacts.state.reshape(-1, law.nvars)
    names = _var_names(law)
    cols, head = [], []
    if radial:
        cols.append(np.linalg.norm(cent, axis=1))
        head.append("radius")
    else:
        head.extend("xy"[: scheme.mesh.dim])
        cols.extend(cent.T)
    for i, nm in enumerate(names):
        head.append(nm)
        cols.append(state[:, i])
    if law.is_euler:
        head.append("pressure")
        cols.append(law.pressure(state))
    if artifacts.theta_sub is not None:
        head.append("theta")
        cols.append(artifacts.theta_sub.reshape(-1))
    data = np.column_stack(cols)
    order = np.argsort(data[:, 0], kind="stable")
    with open(path, "w") as f:
        for ln in _header_lines(artifacts):
            f.write(ln + "\n")
        f.write(",".join(head) + "\n")
        np.savetxt(f, data[order], delimiter=",", fmt="%.12g")


def write_vtk(artifacts, path):
    """Legacy ASCII VTK: one flat polygon per subcell with cell data."""
    scheme = artifacts.scheme
    if scheme.mesh.dim != 2:
        raise ValueError("VTK output is 2D-only; use the profile CSV in 1D")
    law = scheme.law
    topo, ref = scheme.topo, scheme.ref
    points = []
    polys = []
    for c in range(scheme.mesh.ncells):
        for m in range(ref.nsub):
            poly = _subcell_outline(scheme, c, m)
            start = len(points)
            points.extend(poly)
            polys.append(list(range(start, start + len(poly))))
    state = artifacts.state.reshape(-1, law.nvars)
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(" ".join(_header_lines(artifacts))[:250] + "\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {len(points)} double\n")
        for p in points:
            f.write(f"{p[0]:.12g} {p[1]:.12g} 0\n")
        size = sum(len(p) + 1 for p in polys)
        f.write(f"CELLS {len(polys)} {size}\n")
        for p in polys:
            f.write(str(len(p)) + " " + " ".join(map(str, p)) + "\n")
        f.write(f"CELL_TYPES {len(polys)}\n")
        f.write("7\n" * len(polys))
        f.write(f"CELL_DATA {len(polys)}\n")
        for i, nm in enumerate(_var_names(law)):
            f.write(f"SCALARS {nm} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(f, state[:, i], fmt="%.12g")
        if law.is_euler:
            f.write("SCALARS pressure double 1\nLOOKUP_TABLE default\n")
            np.savetxt(f, law.pressure(state), fmt="%.12g")
        if artifacts.theta_sub is not None:
            f.write("SCALARS theta double 1\nLOOKUP_TABLE default\n")
            np.savetxt(f, artifacts.theta_sub.reshape(-1), fmt="%.12g")


def _subcell_outline(scheme, c, m):
    """Outer boundary of a subcell as an ordered physical vertex loop."""
    ref = scheme.ref
    pieces = ref.pieces[m]
    if len(pieces) == 1:
        ring = pieces[0]
    else:
        # union of pieces: walk the edges that appear exactly once
        edges = {}
        for poly in pieces:
            n = len(poly)
            for i in range(n):
                a = tuple(np.round(poly[i], 10))
                b = tuple(np.round(poly[(i + 1) % n], 10))
                if (b, a) in edges:
                    del edges[(b, a)]
                else:
                    edges[(a, b)] = (poly[i], poly[(i + 1) % n])
        succ = {a: (a2, b2) for (a, b), (a2, b2) in edges.items()}
        start = next(iter(succ))
        ring = [succ[start][0]]
        cur = start
        for _ in range(len(succ) - 1):
            nxt = tuple(np.round(succ[cur][1], 10))
            ring.append(succ[cur][1])
            cur = nxt
        ring = np.asarray(ring)
    return scheme.topo.map_points(np.asarray(ring))[c]


def write_diagnostics_csv(artifacts, path):
    """Per-step time series: dt, theta stats, binding counts, drift."""
    law = artifacts.scheme.law
    strategies = sorted({k for d in artifacts.diagnostics
                         for k in d["binding"]})
    with open(path, "w") as f:
        for ln in _header_lines(artifacts):
            f.write(ln + "\n")
        head = ["step", "t", "dt", "theta_min", "theta_mean", "poisoned",
                "positivity_fallbacks"]
        head += [f"bind_{s}" for s in strategies]
        head += [f"drift_{i}" for i in range(law.nvars)]
        f.write(",".join(head) + "\n")
        for i, d in enumerate(artifacts.diagnostics):
            row = [i + 1, d["t"], d["dt"], d["theta_min"], d["theta_mean"],
                   d["poisoned"], d["positivity_fallbacks"]]
            row += [d["binding"].get(s, 0) for s in strategies]
            row += list(d["drift"])
            f.write(",".join(f"{v:.12g}" if isinstance(v, float) else str(v)
                             for v in row) + "\n")


def write_convergence_csv(rows, config, path):
    with open(path, "w") as f:
        f.write(f"# config: {config.serialize()}\n")
        f.write("ncells,h,e_l1,q_l1,e_l2,q_l2,theta_min,theta_mean\n")
        for r in rows:
            f.write(f"{r['ncells']},{r['h']:.12g},{r['e_l1']:.12g},"
                    f"{r['q_l1']:.4g},{r['e_l2']:.12g},{r['q_l2']:.4g},"
                    f"{r['theta_min']:.12g},{r['theta_mean']:.12g}\n")


def write_outputs(artifacts, out_dir, selections=("profile", "diagnostics")):
    """Write the selected artifact files into out_dir; returns the paths."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    name = artifacts.config.case
    if "profile" in selections:
        p = os.path.join(out_dir, f"{name}_profile.csv")
        write_profile_csv(artifacts, p, radial=artifacts.scheme.mesh.dim == 2)
        written.append(p)
    if "vtk" in selections and artifacts.scheme.mesh.dim == 2:
        p = os.path.join(out_dir, f"{name}.vtk")
        write_vtk(artifacts, p)
        written.append(p)
    if "diagnostics" in selections:
        p = os.path.join(out_dir, f"{name}_diagnostics.csv")
        write_diagnostics_csv(artifacts, p)
        written.append(p)
    return written
