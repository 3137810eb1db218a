"""Tree figures: mean trajectories, 1-sigma ellipses, obstacles, workspace and goal.

Figures are drawn on a bare ``matplotlib.figure.Figure`` (no pyplot state) and
saved with a fixed hash salt and no timestamp, so the same tree always yields
the same bytes.
"""
from __future__ import annotations

import numpy as np
from matplotlib import rcParams
from matplotlib.collections import EllipseCollection, LineCollection, PolyCollection
from matplotlib.figure import Figure
from scipy.optimize import linprog
from scipy.spatial import HalfspaceIntersection

from drrrt.dynamics import solve_riccati, steer_with

SVG_SALT = "drrrt"

STYLE = {
    "edge": "#1f77b4",
    "ellipse": "#ff7f0e",
    "obstacle": "#555555",
    "goal": "#2ca02c",
    "path": "#d62728",
    "workspace": "black",
}


def polygon_2d(P, dims=(0, 1), fallback_box=None):
    """Vertices (counter-clockwise) of a polytope's slice onto two coordinates.

    Only rows whose normals are supported on ``dims`` are used, which is exact
    for obstacles and regions defined on positions alone.
    """
    dims = list(dims)
    A = P.A[:, dims]
    other = np.delete(P.A, dims, axis=1)
    keep = np.all(other == 0, axis=1)
    A, b = A[keep], P.b[keep]
    if fallback_box is not None:
        (x0, y0), (x1, y1) = fallback_box
        A = np.vstack([A, [[1, 0], [-1, 0], [0, 1], [0, -1]]])
        b = np.concatenate([b, [x1, -x0, y1, -y0]])
    # the Chebyshev center is a strictly interior point, which qhull needs
    norms = np.linalg.norm(A, axis=1)
    res = linprog(np.r_[0, 0, -1], A_ub=np.c_[A, norms], b_ub=b, bounds=[(None, None)] * 2 + [(0, None)], method="highs")
    if res.status != 0 or res.x[2] <= 0:
        return np.zeros((0, 2))
    hs = HalfspaceIntersection(np.c_[A, -b], res.x[:2])
    pts = hs.intersections
    c = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]))
    return pts[order]


def ellipse_params(cov2, nsig: float = 1.0):
    """Width, height and angle (degrees) of the n-sigma ellipse of a 2x2 covariance."""
    w, V = np.linalg.eigh(cov2)
    w = np.clip(w, 0.0, None)
    angle = np.degrees(np.arctan2(V[1, 1], V[0, 1]))
    return 2 * nsig * np.sqrt(w[1]), 2 * nsig * np.sqrt(w[0]), angle


def _edges(tree, sys, params):
    """Mean polylines of every edge; recomputed when the tree came from a dump."""
    ric = None
    for node in tree.nodes[1:]:
        if node.edge_mean is not None:
            yield node.edge_mean, node.edge_cov
            continue
        if ric is None:
            ric = solve_riccati(sys, params.Q, params.R, params.T_steer)
        st = steer_with(sys, ric, tree[node.parent].state, node.target)
        yield st.mean_path[: node.steps + 1], st.cov_path[: node.steps + 1]


def tree_figure(tree, env, sys, params, best_path=None, title=None, ellipses: str = "nodes") -> Figure:
    """Draw a planner tree.

    ``ellipses`` is ``"nodes"`` (one 1-sigma ellipse per node), ``"steps"``
    (every propagated step) or ``"none"``.
    """
    dims = list(env.position_dims)
    lo = np.array([env.sampling_bounds[d][0] for d in dims])
    hi = np.array([env.sampling_bounds[d][1] for d in dims])
    box = (lo, hi)

    fig = Figure(figsize=(6, 6))
    ax = fig.add_subplot(1, 1, 1)
    ax.set_aspect("equal")
    pad = 0.02 * (hi - lo)
    ax.set_xlim(lo[0] - pad[0], hi[0] + pad[0])
    ax.set_ylim(lo[1] - pad[1], hi[1] + pad[1])

    ws = polygon_2d(env.X, dims, box)
    ax.add_collection(PolyCollection([ws], facecolors="none", edgecolors=STYLE["workspace"], linewidths=1.0))
    obs = [polygon_2d(env.obstacle_at(i, 0), dims, box) for i in range(env.N)]
    obs = [p for p in obs if len(p)]
    if obs:
        ax.add_collection(PolyCollection(obs, facecolors=STYLE["obstacle"], edgecolors="none", alpha=0.8))
    if env.goal is not None:
        g = polygon_2d(env.goal, dims, box)
        if len(g):
            ax.add_collection(PolyCollection([g], facecolors=STYLE["goal"], edgecolors="none", alpha=0.4))

    segs, centers, covs = [], [], []
    for mean_path, cov_path in _edges(tree, sys, params):
        segs.append(mean_path[:, dims])
        if ellipses == "steps":
            centers.extend(mean_path[1:, dims])
            covs.extend(cov_path[1:][:, dims][:, :, dims])
    if ellipses == "nodes":
        centers = [nd.state.mean[dims] for nd in tree.nodes]
        covs = [nd.state.cov[np.ix_(dims, dims)] for nd in tree.nodes]
    if segs:
        ax.add_collection(LineCollection(segs, colors=STYLE["edge"], linewidths=0.4))
    if centers:
        w, h, ang = np.array([ellipse_params(c) for c in covs]).T
        ax.add_collection(EllipseCollection(w, h, ang, units="xy", offsets=np.array(centers),
                                            offset_transform=ax.transData, facecolors="none",
                                            edgecolors=STYLE["ellipse"], linewidths=0.4))
    root = tree[0].state.mean[dims]
    ax.plot([root[0]], [root[1]], "o", color="black", markersize=4)
    if best_path:
        pts = np.array([tree[i].state.mean[dims] for i in best_path])
        ax.plot(pts[:, 0], pts[:, 1], "-", color=STYLE["path"], linewidth=1.5)
    if title:
        ax.set_title(title, fontsize=10)
    ax.set_xlabel(f"x[{dims[0]}]")
    ax.set_ylabel(f"x[{dims[1]}]")
    return fig


def save_svg(fig: Figure, path) -> None:
    """Write an SVG whose bytes depend only on the figure content."""
    old = rcParams["svg.hashsalt"]
    rcParams["svg.hashsalt"] = SVG_SALT
    try:
        fig.savefig(path, format="svg", metadata={"Date": None})
    finally:
        rcParams["svg.hashsalt"] = old
