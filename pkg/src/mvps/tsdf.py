"""Truncated signed-distance fusion of depth maps, used as a baseline."""

from __future__ import annotations

import logging

import numpy as np

from .mesh import TriMesh, grid_points, mesh_from_grid

logger = logging.getLogger(__name__)


def tsdf_volume(
    depth_maps: list[tuple],
    voxel_size: float,
    truncation: float,
    bounds: float = 1.5,
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Fuse ``(view, depth, weight)`` triples into a voxel grid.

    ``depth`` is camera-frame z per pixel (<= 0 means no measurement) and
    ``weight`` the per-pixel confidence.  Each voxel stores the
    confidence-weighted mean of min(d - z, truncation) over views where the
    voxel lies in front of, or at most one truncation band behind, the
    measured surface.  Returns (tsdf grid with NaN where unobserved, weight
    grid, lo, hi).
    """
    if not depth_maps:
        raise ValueError("tsdf fusion needs at least one depth map")
    if voxel_size <= 0 or truncation <= 0:
        raise ValueError("voxel size and truncation must be positive")
    res = int(np.floor(2 * bounds / voxel_size)) + 1
    lo = np.full(3, -bounds)
    hi = lo + (res - 1) * voxel_size
    pts = grid_points(res, lo, hi)
    acc = np.zeros(len(pts))
    wsum = np.zeros(len(pts))
    for view, depth, weight in depth_maps:
        cam = (pts - view.t) @ view.R  # R^T (X - t)
        z = cam[:, 2]
        front = z > 1e-9
        proj = cam[front] @ view.K.T
        u = np.rint(proj[:, 0] / proj[:, 2]).astype(np.int64)
        v = np.rint(proj[:, 1] / proj[:, 2]).astype(np.int64)
        inside = (u >= 0) & (u < view.width) & (v >= 0) & (v < view.height)
        idx = np.nonzero(front)[0][inside]
        d = depth[v[inside], u[inside]]
        w = weight[v[inside], u[inside]]
        sdf = d - z[idx]
        use = (d > 0) & (w > 0) & (sdf > -truncation)
        idx, sdf, w = idx[use], np.minimum(sdf[use], truncation), w[use]
        acc[idx] += w * sdf
        wsum[idx] += w
    tsdf = np.full(len(pts), np.nan)
    seen = wsum > 0
    tsdf[seen] = acc[seen] / wsum[seen]
    shape = (res,) * 3
    return tsdf.reshape(shape), wsum.reshape(shape), lo, hi


def tsdf_fuse(depth_maps: list[tuple], voxel_size: float, truncation: float, bounds: float = 1.5) -> TriMesh:
    grid, wsum, lo, hi = tsdf_volume(depth_maps, voxel_size, truncation, bounds)
    if not np.any(wsum > 0):
        logger.warning("no voxel observed by any depth map; empty mesh")
        return TriMesh.empty()
    return mesh_from_grid(grid, lo, hi)


def prior_depth_maps(ds, priors, gated_only: bool = False) -> list[tuple]:
    """(view, depth, confidence) triples from the depth priors, restricted to
    the object mask (or to the depth gate when ``gated_only``)."""
    out = []
    for v, view in enumerate(ds.views):
        keep = priors[v].depth.gate if gated_only else ds.mask[v]
        out.append((view, np.where(keep, priors[v].depth.depth, 0.0), np.where(keep, priors[v].depth.confidence, 0.0)))
    return out
