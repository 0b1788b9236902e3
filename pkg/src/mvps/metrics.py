"""Point-set metrics, ground-truth surface samples and planar surface profiles."""

from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np
from scipy.spatial import cKDTree

from .mesh import TriMesh, marching_cubes

logger = logging.getLogger(__name__)

CHAMFER_CONVENTION = "chamfer_l2 = mean_a min_b |a-b|^2 + mean_b min_a |a-b|^2"


def _check(A, B):
    A = np.asarray(A, dtype=np.float64).reshape(-1, 3)
    B = np.asarray(B, dtype=np.float64).reshape(-1, 3)
    if len(A) == 0 or len(B) == 0:
        raise ValueError(f"point sets must be non-empty (got {len(A)} and {len(B)} points)")
    return A, B


def nearest_distances(A, B) -> np.ndarray:
    """Distance from every point of A to its nearest neighbour in B."""
    A, B = _check(A, B)
    d, _ = cKDTree(B).query(A, k=1)
    return d


def chamfer_l2(A, B) -> float:
    A, B = _check(A, B)
    dab = nearest_distances(A, B)
    dba = nearest_distances(B, A)
    return float(np.mean(dab**2) + np.mean(dba**2))


@dataclass
class EvalReport:
    chamfer_l2: float
    fscore: float
    precision: float
    recall: float
    tau: float
    n_pred: int
    n_gt: int

    def as_row(self) -> dict:
        return asdict(self)

    def text(self) -> str:
        return (
            f"# {CHAMFER_CONVENTION}\n"
            f"chamfer_l2 {self.chamfer_l2:.9g}\n"
            f"fscore {self.fscore:.9g} (tau {self.tau:.9g})\n"
            f"precision {self.precision:.9g}\n"
            f"recall {self.recall:.9g}\n"
            f"samples pred {self.n_pred} gt {self.n_gt}\n"
        )


def harmonic(p: float, r: float) -> float:
    return 0.0 if p + r == 0 else 2.0 * p * r / (p + r)


def fscore(A, B, tau: float) -> EvalReport:
    """Precision: share of A within ``tau`` of B.  Recall: share of B within
    ``tau`` of A."""
    if not tau > 0:
        raise ValueError(f"F-score threshold must be positive, got {tau}")
    A, B = _check(A, B)
    dab = nearest_distances(A, B)
    dba = nearest_distances(B, A)
    p = float(np.mean(dab < tau))
    r = float(np.mean(dba < tau))
    return EvalReport(float(np.mean(dab**2) + np.mean(dba**2)), harmonic(p, r), p, r, tau, len(A), len(B))


def evaluate(pred: TriMesh | np.ndarray, gt_points: np.ndarray, tau: float, n_samples: int = 100_000, seed: int = 0) -> EvalReport:
    """Compare a predicted mesh (sampled by area) or point set to ground truth."""
    if isinstance(pred, TriMesh):
        if pred.is_empty:
            logger.warning("empty predicted mesh; reporting infinite Chamfer distance")
            return EvalReport(float("inf"), 0.0, 0.0, 0.0, tau, 0, len(gt_points))
        pred = pred.sample(n_samples, seed)
    return fscore(pred, gt_points, tau)


def surface_samples(sdf, sdf_grad, n: int, bounds: float, resolution: int = 128, seed: int = 0, iters: int = 3) -> np.ndarray:
    """Area-uniform samples on the zero level set of an analytic SDF.

    Samples of a fine marching-cubes mesh are projected onto the exact
    surface with a few steps of p <- p - f(p) grad f(p).
    """
    m = marching_cubes(sdf, resolution, (-bounds, bounds))
    p = m.sample(n, seed)
    for _ in range(iters):
        g = sdf_grad(p)
        p = p - sdf(p)[:, None] * g / np.maximum(np.sum(g * g, axis=1, keepdims=True), 1e-300)
    return p


# ---------------------------------------------------------------------------
# planar profiles
# ---------------------------------------------------------------------------


def _plane_basis(normal, up=None):
    n = np.asarray(normal, dtype=np.float64)
    n = n / np.linalg.norm(n)
    if up is None:
        up = np.array([0.0, 0.0, 1.0]) if abs(n[2]) < 0.9 else np.array([0.0, 1.0, 0.0])
    u = np.asarray(up, dtype=np.float64) - np.dot(up, n) * n
    u /= np.linalg.norm(u)
    return n, u


def surface_profile(mesh: TriMesh, point, normal, up=None) -> list[np.ndarray]:
    """Intersect the mesh with a plane and chain the pieces into polylines.

    Returns a list of (K, 3) arrays; a closed curve repeats its first vertex
    at the end.  Vertices lying exactly on the plane count as positive side.
    """
    if mesh.is_empty:
        logger.warning("empty mesh; no profile")
        return []
    n, _ = _plane_basis(normal, up)
    d = (mesh.vertices - np.asarray(point, dtype=np.float64)) @ n
    pos = d >= 0
    tris = mesh.triangles
    adj: dict[tuple, list[tuple]] = {}
    cut_points: dict[tuple, np.ndarray] = {}
    for t in tris[(pos[tris].sum(axis=1) % 3) != 0]:
        keys = []
        for a, b in ((t[0], t[1]), (t[1], t[2]), (t[2], t[0])):
            if pos[a] != pos[b]:
                k = (min(a, b), max(a, b))
                if k not in cut_points:
                    f = d[k[0]] / (d[k[0]] - d[k[1]])
                    cut_points[k] = mesh.vertices[k[0]] + f * (mesh.vertices[k[1]] - mesh.vertices[k[0]])
                keys.append(k)
        k0, k1 = keys
        adj.setdefault(k0, []).append(k1)
        adj.setdefault(k1, []).append(k0)
    if not adj:
        logger.warning("plane does not intersect the mesh; empty profile")
        return []
    seen: set = set()
    lines = []
    # open chains start at endpoints (degree 1) so they are walked whole
    starts = sorted(adj, key=lambda k: (len(adj[k]) != 1, k))
    for s in starts:
        if s in seen:
            continue
        chain = [s]
        seen.add(s)
        cur = s
        while True:
            nxt = [k for k in adj[cur] if k not in seen]
            if not nxt:
                break
            cur = nxt[0]
            chain.append(cur)
            seen.add(cur)
        pts = np.array([cut_points[k] for k in chain])
        if len(chain) > 2 and s in adj[chain[-1]]:
            pts = np.vstack([pts, pts[:1]])
        lines.append(pts)
    return lines


def profile_table(polylines: list[np.ndarray], normal, up=None) -> np.ndarray:
    """Rows (curve, arc_length, height, x, y, z); height is the coordinate along
    the in-plane ``up`` direction."""
    _, u = _plane_basis(normal, up)
    rows = []
    for ci, pl in enumerate(polylines):
        seg = np.linalg.norm(np.diff(pl, axis=0), axis=1)
        s = np.concatenate([[0.0], np.cumsum(seg)])
        h = pl @ u
        rows.append(np.column_stack([np.full(len(pl), ci), s, h, pl]))
    return np.vstack(rows) if rows else np.zeros((0, 6))


def write_profile_csv(path, polylines, normal, up=None) -> None:
    table = profile_table(polylines, normal, up)
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["curve", "arc_length", "height", "x", "y", "z"])
        for r in table:
            w.writerow([int(r[0])] + ["%.9g" % x for x in r[1:]])
