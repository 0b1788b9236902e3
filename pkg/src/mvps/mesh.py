"""Marching-cubes extraction of the zero level set and triangle-mesh helpers."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from ._mc_tables import CORNERS, EDGES, TRIANGLES

logger = logging.getLogger(__name__)

_TRI = np.full((256, 16), -1, dtype=np.int64)
for _case, _tris in enumerate(TRIANGLES):
    _TRI[_case, : len(_tris)] = _tris
_NTRI = np.array([len(t) // 3 for t in TRIANGLES])
_CORNERS = np.array(CORNERS)
_EDGES = np.array(EDGES)


@dataclass
class TriMesh:
    vertices: np.ndarray  # (V, 3)
    triangles: np.ndarray  # (T, 3) int
    normals: np.ndarray  # (V, 3)

    @classmethod
    def empty(cls) -> "TriMesh":
        return cls(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64), np.zeros((0, 3)))

    @property
    def is_empty(self) -> bool:
        return len(self.triangles) == 0

    def face_areas(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        return 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)

    def face_normals(self) -> np.ndarray:
        a, b, c = (self.vertices[self.triangles[:, k]] for k in range(3))
        n = np.cross(b - a, c - a)
        return n / np.maximum(np.linalg.norm(n, axis=1, keepdims=True), 1e-300)

    def sample(self, n: int, seed: int | np.random.Generator = 0) -> np.ndarray:
        """``n`` points uniformly distributed over the surface area."""
        if self.is_empty:
            raise ValueError("cannot sample an empty mesh")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        area = self.face_areas()
        face = rng.choice(len(area), size=n, p=area / area.sum())
        u, v = rng.uniform(size=(2, n))
        flip = u + v > 1
        u[flip], v[flip] = 1 - u[flip], 1 - v[flip]
        a, b, c = (self.vertices[self.triangles[face, k]] for k in range(3))
        return a + u[:, None] * (b - a) + v[:, None] * (c - a)

    def edge_use_counts(self) -> np.ndarray:
        e = np.concatenate([self.triangles[:, [0, 1]], self.triangles[:, [1, 2]], self.triangles[:, [2, 0]]])
        e = np.sort(e, axis=1)
        _, counts = np.unique(e, axis=0, return_counts=True)
        return counts

    def is_watertight(self) -> bool:
        return not self.is_empty and bool(np.all(self.edge_use_counts() == 2))


def _cleanup(verts: np.ndarray, tris: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Merge coincident vertices, drop degenerate triangles and unused vertices."""
    if len(tris) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    uniq, inv = np.unique(verts, axis=0, return_inverse=True)
    tris = inv.reshape(-1)[tris]
    ok = (tris[:, 0] != tris[:, 1]) & (tris[:, 1] != tris[:, 2]) & (tris[:, 0] != tris[:, 2])
    tris = tris[ok]
    a, b, c = (uniq[tris[:, k]] for k in range(3))
    area = 0.5 * np.linalg.norm(np.cross(b - a, c - a), axis=1)
    tris = tris[area > 1e-12]
    used, remap = np.unique(tris, return_inverse=True)
    return uniq[used], remap.reshape(-1, 3)


def marching_cubes_grid(values: np.ndarray, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Zero level set of a sampled grid ``values[i, j, k]`` at the points
    ``lo + (i, j, k) * (hi - lo) / (n - 1)``.

    Cells with a non-finite corner are skipped.  Triangles are oriented so
    their normals point towards positive values.  Returns (vertices, triangles).
    """
    values = np.asarray(values, dtype=np.float64)
    n = np.array(values.shape)
    if values.ndim != 3 or np.any(n < 2):
        raise ValueError(f"need a 3-D grid, got shape {values.shape}")
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    step = (hi - lo) / (n - 1)
    nc = n - 1
    corner_vals = np.stack(
        [values[dx : dx + nc[0], dy : dy + nc[1], dz : dz + nc[2]] for dx, dy, dz in CORNERS], axis=-1
    )
    finite = np.all(np.isfinite(corner_vals), axis=-1)
    inside = np.where(np.isfinite(corner_vals), corner_vals < 0, False)
    case = np.sum(inside.astype(np.int64) << np.arange(8), axis=-1)
    active = finite & (_NTRI[case] > 0)
    cells = np.argwhere(active)
    if len(cells) == 0:
        return np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64)
    cases = case[active]
    tri_edges = _TRI[cases]  # (C, 16)
    cell_rep = np.repeat(np.arange(len(cells)), 16).reshape(len(cells), 16)
    valid = tri_edges >= 0
    e = tri_edges[valid]
    c = cells[cell_rep[valid]]
    # global id of each cell edge: the lower corner plus the edge's axis
    ca = _CORNERS[_EDGES[e, 0]]
    cb = _CORNERS[_EDGES[e, 1]]
    base = c + np.minimum(ca, cb)
    axis = np.argmax(np.abs(cb - ca), axis=1)
    gid = ((axis * n[0] + base[:, 0]) * n[1] + base[:, 1]) * n[2] + base[:, 2]
    uid, inv = np.unique(gid, return_inverse=True)
    # interpolate each unique edge once
    first = np.zeros(len(uid), dtype=np.int64)
    first[inv[::-1]] = np.arange(len(inv))[::-1]
    pa = c[first] + ca[first]
    pb = c[first] + cb[first]
    va = values[pa[:, 0], pa[:, 1], pa[:, 2]]
    vb = values[pb[:, 0], pb[:, 1], pb[:, 2]]
    frac = -va / (vb - va)
    verts = lo + (pa + frac[:, None] * (pb - pa)) * step
    tris = inv.reshape(-1, 3)[:, ::-1].astype(np.int64)
    return _cleanup(verts, tris)


def grid_points(resolution: int, lo, hi) -> np.ndarray:
    axes = [np.linspace(lo[d], hi[d], resolution) for d in range(3)]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 3)


def vertex_normals_from_faces(verts, tris) -> np.ndarray:
    a, b, c = (verts[tris[:, k]] for k in range(3))
    fn = np.cross(b - a, c - a)
    vn = np.zeros_like(verts)
    for k in range(3):
        np.add.at(vn, tris[:, k], fn)
    return vn / np.maximum(np.linalg.norm(vn, axis=1, keepdims=True), 1e-300)


def marching_cubes(fn, resolution: int, bounds=(-1.5, 1.5), grad_fn=None, chunk: int = 262144) -> TriMesh:
    """Extract the zero level set of ``fn`` ((N, 3) -> (N,)) on a cubic grid
    with ``resolution`` samples per axis.  Vertex normals come from
    ``grad_fn`` when given, else from area-weighted face normals."""
    if resolution < 8:
        raise ValueError(f"grid resolution must be >= 8, got {resolution}")
    lo = np.full(3, bounds[0], dtype=np.float64) if np.isscalar(bounds[0]) else np.asarray(bounds[0], float)
    hi = np.full(3, bounds[1], dtype=np.float64) if np.isscalar(bounds[1]) else np.asarray(bounds[1], float)
    pts = grid_points(resolution, lo, hi)
    vals = np.concatenate([np.asarray(fn(pts[i : i + chunk]), dtype=np.float64).reshape(-1) for i in range(0, len(pts), chunk)])
    return mesh_from_grid(vals.reshape((resolution,) * 3), lo, hi, grad_fn)


def mesh_from_grid(values, lo, hi, grad_fn=None) -> TriMesh:
    verts, tris = marching_cubes_grid(values, lo, hi)
    if len(tris) == 0:
        logger.warning("zero level set is empty; returning an empty mesh")
        return TriMesh.empty()
    if grad_fn is not None:
        g = np.asarray(grad_fn(verts), dtype=np.float64)
        normals = g / np.maximum(np.linalg.norm(g, axis=1, keepdims=True), 1e-300)
    else:
        normals = vertex_normals_from_faces(verts, tris)
    return TriMesh(verts, tris, normals)


def write_obj(path, mesh: TriMesh) -> None:
    """ASCII OBJ with vertex normals."""
    with open(path, "w") as f:
        f.write(f"# vertices {len(mesh.vertices)} triangles {len(mesh.triangles)}\n")
        for v in mesh.vertices:
            f.write("v %.9g %.9g %.9g\n" % tuple(v))
        for n in mesh.normals:
            f.write("vn %.9g %.9g %.9g\n" % tuple(n))
        for t in mesh.triangles + 1:
            f.write("f %d//%d %d//%d %d//%d\n" % (t[0], t[0], t[1], t[1], t[2], t[2]))


def read_obj(path) -> TriMesh:
    verts, normals, tris = [], [], []
    with open(path) as f:
        for line in f:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "vn":
                normals.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                tris.append([int(p.split("/")[0]) - 1 for p in parts[1:4]])
    verts = np.array(verts, dtype=np.float64).reshape(-1, 3)
    tris = np.array(tris, dtype=np.int64).reshape(-1, 3)
    normals = np.array(normals, dtype=np.float64).reshape(-1, 3)
    if len(normals) != len(verts):
        normals = vertex_normals_from_faces(verts, tris) if len(tris) else np.zeros_like(verts)
    return TriMesh(verts, tris, normals)
