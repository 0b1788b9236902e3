"""On-disk dataset layout.

::

    <root>/meta.json                   V, L, bounding radius, BRDF tag, ...
    <root>/cameras.json                per-view K, R, t (row-major), lights
    <root>/view_000/light_000.pfm ...  one RGB PFM per light
    <root>/view_000/median.pfm
    <root>/view_000/mask.pgm
    <root>/view_000/gt_depth.pfm
    <root>/view_000/gt_normal.pfm
    <root>/view_000/prior_depth.pfm    (after the priors stage)
    <root>/view_000/prior_conf.pfm
    <root>/view_000/prior_normal.pfm
    <root>/view_000/prior_var.pfm
    <root>/view_000/gate_mvs.pgm
    <root>/view_000/gate_ps.pgm
    <root>/priors.json                 ensemble size of the normal prior

``cameras.json`` matrices are row-major; ``R`` and ``t`` map camera to world
coordinates (``X_w = R X_c + t``).  Light directions are world-frame unit
vectors pointing towards the light.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .imageio import read_pfm, read_pgm, write_pfm, write_pgm
from .priors import DepthPrior, NormalPrior, ViewPriors
from .scene import CameraView, LightRig, PSImageSet

FORMAT_VERSION = 1


class DatasetError(ValueError):
    pass


def view_dir(root, v: int) -> str:
    return os.path.join(root, f"view_{v:03d}")


def write_dataset(ds: PSImageSet, root) -> None:
    os.makedirs(root, exist_ok=True)
    cams = []
    for v, view in enumerate(ds.views):
        cams.append(
            {
                "index": v,
                "width": view.width,
                "height": view.height,
                "K": view.K.reshape(-1).tolist(),
                "R": view.R.reshape(-1).tolist(),
                "t": view.t.tolist(),
                "light_directions": ds.light_directions(v).tolist(),
                "light_intensities": ds.rig.intensities.tolist(),
            }
        )
    with open(os.path.join(root, "cameras.json"), "w") as f:
        json.dump(
            {
                "format_version": FORMAT_VERSION,
                "convention": "row-major; X_world = R @ X_camera + t; light directions world-frame, towards light",
                "light_directions_camera": ds.rig.directions.tolist(),
                "views": cams,
            },
            f,
            indent=1,
        )
    meta = dict(ds.meta)
    meta.update(format_version=FORMAT_VERSION, views=ds.V, lights=ds.L)
    with open(os.path.join(root, "meta.json"), "w") as f:
        json.dump(meta, f, indent=1, sort_keys=True)
    for v in range(ds.V):
        d = view_dir(root, v)
        os.makedirs(d, exist_ok=True)
        for j in range(ds.L):
            write_pfm(os.path.join(d, f"light_{j:03d}.pfm"), ds.images[v, j])
        write_pfm(os.path.join(d, "median.pfm"), ds.median[v])
        write_pgm(os.path.join(d, "mask.pgm"), ds.mask[v])
        write_pfm(os.path.join(d, "gt_depth.pfm"), ds.depth[v])
        write_pfm(os.path.join(d, "gt_normal.pfm"), ds.normal[v])


def write_priors(priors: list[ViewPriors], root) -> None:
    for v, p in enumerate(priors):
        d = view_dir(root, v)
        os.makedirs(d, exist_ok=True)
        write_pfm(os.path.join(d, "prior_depth.pfm"), p.depth.depth)
        write_pfm(os.path.join(d, "prior_conf.pfm"), p.depth.confidence)
        write_pfm(os.path.join(d, "prior_normal.pfm"), p.normal.normal)
        write_pfm(os.path.join(d, "prior_var.pfm"), p.normal.variance)
        write_pgm(os.path.join(d, "gate_mvs.pgm"), p.depth.gate)
        write_pgm(os.path.join(d, "gate_ps.pgm"), p.normal.gate)
    if priors:
        with open(os.path.join(root, "priors.json"), "w") as f:
            json.dump({"ensemble_size": int(priors[0].normal.ensemble_size)}, f)


def _require(path, what):
    if not os.path.exists(path):
        raise DatasetError(f"missing {what}: {path}")
    return path


def _matrix(entry, key, shape, path):
    try:
        return np.asarray(entry[key], dtype=np.float64).reshape(shape)
    except (KeyError, ValueError, TypeError):
        raise DatasetError(f"{path}: field '{key}' of view {entry.get('index', '?')} is missing or malformed") from None


def load_cameras(root, tol: float = 1e-6) -> tuple[list[CameraView], LightRig]:
    path = _require(os.path.join(root, "cameras.json"), "camera file")
    with open(path) as f:
        doc = json.load(f)
    if "views" not in doc:
        raise DatasetError(f"{path}: field 'views' missing")
    views = []
    intensities = None
    for entry in doc["views"]:
        K = _matrix(entry, "K", (3, 3), path)
        R = _matrix(entry, "R", (3, 3), path)
        t = _matrix(entry, "t", (3,), path)
        if not np.allclose(R.T @ R, np.eye(3), atol=tol) or abs(np.linalg.det(R) - 1.0) > tol:
            raise DatasetError(f"{path}: rotation of view {entry.get('index')} is not orthonormal within {tol}")
        views.append(CameraView(K, R, t, int(entry["width"]), int(entry["height"])))
        intensities = _matrix(entry, "light_intensities", (-1,), path)
    if "light_directions_camera" in doc:
        cam_dirs = np.asarray(doc["light_directions_camera"], dtype=np.float64)
    else:
        cam_dirs = _matrix(doc["views"][0], "light_directions", (-1, 3), path) @ views[0].R
    return views, LightRig(cam_dirs, intensities)


def load_meta(root) -> dict:
    mpath = _require(os.path.join(root, "meta.json"), "metadata file")
    with open(mpath) as f:
        meta = json.load(f)
    for key in ("views", "lights", "bounding_radius", "brdf"):
        if key not in meta:
            raise DatasetError(f"{mpath}: field '{key}' missing")
    return meta


def load_dataset(root, with_priors: bool | None = None):
    """Load a dataset directory.

    Returns ``(PSImageSet, priors)`` where ``priors`` is a list of
    :class:`ViewPriors` or None.  With ``with_priors=None`` priors are loaded
    when present; ``True`` makes them mandatory.
    """
    if not os.path.isdir(root):
        raise DatasetError(f"dataset directory not found: {root}")
    mpath = os.path.join(root, "meta.json")
    meta = load_meta(root)
    views, rig = load_cameras(root)
    V, L = int(meta["views"]), int(meta["lights"])
    if len(views) != V or len(rig) != L:
        raise DatasetError(f"{mpath}: V={V}, L={L} disagree with cameras.json ({len(views)} views, {len(rig)} lights)")
    missing_masks = [v for v in range(V) if not os.path.exists(os.path.join(view_dir(root, v), "mask.pgm"))]
    if missing_masks:
        raise DatasetError(f"mask.pgm missing for view(s) {missing_masks}")
    images, median, mask, depth, normal = [], [], [], [], []
    for v in range(V):
        d = view_dir(root, v)
        images.append([read_pfm(_require(os.path.join(d, f"light_{j:03d}.pfm"), f"image of view {v}")) for j in range(L)])
        median.append(read_pfm(_require(os.path.join(d, "median.pfm"), f"median of view {v}")))
        mask.append(read_pgm(os.path.join(d, "mask.pgm")))
        depth.append(read_pfm(_require(os.path.join(d, "gt_depth.pfm"), f"depth of view {v}")))
        normal.append(read_pfm(_require(os.path.join(d, "gt_normal.pfm"), f"normals of view {v}")))
    ds = PSImageSet(
        views=views,
        rig=rig,
        images=np.asarray(images),
        median=np.asarray(median),
        mask=np.asarray(mask),
        depth=np.asarray(depth),
        normal=np.asarray(normal),
        meta=meta,
    )
    has_priors = os.path.exists(os.path.join(view_dir(root, 0), "prior_depth.pfm"))
    if with_priors is True and not has_priors:
        raise DatasetError(f"priors missing under {root}; run the priors stage first")
    priors = load_priors(root, V) if (has_priors and with_priors is not False) else None
    return ds, priors


def load_priors(root, V: int) -> list[ViewPriors]:
    ppath = os.path.join(root, "priors.json")
    ensemble = 0  # unknown for priors written without the summary file
    if os.path.exists(ppath):
        with open(ppath) as f:
            ensemble = int(json.load(f).get("ensemble_size", 0))
    out = []
    for v in range(V):
        d = view_dir(root, v)

        def pf(name):
            return read_pfm(_require(os.path.join(d, name), f"{name} of view {v}"))

        def pg(name):
            return read_pgm(_require(os.path.join(d, name), f"{name} of view {v}"))

        var = pf("prior_var.pfm")
        out.append(
            ViewPriors(
                DepthPrior(pf("prior_depth.pfm"), pf("prior_conf.pfm"), pg("gate_mvs.pgm")),
                NormalPrior(pf("prior_normal.pfm"), var, pg("gate_ps.pgm"), ensemble_size=ensemble),
            )
        )
    return out
