"""End-to-end stages: simulate, priors, reconstruct, evaluate, ablate."""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import replace

import numpy as np

from . import dataset as dsio
from .config import RunConfig, worker_count, write_run_config
from .fields import FieldPair
from .mesh import TriMesh, marching_cubes, read_obj, write_obj
from .metrics import EvalReport, evaluate, surface_profile, surface_samples, write_profile_csv
from .priors import MVSOracleConfig, PSOracleConfig, simulate_priors
from .scene import make_scene, render_dataset, turntable_rig
from .train import Trainer
from .tsdf import prior_depth_maps, tsdf_fuse

logger = logging.getLogger(__name__)

ABLATION_COLUMNS = ("variant", "flags", "chamfer_l2", "fscore", "precision", "recall", "tau", "seed")


class MissingInputError(FileNotFoundError):
    pass


def require_dir(path) -> str:
    if not os.path.isdir(path):
        raise MissingInputError(f"input directory not found: {path}")
    return str(path)


# ---------------------------------------------------------------------------
# stages
# ---------------------------------------------------------------------------


def simulate(cfg: RunConfig, out_dir):
    s = cfg.scene
    scene = make_scene(s.shape, s.brdf, texture=s.texture, bounding_radius=s.bounding_radius)
    views, rig = turntable_rig(s.views, s.lights, s.camera_radius, s.elevation, s.bounding_radius, s.resolution)
    ds = render_dataset(scene, views, rig, s.noise_std, cfg.stage_seed("simulate"), workers=worker_count())
    dsio.write_dataset(ds, out_dir)
    write_run_config(cfg, out_dir)
    return ds


def oracle_configs(cfg: RunConfig) -> tuple[MVSOracleConfig, PSOracleConfig]:
    o = cfg.oracle
    return (
        MVSOracleConfig(hypotheses=o.hypotheses, sharpness=o.mvs_sharpness, cost_noise=o.mvs_cost_noise),
        PSOracleConfig(ensemble_size=o.ensemble_size, base_noise=o.ps_base_noise, residual_gain=o.ps_residual_gain),
    )


def make_priors(cfg: RunConfig, data_dir):
    require_dir(data_dir)
    ds, _ = dsio.load_dataset(data_dir, with_priors=False)
    mvs, ps = oracle_configs(cfg)
    pr = simulate_priors(ds, mvs, ps, cfg.stage_seed("priors"), cfg.oracle.tau_mvs, cfg.oracle.tau_ps)
    dsio.write_priors(pr, data_dir)
    write_run_config(cfg, os.path.join(data_dir, "priors_run"))
    return ds, pr


def extract_mesh(fields: FieldPair, resolution: int, bounding_radius: float) -> TriMesh:
    """Zero level set of the field, clipped to the bounding sphere."""

    def fn(p):
        return np.maximum(fields.sdf.sdf(p), np.linalg.norm(p, axis=1) - bounding_radius)

    def grad(p):
        return fields.sdf.sdf_and_gradient(p)[1]

    return marching_cubes(fn, resolution, (-bounding_radius, bounding_radius), grad_fn=grad)


def reconstruct(cfg: RunConfig, data_dir, out_dir, resume: bool = False) -> tuple[FieldPair, TriMesh]:
    require_dir(data_dir)
    ds, pr = dsio.load_dataset(data_dir, with_priors=True)
    loss_cfg = replace(cfg.loss, seed=cfg.stage_seed("reconstruct"))
    os.makedirs(out_dir, exist_ok=True)
    write_run_config(cfg, out_dir)
    if resume and os.path.exists(os.path.join(out_dir, "checkpoint.bin")):
        tr = Trainer.resume(ds, pr, loss_cfg, out_dir)
    else:
        tr = Trainer(ds, pr, loss_cfg, cfg.network, out_dir)
    tr.run()
    radius = float(ds.meta["bounding_radius"])
    m = extract_mesh(tr.fields, cfg.eval.grid_resolution, radius)
    write_obj(os.path.join(out_dir, "mesh.obj"), m)
    return tr.fields, m


def reconstruct_tsdf(cfg: RunConfig, data_dir, out_dir, voxel_size: float | None = None, truncation: float | None = None) -> TriMesh:
    """TSDF-fusion baseline on the depth priors."""
    require_dir(data_dir)
    ds, pr = dsio.load_dataset(data_dir, with_priors=True)
    radius = float(ds.meta["bounding_radius"])
    voxel = voxel_size or 2.0 * radius / (cfg.eval.grid_resolution - 1)
    trunc = truncation or 4.0 * voxel
    m = tsdf_fuse(prior_depth_maps(ds, pr), voxel, trunc, radius)
    os.makedirs(out_dir, exist_ok=True)
    write_run_config(cfg, out_dir)
    write_obj(os.path.join(out_dir, "mesh.obj"), m)
    return m


def ground_truth(meta: dict, n: int, seed: int, resolution: int = 192) -> np.ndarray:
    scene = make_scene(meta["shape"], meta["brdf"], texture=meta.get("texture", "none"), bounding_radius=meta["bounding_radius"])
    return surface_samples(scene.sdf, scene.sdf_grad, n, meta["bounding_radius"], resolution, seed)


def write_report(report: EvalReport, out_dir, name: str = "report") -> None:
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, f"{name}.txt"), "w") as f:
        f.write(report.text())
    with open(os.path.join(out_dir, f"{name}.csv"), "w", newline="") as f:
        row = report.as_row()
        w = csv.writer(f)
        w.writerow(list(row))
        w.writerow(["%.12g" % v if isinstance(v, float) else v for v in row.values()])


def evaluate_mesh(cfg: RunConfig, data_dir, mesh: TriMesh, out_dir=None) -> EvalReport:
    require_dir(data_dir)
    meta = dsio.load_meta(data_dir)
    seed = cfg.stage_seed("evaluate")
    gt = ground_truth(meta, cfg.eval.samples, seed, cfg.eval.gt_resolution)
    tau = cfg.eval.threshold(meta["bounding_radius"])
    report = evaluate(mesh, gt, tau, cfg.eval.samples, seed + 1)
    if out_dir:
        write_report(report, out_dir)
        write_run_config(cfg, out_dir)
        pl = cfg.eval.profile_plane
        if pl and not mesh.is_empty:
            lines = surface_profile(mesh, pl[:3], pl[3:])
            write_profile_csv(os.path.join(out_dir, "profile.csv"), lines, pl[3:])
    return report


def load_mesh_or_checkpoint(path, cfg: RunConfig, bounding_radius: float) -> TriMesh:
    if path.endswith(".obj"):
        return read_obj(path)
    return extract_mesh(FieldPair.load(path), cfg.eval.grid_resolution, bounding_radius)


def variant_name(flags) -> str:
    return "+".join(sorted(flags)) if flags else "full"


def ablate(cfg: RunConfig, data_dir, out_root, flags) -> EvalReport:
    """Train one loss variant, evaluate it and append a row to ablation.csv."""
    flags = sorted(set(flags))
    name = variant_name(flags)
    sub = os.path.join(out_root, name)
    if flags == ["tsdf"]:
        m = reconstruct_tsdf(cfg, data_dir, sub)
    else:
        vcfg = replace(cfg, loss=replace(cfg.loss, flags=flags))
        _, m = reconstruct(vcfg, data_dir, sub)
    report = evaluate_mesh(cfg, data_dir, m, sub)
    append_ablation_row(out_root, name, flags, report, cfg.seed)
    return report


def append_ablation_row(out_root, name, flags, report: EvalReport, seed: int) -> None:
    os.makedirs(out_root, exist_ok=True)
    path = os.path.join(out_root, "ablation.csv")
    fresh = not os.path.exists(path)
    with open(path, "a", newline="") as f:
        w = csv.writer(f)
        if fresh:
            w.writerow(ABLATION_COLUMNS)
        w.writerow([name, " ".join(flags), "%.12g" % report.chamfer_l2, "%.12g" % report.fscore,
                    "%.12g" % report.precision, "%.12g" % report.recall, "%.12g" % report.tau, seed])
