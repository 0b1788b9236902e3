"""Command-line entry point: ``mvps <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace

from . import dataset as dsio
from . import pipeline
from .config import RunConfig, read_run_config, write_run_config
from .dataset import DatasetError
from .loss import ABLATION_FLAGS
from .metrics import surface_profile, write_profile_csv

logger = logging.getLogger("mvps")


def _floats(text: str) -> list[float]:
    try:
        return [float(x) for x in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _plane(text: str) -> list[float]:
    v = _floats(text)
    if len(v) != 6:
        raise argparse.ArgumentTypeError("plane needs 6 numbers: point x,y,z and normal x,y,z")
    return v


# flag name -> argument type; each table maps onto one config section
SCENE_FLAGS = {
    "shape": str, "brdf": str, "texture": str, "views": int, "lights": int,
    "resolution": int, "noise_std": float, "camera_radius": float, "elevation": _floats,
}
ORACLE_FLAGS = {
    "hypotheses": int, "ensemble_size": int, "tau_mvs": float, "tau_ps": float,
    "mvs_sharpness": float, "mvs_cost_noise": float, "ps_base_noise": float, "ps_residual_gain": float,
}
LOSS_FLAGS = {
    "lambda_mask": float, "lambda_eikonal": float, "rays_per_view": int, "epochs": int,
    "n_uniform": int, "n_importance": int, "eikonal_points": int, "lr": float,
    "light_index": int, "checkpoint_every": int,
}
NETWORK_FLAGS = {
    "sdf_layers": int, "sdf_width": int, "skip_layer": int, "feature_dim": int,
    "radiance_layers": int, "radiance_width": int, "pos_octaves": int, "dir_octaves": int,
    "softplus_beta": float, "init_radius": float, "beta_init": float,
    "sdf_activation": str, "radiance_activation": str,
}
EVAL_FLAGS = {"grid_resolution": int, "tau_f": float, "samples": int, "gt_resolution": int, "profile_plane": _plane}


def _add(p: argparse.ArgumentParser, table: dict, choices: dict | None = None) -> None:
    for name, typ in table.items():
        kw = {"type": typ, "default": None, "dest": name}
        if choices and name in choices:
            kw["choices"] = choices[name]
        p.add_argument("--" + name.replace("_", "-"), **kw)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="start from this run_config.json")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="mvps", description="Uncertainty-gated MVPS surface reconstruction")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic dataset")
    p.add_argument("--out", required=True)
    _add(p, SCENE_FLAGS, {"shape": ["sphere", "torus"], "brdf": ["lambertian", "blinn-phong", "ward"], "texture": ["none", "checker"]})
    _common(p)

    p = sub.add_parser("priors", help="simulate depth and normal priors for a dataset")
    p.add_argument("--data", required=True)
    _add(p, ORACLE_FLAGS)
    _common(p)

    for name in ("reconstruct", "ablate"):
        p = sub.add_parser(name, help="train the fields" if name == "reconstruct" else "train one loss variant and log it")
        p.add_argument("--data", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--flags", nargs="*", default=None, choices=list(ABLATION_FLAGS) + (["tsdf"] if name == "ablate" else []))
        if name == "reconstruct":
            p.add_argument("--method", choices=["neural", "tsdf"], default="neural")
            p.add_argument("--resume", action="store_true")
        _add(p, LOSS_FLAGS)
        _add(p, NETWORK_FLAGS)
        _add(p, EVAL_FLAGS)
        _common(p)

    p = sub.add_parser("evaluate", help="compare a mesh or checkpoint against ground truth")
    p.add_argument("--data", required=True, help="dataset directory (ground truth scene)")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh")
    src.add_argument("--checkpoint")
    p.add_argument("--out", required=True)
    _add(p, EVAL_FLAGS)
    _common(p)

    p = sub.add_parser("profile", help="surface profile along a plane, as CSV")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--mesh")
    src.add_argument("--checkpoint")
    p.add_argument("--plane", type=_plane, default=[0.0, 0.0, 0.0, 0.0, 0.0, 1.0], help="px,py,pz,nx,ny,nz")
    p.add_argument("--out", required=True, help="output CSV path")
    p.add_argument("--grid-resolution", type=int, default=None, dest="grid_resolution")
    p.add_argument("--bounding-radius", type=float, default=1.5)
    _common(p)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = read_run_config(args.config) if getattr(args, "config", None) else RunConfig()
    ns = vars(args)

    def pick(section, table):
        return {k: ns[k] for k in table if ns.get(k) is not None}

    cfg = replace(
        cfg,
        scene=replace(cfg.scene, **pick(cfg.scene, SCENE_FLAGS)),
        oracle=replace(cfg.oracle, **pick(cfg.oracle, ORACLE_FLAGS)),
        loss=replace(cfg.loss, **pick(cfg.loss, LOSS_FLAGS)),
        network=replace(cfg.network, **pick(cfg.network, NETWORK_FLAGS)),
        eval=replace(cfg.eval, **pick(cfg.eval, EVAL_FLAGS)),
    )
    if ns.get("flags") is not None and args.command == "reconstruct":
        cfg = replace(cfg, loss=replace(cfg.loss, flags=list(ns["flags"])))
    if ns.get("seed") is not None:
        cfg = replace(cfg, seed=ns["seed"])
    out = ns.get("out")
    if out:
        cfg = replace(cfg, output=str(out))
    return cfg


def run(args) -> int:
    cfg = resolve_config(args)
    cmd = args.command
    if cmd == "simulate":
        pipeline.simulate(cfg, args.out)
        logger.info("dataset written to %s", args.out)
    elif cmd == "priors":
        pipeline.make_priors(cfg, args.data)
        logger.info("priors written to %s", args.data)
    elif cmd == "reconstruct":
        if args.method == "tsdf":
            m = pipeline.reconstruct_tsdf(cfg, args.data, args.out)
        else:
            _, m = pipeline.reconstruct(cfg, args.data, args.out, resume=args.resume)
        logger.info("mesh with %d triangles written to %s", len(m.triangles), os.path.join(args.out, "mesh.obj"))
    elif cmd == "ablate":
        report = pipeline.ablate(cfg, args.data, args.out, args.flags or [])
        print(report.text(), end="")
    elif cmd == "evaluate":
        pipeline.require_dir(args.data)
        meta = dsio.load_meta(args.data)
        src = args.mesh or args.checkpoint
        if not os.path.exists(src):
            raise pipeline.MissingInputError(f"input not found: {src}")
        m = pipeline.load_mesh_or_checkpoint(src, cfg, meta["bounding_radius"])
        report = pipeline.evaluate_mesh(cfg, args.data, m, args.out)
        print(report.text(), end="")
    elif cmd == "profile":
        src = args.mesh or args.checkpoint
        if not os.path.exists(src):
            raise pipeline.MissingInputError(f"input not found: {src}")
        m = pipeline.load_mesh_or_checkpoint(src, cfg, args.bounding_radius)
        lines = surface_profile(m, args.plane[:3], args.plane[3:])
        write_profile_csv(args.out, lines, args.plane[3:])
        write_run_config(cfg, os.path.dirname(os.path.abspath(args.out)))
        logger.info("%d polyline(s) written to %s", len(lines), args.out)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return run(args)
    except (FileNotFoundError, DatasetError, ValueError) as e:
        print(f"mvps: error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
