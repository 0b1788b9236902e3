"""Depth and normal priors with uncertainty, and their binary gates.

The depth oracle mimics a plane-sweep / PatchMatch style matcher: every pixel
gets a set of depth hypotheses with matching costs that are sharply peaked at
the true depth where photo-consistency is informative (diffuse or textured
surfaces) and flat where it is not (glossy, texture-less surfaces).  Depth and
confidence then come out of the usual softmax regression.

The normal oracle runs a Lambertian least-squares photometric stereo solve
many times on perturbed intensities.  The perturbation grows with how badly
the Lambertian model explains the pixel, so specular or anisotropic pixels end
up with a large ensemble variance.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import uniform_filter

from .scene import CameraView, PSImageSet

logger = logging.getLogger(__name__)

TAU_MVS = 0.9
TAU_PS = 0.03


class DegenerateLightingError(ValueError):
    pass


@dataclass
class DepthPrior:
    depth: np.ndarray
    confidence: np.ndarray
    gate: np.ndarray


@dataclass
class NormalPrior:
    normal: np.ndarray
    variance: np.ndarray
    gate: np.ndarray
    ensemble_size: int


@dataclass
class ViewPriors:
    depth: DepthPrior
    normal: NormalPrior


@dataclass
class MVSOracleConfig:
    hypotheses: int = 32
    step: float | None = None  # default: 1% of the bounding diameter
    sharpness: float = 20.0
    texture_window: int = 5
    texture_threshold: float = 0.05
    cost_noise: float = 0.0


@dataclass
class PSOracleConfig:
    ensemble_size: int = 100
    base_noise: float = 0.0
    residual_gain: float = 10.0
    shadow_threshold: float = 1e-3


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


# ---------------------------------------------------------------------------
# depth
# ---------------------------------------------------------------------------


def blend_hypotheses(depths: np.ndarray, costs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Softmax depth regression over the last axis.

    Returns the softmax-weighted mean depth and the softmax probability of the
    highest-scoring hypothesis.
    """
    depths = np.asarray(depths, dtype=np.float64)
    costs = np.asarray(costs, dtype=np.float64)
    if depths.shape != costs.shape:
        raise ValueError(f"depth/cost shape mismatch {depths.shape} vs {costs.shape}")
    if depths.shape[-1] == 0:
        raise ValueError("blend_hypotheses needs at least one hypothesis")
    if not np.all(np.isfinite(costs)):
        raise ValueError("matching costs must be finite")
    e = np.exp(costs - costs.max(axis=-1, keepdims=True))
    p = e / e.sum(axis=-1, keepdims=True)
    depth = np.sum(p * depths, axis=-1)
    conf = np.max(p, axis=-1)
    return depth, conf


def texture_map(gray: np.ndarray, window: int) -> np.ndarray:
    """Local standard deviation of an image over a square window."""
    m = uniform_filter(gray, size=window, mode="nearest")
    m2 = uniform_filter(gray * gray, size=window, mode="nearest")
    return np.sqrt(np.maximum(m2 - m * m, 0.0))


def informative_pixels(ds: PSImageSet, v: int, cfg: MVSOracleConfig) -> np.ndarray:
    """Where photo-consistency is assumed to work: diffuse surfaces, or
    surfaces with enough local texture in the median image."""
    if ds.meta.get("brdf", "lambertian") == "lambertian":
        return ds.mask[v].copy()
    gray = ds.median[v].mean(axis=-1)
    return ds.mask[v] & (texture_map(gray, cfg.texture_window) >= cfg.texture_threshold)


def simulate_mvs(ds: PSImageSet, v: int, cfg: MVSOracleConfig | None = None, seed: int = 0, tau: float = TAU_MVS) -> DepthPrior:
    cfg = cfg or MVSOracleConfig()
    rng = np.random.default_rng(seed)
    H = cfg.hypotheses
    if H < 2:
        raise ValueError(f"need at least 2 depth hypotheses, got {H}")
    step = cfg.step if cfg.step is not None else 0.02 * ds.meta["bounding_radius"]
    mask = ds.mask[v]
    gt = ds.depth[v][mask]
    n = len(gt)
    # the true depth sits near hypothesis j0, off-grid by at most a quarter step
    j0 = rng.integers(0, H, size=n)
    sub = rng.uniform(-0.25, 0.25, size=n)
    offsets = (np.arange(H)[None, :] - j0[:, None] + sub[:, None]) * step
    hyp = np.maximum(gt[:, None] + offsets, 1e-6)
    informative = informative_pixels(ds, v, cfg)[mask]
    costs = -cfg.sharpness * informative[:, None] * ((hyp - gt[:, None]) / step) ** 2
    if cfg.cost_noise > 0:
        costs = costs + rng.normal(0.0, cfg.cost_noise, size=costs.shape)
    d, c = blend_hypotheses(hyp, costs)
    depth = np.zeros(mask.shape)
    conf = np.zeros(mask.shape)
    depth[mask] = d
    conf[mask] = c
    depth, conf = _f32(depth), _f32(conf)
    return DepthPrior(depth, conf, gate_depth(conf, tau, mask))


# ---------------------------------------------------------------------------
# normals
# ---------------------------------------------------------------------------


def _normalize(v):
    return v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), 1e-300)


def ensemble_stats(normals: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean (renormalised) and per-component variance over axis 0.

    Variance is the population (1/M) estimator of the ensemble spread.
    """
    mu = normals.mean(axis=0)
    var = np.mean((normals - mu) ** 2, axis=0)
    return _normalize(mu), var


def _lambertian_projectors(lights: np.ndarray, weights: np.ndarray) -> np.ndarray:
    """Per-pixel least-squares operators P with b = P @ I, shape (N, 3, L)."""
    A = np.einsum("nl,li,lj->nij", weights, lights, lights)
    det = np.linalg.det(A)
    ok = np.abs(det) > 1e-12
    Ainv = np.zeros_like(A)
    Ainv[ok] = np.linalg.inv(A[ok])
    return np.einsum("nij,lj,nl->nil", Ainv, lights, weights), ok


def simulate_ps_ensemble(
    ds: PSImageSet, v: int, cfg: PSOracleConfig | None = None, seed: int = 0, tau: float = TAU_PS
) -> NormalPrior:
    cfg = cfg or PSOracleConfig()
    rng = np.random.default_rng(seed)
    lights = ds.light_directions(v) * ds.rig.intensities[:, None]
    if np.linalg.matrix_rank(lights) < 3:
        raise DegenerateLightingError("degenerate lighting: light matrix has rank < 3")
    mask = ds.mask[v]
    I = ds.images[v][:, mask].mean(axis=-1).T  # (N, L)
    n = len(I)
    lit = (I > cfg.shadow_threshold).astype(np.float64)
    few = lit.sum(axis=1) < 3
    lit[few] = 1.0  # not enough lit observations: fall back to all lights
    P, ok = _lambertian_projectors(lights, lit)
    if not np.all(ok):
        lit[~ok] = 1.0
        P, ok = _lambertian_projectors(lights, lit)
    b = np.einsum("nil,nl->ni", P, I)
    fit = b @ lights.T
    nlit = lit.sum(axis=1)
    resid = np.sqrt(np.sum(lit * (I - fit) ** 2, axis=1) / nlit)
    level = np.sum(lit * I, axis=1) / nlit
    rel = resid / np.maximum(level, 1e-12)
    sigma = (cfg.base_noise + cfg.residual_gain * rel) * np.maximum(level, 1e-12)
    M = cfg.ensemble_size
    if M < 1:
        raise ValueError("ensemble size must be positive")
    members = np.empty((M, n, 3))
    for k in range(M):
        Ik = I + sigma[:, None] * rng.standard_normal(I.shape) if np.any(sigma > 0) else I
        members[k] = _normalize(np.einsum("nil,nl->ni", P, Ik))
    mean_n, var = ensemble_stats(members)
    normal = np.zeros(mask.shape + (3,))
    variance = np.zeros(mask.shape + (3,))
    normal[mask] = mean_n
    variance[mask] = var
    normal, variance = _f32(normal), _f32(variance)
    return NormalPrior(normal, variance, gate_normal(variance, tau, mask), M)


# ---------------------------------------------------------------------------
# gating and lifting
# ---------------------------------------------------------------------------


def gate_depth(confidence, tau_mvs: float = TAU_MVS, mask=None) -> np.ndarray:
    g = np.asarray(confidence) > tau_mvs
    return g if mask is None else g & mask


def gate_normal(variance, tau_ps: float = TAU_PS, mask=None) -> np.ndarray:
    g = np.sum(np.abs(np.asarray(variance)), axis=-1) < tau_ps
    return g if mask is None else g & mask


def gate(priors: ViewPriors, tau_mvs: float = TAU_MVS, tau_ps: float = TAU_PS, mask=None):
    """Re-threshold both priors; pixels outside ``mask`` are always 0."""
    c_mvs = gate_depth(priors.depth.confidence, tau_mvs, mask)
    c_ps = gate_normal(priors.normal.variance, tau_ps, mask)
    return c_mvs, c_ps


def backproject(view: CameraView, pixels: np.ndarray, depth: np.ndarray) -> np.ndarray:
    """World points R (d K^-1 o) + t for pixel coordinates (N, 2)."""
    o = np.concatenate([pixels, np.ones((len(pixels), 1))], axis=1)
    rays = np.linalg.solve(view.K, o.T).T
    return (depth[:, None] * rays) @ view.R.T + view.t


def lift_depth(view: CameraView, prior: DepthPrior, gate_map=None) -> tuple[np.ndarray, np.ndarray]:
    """Back-project gated depth pixels.  Returns (points (N, 3), flat pixel
    indices (N,))."""
    g = prior.gate if gate_map is None else gate_map
    ys, xs = np.nonzero(g)
    pts = backproject(view, np.stack([xs, ys], axis=1).astype(np.float64), prior.depth[ys, xs])
    return pts, ys * g.shape[1] + xs


def simulate_priors(
    ds: PSImageSet,
    mvs_cfg: MVSOracleConfig | None = None,
    ps_cfg: PSOracleConfig | None = None,
    seed: int = 0,
    tau_mvs: float = TAU_MVS,
    tau_ps: float = TAU_PS,
) -> list[ViewPriors]:
    out = []
    for v in range(ds.V):
        out.append(
            ViewPriors(
                simulate_mvs(ds, v, mvs_cfg, seed=seed * 1009 + 2 * v, tau=tau_mvs),
                simulate_ps_ensemble(ds, v, ps_cfg, seed=seed * 1009 + 2 * v + 1, tau=tau_ps),
            )
        )
    return out
