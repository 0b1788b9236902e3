"""The five-term reconstruction objective and its ray batches.

Every masked pixel is routed by its two gates: gated depth pixels pull the SDF
to zero at the lifted point, gated normal pixels align the expected ray normal
with the prior normal, and pixels lacking either gate are supervised by the
rendered colour.  Rays outside the mask are pushed towards zero opacity, and
the Eikonal penalty keeps the field a distance function.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var
from .render import RaySamples, occupancy, render_rays, sample_ray, OPACITY_EPS
from .scene import bounding_interval, view_rays

logger = logging.getLogger(__name__)

ABLATION_FLAGS = ("no_mvs", "no_ps", "no_render", "no_uncertainty", "no_mask", "no_eikonal")
TERMS = ("mvs", "ps", "render", "mask", "eikonal")


@dataclass
class LossConfig:
    lambda_mask: float = 0.1
    lambda_eikonal: float = 1.0
    rays_per_view: int = 1024
    epochs: int = 2000
    n_uniform: int = 48
    n_importance: int = 16
    eikonal_points: int = 1024
    lr: float = 1e-4
    flags: list[str] = field(default_factory=list)
    light_index: int | None = None  # None: drawn from the seed
    seed: int = 0
    checkpoint_every: int = 100
    color_norm: str = "l1-sum-rgb"
    normal_norm: str = "l2"

    def __post_init__(self):
        bad = [f for f in self.flags if f not in ABLATION_FLAGS]
        if bad:
            raise ValueError(f"unknown ablation flag(s) {bad}; expected a subset of {list(ABLATION_FLAGS)}")
        if self.lambda_mask < 0 or self.lambda_eikonal < 0:
            raise ValueError("loss weights must be non-negative")
        self.flags = sorted(set(self.flags))

    def has(self, flag: str) -> bool:
        return flag in self.flags


@dataclass
class PreparedView:
    """Per-view arrays the batch sampler draws from (flattened pixels)."""

    origins: np.ndarray
    dirs: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray
    candidates: np.ndarray  # pixel indices whose rays meet the bounding sphere
    mask: np.ndarray
    color: np.ndarray
    c_mvs: np.ndarray
    c_ps: np.ndarray
    points: np.ndarray  # lifted prior depth per pixel (NaN where no depth)
    n_ps: np.ndarray


def prepare_views(ds, priors, light_index: int, bounding_radius: float) -> list[PreparedView]:
    from .priors import backproject

    out = []
    for v, view in enumerate(ds.views):
        o, d = view_rays(view)
        t0, t1, hit = bounding_interval(o, d, bounding_radius)
        mask = ds.mask[v].reshape(-1)
        pr = priors[v]
        depth = pr.depth.depth.reshape(-1)
        ys, xs = np.divmod(np.arange(view.width * view.height), view.width)
        pix = np.stack([xs, ys], axis=1).astype(np.float64)
        pts = np.full((len(depth), 3), np.nan)
        has = mask & (depth > 0)
        pts[has] = backproject(view, pix[has], depth[has])
        out.append(
            PreparedView(
                origins=o,
                dirs=d,
                t_near=t0,
                t_far=t1,
                candidates=np.nonzero(hit & (t1 > t0))[0],
                mask=mask,
                color=ds.images[v, light_index].reshape(-1, 3),
                c_mvs=pr.depth.gate.reshape(-1) & mask,
                c_ps=pr.normal.gate.reshape(-1) & mask,
                points=pts,
                n_ps=pr.normal.normal.reshape(-1, 3),
            )
        )
    return out


@dataclass
class TrainBatch:
    inside: RaySamples | None
    color: np.ndarray  # (R_in, 3)
    c_mvs: np.ndarray  # (R_in,) bool
    c_ps: np.ndarray
    points: np.ndarray  # (R_in, 3)
    n_ps: np.ndarray  # (R_in, 3)
    outside: RaySamples | None
    eikonal_points: np.ndarray  # (E, 3)

    @property
    def render_gate(self) -> np.ndarray:
        return ~(self.c_mvs & self.c_ps)


def make_batch(prepared: list[PreparedView], fields, cfg: LossConfig, rng: np.random.Generator, bounding_radius: float) -> TrainBatch:
    """Draw ``rays_per_view`` rays from every view plus global Eikonal points."""
    idx_in, idx_out = [], []
    for v, pv in enumerate(prepared):
        n = min(cfg.rays_per_view, len(pv.candidates))
        pick = rng.choice(pv.candidates, size=n, replace=False)
        idx_in += [(v, i) for i in pick if pv.mask[i]]
        idx_out += [(v, i) for i in pick if not pv.mask[i]]

    def gather(pairs, attr):
        return np.array([getattr(prepared[v], attr)[i] for v, i in pairs])

    def rays(pairs):
        if not pairs:
            return None
        return sample_ray(
            gather(pairs, "origins"),
            gather(pairs, "dirs"),
            gather(pairs, "t_near"),
            gather(pairs, "t_far"),
            cfg.n_uniform,
            cfg.n_importance if cfg.n_importance > 0 else 0,
            rng,
            fields.sdf.sdf,
            fields.sdf.alpha,
            fields.sdf.beta,
        )

    inside = rays(idx_in)
    outside = rays(idx_out)
    R = len(idx_in)
    eik = rng.uniform(-bounding_radius, bounding_radius, size=(cfg.eikonal_points, 3))
    if R:
        color, c_mvs, c_ps = gather(idx_in, "color"), gather(idx_in, "c_mvs"), gather(idx_in, "c_ps")
        points, n_ps = gather(idx_in, "points"), gather(idx_in, "n_ps")
    else:
        color, points, n_ps = np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3))
        c_mvs = c_ps = np.zeros(0, dtype=bool)
    return TrainBatch(inside, color, c_mvs.astype(bool), c_ps.astype(bool), points, n_ps, outside, eik)


# ---------------------------------------------------------------------------
# terms
# ---------------------------------------------------------------------------


def _zero(tape: Tape) -> Var:
    return tape.const(np.array(0.0))


def mvs_term(tape: Tape, fields, points: np.ndarray, gate: np.ndarray) -> Var:
    """Mean over gated pixels of |f(p)|."""
    sel = np.asarray(gate, dtype=bool) & np.all(np.isfinite(points), axis=1)
    if not sel.any():
        return _zero(tape)
    s, _, _ = fields.sdf.forward(tape, points[sel], with_gradient=False)
    return ad.mean(ad.vabs(s))


def ps_term(tape: Tape, normal: Var, n_ps: np.ndarray, gate: np.ndarray) -> Var:
    """Mean over gated pixels of the Euclidean distance between the expected
    ray normal and the prior normal."""
    sel = np.nonzero(np.asarray(gate, dtype=bool))[0]
    if len(sel) == 0:
        return _zero(tape)
    diff = ad.getitem(normal, sel) - n_ps[sel]
    return ad.mean(ad.norm(diff, axis=-1, eps=1e-18))


def render_term(tape: Tape, color: Var, target: np.ndarray, gate: np.ndarray) -> Var:
    """Mean over supervised pixels of the L1 colour error summed over RGB."""
    sel = np.nonzero(np.asarray(gate, dtype=bool))[0]
    if len(sel) == 0:
        return _zero(tape)
    diff = ad.getitem(color, sel) - target[sel]
    return ad.mean(ad.vsum(ad.vabs(diff), axis=-1))


def mask_term(tape: Tape, opacity: Var | None, lambda_mask: float) -> Var:
    """lambda / |M| * sum of binary cross-entropy against label 0."""
    if opacity is None or opacity.shape[0] == 0:
        logger.warning("no rays outside the mask in this batch; mask term is 0")
        return _zero(tape)
    return ad.mean(-ad.log(1.0 - opacity)) * lambda_mask


def bce_zero(p) -> np.ndarray:
    p = np.clip(np.asarray(p, dtype=np.float64), OPACITY_EPS, 1.0 - OPACITY_EPS)
    return -np.log(1.0 - p)


def eikonal_term(tape: Tape, gradients: list[Var], lambda_eikonal: float) -> Var:
    """lambda * mean over all points of (|grad f| - 1)^2."""
    gradients = [g for g in gradients if g is not None and g.shape[0] > 0]
    if not gradients:
        return _zero(tape)
    g = gradients[0] if len(gradients) == 1 else ad.concat(gradients, axis=0)
    dev = ad.norm(g, axis=-1, eps=1e-18) - 1.0
    return ad.mean(ad.square(dev)) * lambda_eikonal


def outside_opacity(tape: Tape, fields, samples: RaySamples) -> Var:
    """Max occupancy along rays that only need the mask term (no spatial gradients)."""
    R, S = samples.t.shape
    s, _, _ = fields.sdf.forward(tape, samples.points.reshape(-1, 3), with_gradient=False)
    _, beta = fields.sdf.density_scales(tape)
    occ = ad.reshape(occupancy(s, beta), (R, S))
    return ad.clamp_max(ad.clamp_min(ad.vmax(occ, axis=1), OPACITY_EPS), 1.0 - OPACITY_EPS)


@dataclass
class LossResult:
    total: Var
    terms: dict[str, Var]

    def values(self) -> dict[str, float]:
        out = {k: float(v.value) for k, v in self.terms.items()}
        out["total"] = float(self.total.value)
        return out


def total_loss(tape: Tape, fields, batch: TrainBatch, cfg: LossConfig) -> LossResult:
    """Sum of the five terms with the configured ablations applied."""
    no_unc = cfg.has("no_uncertainty")
    c_mvs = np.ones_like(batch.c_mvs) if no_unc else batch.c_mvs
    c_ps = np.ones_like(batch.c_ps) if no_unc else batch.c_ps
    render_gate = np.ones_like(batch.c_mvs) if no_unc else ~(c_mvs & c_ps)

    need_color = not cfg.has("no_render") and render_gate.any()
    out = None
    if batch.inside is not None:
        out = render_rays(tape, fields, batch.inside, with_color=need_color)

    terms: dict[str, Var] = {}
    terms["mvs"] = _zero(tape) if cfg.has("no_mvs") else mvs_term(tape, fields, batch.points, c_mvs)
    terms["ps"] = _zero(tape) if cfg.has("no_ps") or out is None else ps_term(tape, out.normal, batch.n_ps, c_ps)
    terms["render"] = (
        _zero(tape) if not need_color or out is None else render_term(tape, out.color, batch.color, render_gate)
    )
    if cfg.has("no_mask"):
        terms["mask"] = _zero(tape)
    else:
        op = outside_opacity(tape, fields, batch.outside) if batch.outside is not None else None
        terms["mask"] = mask_term(tape, op, cfg.lambda_mask)
    if cfg.has("no_eikonal"):
        terms["eikonal"] = _zero(tape)
    else:
        grads = [out.gradient if out is not None else None]
        if len(batch.eikonal_points):
            _, g, _ = fields.sdf.forward(tape, batch.eikonal_points, with_gradient=True)
            grads.append(g)
        terms["eikonal"] = eikonal_term(tape, grads, cfg.lambda_eikonal)
    total = terms["mvs"] + terms["ps"] + terms["render"] + terms["mask"] + terms["eikonal"]
    return LossResult(total, terms)
