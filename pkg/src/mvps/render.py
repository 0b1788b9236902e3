"""Volume rendering of an SDF through a Laplace-CDF density."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tape, Var

logger = logging.getLogger(__name__)

OPACITY_EPS = 1e-6


# ---------------------------------------------------------------------------
# density
# ---------------------------------------------------------------------------


def laplace_cdf_np(u, beta: float) -> np.ndarray:
    """CDF of a zero-mean Laplace distribution with scale ``beta``."""
    u = np.asarray(u, dtype=np.float64)
    # exp(-|u|/beta) <= 1, so no overflow can occur in this form
    return 0.5 + 0.5 * np.sign(u) * (1.0 - np.exp(-np.abs(u) / beta))


def density_np(s, alpha: float, beta: float) -> np.ndarray:
    return alpha * laplace_cdf_np(-np.asarray(s, dtype=np.float64), beta)


def occupancy(s: Var, beta) -> Var:
    """Differentiable Laplace CDF evaluated at ``-s`` (``sigma / alpha``)."""
    sgn = -np.sign(s.value)
    decay = ad.exp(-(ad.vabs(s) / beta))
    return 0.5 + (1.0 - decay) * (0.5 * sgn)


def density(s: Var, alpha, beta) -> Var:
    return occupancy(s, beta) * alpha


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


@dataclass
class RaySamples:
    origins: np.ndarray  # (R, 3)
    dirs: np.ndarray  # (R, 3)
    t: np.ndarray  # (R, S)
    delta: np.ndarray  # (R, S); the last spacing runs to t_far
    t_near: np.ndarray  # (R,)
    t_far: np.ndarray  # (R,)

    @property
    def points(self) -> np.ndarray:
        return self.origins[:, None, :] + self.t[..., None] * self.dirs[:, None, :]

    @property
    def count(self) -> int:
        return self.t.shape[1]


def stratified(t_near, t_far, n: int, rng: np.random.Generator | None) -> np.ndarray:
    """One sample per equal-width stratum; the stratum midpoint when ``rng`` is None."""
    t_near = np.asarray(t_near, dtype=np.float64)
    t_far = np.asarray(t_far, dtype=np.float64)
    if np.any(t_far <= t_near):
        raise ValueError("sample_ray needs t_near < t_far")
    u = np.full((len(t_near), n), 0.5) if rng is None else rng.uniform(size=(len(t_near), n))
    frac = (np.arange(n)[None, :] + u) / n
    return t_near[:, None] + frac * (t_far - t_near)[:, None]


def importance_resample(edges: np.ndarray, weights: np.ndarray, n: int, rng: np.random.Generator | None) -> np.ndarray:
    """Inverse-CDF sampling of a piecewise-constant density.

    ``edges`` (R, B+1) are bin boundaries, ``weights`` (R, B) unnormalised bin
    masses.  Returns (R, n) samples.
    """
    R, B = weights.shape
    w = np.maximum(weights, 0.0) + 1e-5 / B
    cdf = np.concatenate([np.zeros((R, 1)), np.cumsum(w, axis=1)], axis=1)
    cdf /= cdf[:, -1:]
    u = (np.arange(n)[None, :] + 0.5) / n * np.ones((R, 1)) if rng is None else np.sort(rng.uniform(size=(R, n)), axis=1)
    out = np.empty((R, n))
    for r in range(R):
        k = np.clip(np.searchsorted(cdf[r], u[r], side="right") - 1, 0, B - 1)
        span = cdf[r, k + 1] - cdf[r, k]
        frac = np.where(span > 0, (u[r] - cdf[r, k]) / np.where(span > 0, span, 1.0), 0.5)
        out[r] = edges[r, k] + frac * (edges[r, k + 1] - edges[r, k])
    return out


def _finish(origins, dirs, t, t_near, t_far) -> RaySamples:
    t = np.sort(t, axis=1)
    # keep samples strictly increasing even if two coincide numerically
    t = np.maximum.accumulate(t + np.arange(t.shape[1])[None, :] * 1e-12, axis=1)
    nxt = np.concatenate([t[:, 1:], t_far[:, None]], axis=1)
    delta = np.maximum(nxt - t, 1e-12)
    return RaySamples(origins, dirs, t, delta, t_near, t_far)


def sample_ray(
    origins,
    dirs,
    t_near,
    t_far,
    n_uniform: int,
    n_importance: int = 0,
    seed: int | np.random.Generator | None = 0,
    sdf_fn=None,
    alpha: float = 1.0,
    beta: float = 0.1,
) -> RaySamples:
    """Stratified samples, optionally augmented by resampling proportional to
    the compositing weights of the current field ``sdf_fn`` (numpy, (N, 3) ->
    (N,))."""
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    t_near = np.broadcast_to(np.asarray(t_near, dtype=np.float64), (len(origins),)).copy()
    t_far = np.broadcast_to(np.asarray(t_far, dtype=np.float64), (len(origins),)).copy()
    rng = seed if isinstance(seed, np.random.Generator) or seed is None else np.random.default_rng(seed)
    t = stratified(t_near, t_far, n_uniform, rng)
    if n_importance > 0:
        if sdf_fn is None:
            raise ValueError("importance sampling needs the current field")
        coarse = _finish(origins, dirs, t, t_near, t_far)
        s = sdf_fn(coarse.points.reshape(-1, 3)).reshape(t.shape)
        w, _, _ = weights_np(density_np(s, alpha, beta), coarse.delta)
        edges = np.concatenate([t_near[:, None], 0.5 * (t[:, 1:] + t[:, :-1]), t_far[:, None]], axis=1)
        extra = importance_resample(edges, w, n_importance, rng)
        t = np.concatenate([t, extra], axis=1)
    return _finish(origins, dirs, t, t_near, t_far)


# ---------------------------------------------------------------------------
# compositing
# ---------------------------------------------------------------------------


def weights_np(sigma: np.ndarray, delta: np.ndarray):
    """Returns (weights, transmittance at each sample, transmittance past the end)."""
    tau = sigma * delta
    acc = np.cumsum(tau, axis=-1)
    T = np.exp(-(acc - tau))
    w = T * -np.expm1(-tau)
    return w, T, np.exp(-acc[..., -1])


def weights(sigma: Var, delta: np.ndarray):
    tau = sigma * delta
    T = ad.exp(-ad.cumsum(tau, axis=-1, exclusive=True))
    w = T * (1.0 - ad.exp(-tau))
    T_end = ad.exp(-ad.vsum(tau, axis=-1))
    return w, T, T_end


@dataclass
class RenderOutput:
    color: Var | None  # (R, 3)
    normal: Var  # (R, 3), unnormalised expected gradient
    opacity: Var  # (R,), max occupancy along the ray
    weights: Var  # (R, S)
    transmittance: Var  # (R, S)
    sdf: Var  # (R*S, 1)
    gradient: Var  # (R*S, 3)
    sigma: Var  # (R, S)
    samples: RaySamples


def render_rays(tape: Tape, fields, samples: RaySamples, with_color: bool = True) -> RenderOutput:
    """Colour, expected normal and mask opacity for a batch of sampled rays."""
    R, S = samples.t.shape
    pts = samples.points.reshape(-1, 3)
    s, g, z = fields.sdf.forward(tape, pts, with_gradient=True)
    alpha, beta = fields.sdf.density_scales(tape)
    occ = ad.reshape(occupancy(s, beta), (R, S))
    sigma = occ * alpha
    w, T, _ = weights(sigma, samples.delta)
    w3 = ad.reshape(w, (R, S, 1))
    normal = ad.vsum(w3 * ad.reshape(g, (R, S, 3)), axis=1)
    opacity = ad.clamp_max(ad.clamp_min(ad.vmax(occ, axis=1), OPACITY_EPS), 1.0 - OPACITY_EPS)
    color = None
    if with_color:
        v = np.repeat(samples.dirs, S, axis=0)
        rgb = fields.radiance.forward(tape, pts, g, v, z)
        color = ad.vsum(w3 * ad.reshape(rgb, (R, S, 3)), axis=1)
    return RenderOutput(color, normal, opacity, w, T, s, g, sigma, samples)


def render_color(tape: Tape, fields, samples: RaySamples) -> Var:
    return render_rays(tape, fields, samples).color


def render_normal(tape: Tape, fields, samples: RaySamples) -> Var:
    return render_rays(tape, fields, samples, with_color=False).normal


def mask_opacity(tape: Tape, fields, samples: RaySamples) -> Var:
    return render_rays(tape, fields, samples, with_color=False).opacity


def dump_ray_csv(path, out: RenderOutput) -> None:
    """Debug dump of per-sample quantities: ray, j, t, sigma, T, w."""
    t = out.samples.t
    sigma, T, w = out.sigma.value, out.transmittance.value, out.weights.value
    with open(path, "w", newline="") as f:
        wr = csv.writer(f)
        wr.writerow(["ray", "j", "t", "sigma", "T", "w"])
        for r in range(t.shape[0]):
            for j in range(t.shape[1]):
                wr.writerow([r, j] + [repr(float(a[r, j])) for a in (t, sigma, T, w)])


def render_image(fields, view, origins_dirs=None, n_uniform: int = 48, n_importance: int = 16, bounding_radius: float = 1.5, chunk: int = 512, seed: int = 0):
    """Render colour and opacity for every pixel of ``view`` (evaluation only)."""
    from .scene import bounding_interval, view_rays

    o, d = view_rays(view) if origins_dirs is None else origins_dirs
    t0, t1, hit = bounding_interval(o, d, bounding_radius)
    img = np.zeros((len(o), 3))
    acc = np.zeros(len(o))
    idx = np.nonzero(hit)[0]
    rng = np.random.default_rng(seed)
    for i in range(0, len(idx), chunk):
        sl = idx[i : i + chunk]
        smp = sample_ray(o[sl], d[sl], t0[sl], t1[sl], n_uniform, n_importance, rng, fields.sdf.sdf, fields.sdf.alpha, fields.sdf.beta)
        tape = Tape(grad_enabled=False, check_finite=False)
        out = render_rays(tape, fields, smp)
        img[sl] = out.color.value
        acc[sl] = out.weights.value.sum(axis=1)
    return img.reshape(view.height, view.width, 3), acc.reshape(view.height, view.width)
