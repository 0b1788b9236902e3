"""Analytic ground-truth scenes and a photometric-stereo turntable simulator.

Camera convention: ``R`` and ``t`` map camera coordinates to world
coordinates, ``X_w = R @ X_c + t``, so ``t`` is the camera centre.  The camera
looks along its +z axis, image x grows to the right and image y downwards.
Pixel ``(x, y)`` has homogeneous coordinate ``(x, y, 1)`` (pixel centres at
integer positions).  Depth maps store the camera-frame z of the first hit.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

logger = logging.getLogger(__name__)

BRDF_TAGS = ("lambertian", "blinn-phong", "ward")


# ---------------------------------------------------------------------------
# shapes
# ---------------------------------------------------------------------------


def sphere_sdf(radius: float = 1.0, center=(0.0, 0.0, 0.0)):
    c = np.asarray(center, dtype=np.float64)

    def sdf(p):
        return np.linalg.norm(p - c, axis=-1) - radius

    def grad(p):
        d = p - c
        return d / np.maximum(np.linalg.norm(d, axis=-1, keepdims=True), 1e-300)

    return sdf, grad


def torus_sdf(major: float = 0.6, minor: float = 0.25):
    """Torus around the world z axis."""

    def sdf(p):
        q = np.hypot(p[..., 0], p[..., 1]) - major
        return np.hypot(q, p[..., 2]) - minor

    def grad(p):
        rho = np.maximum(np.hypot(p[..., 0], p[..., 1]), 1e-300)
        q = rho - major
        d = np.maximum(np.hypot(q, p[..., 2]), 1e-300)
        gx = q / d * p[..., 0] / rho
        gy = q / d * p[..., 1] / rho
        gz = p[..., 2] / d
        return np.stack([gx, gy, gz], axis=-1)

    return sdf, grad


SHAPES = {
    "sphere": lambda: sphere_sdf(1.0),
    "torus": lambda: torus_sdf(0.75, 0.3),
}


# ---------------------------------------------------------------------------
# reflectance
# ---------------------------------------------------------------------------


def _dot(a, b):
    return np.sum(a * b, axis=-1)


def _normalize(v, eps=1e-300):
    return v / np.maximum(np.linalg.norm(v, axis=-1, keepdims=True), eps)


@dataclass
class BRDF:
    """Reflectance model.  ``tag`` is one of ``BRDF_TAGS``.

    ``specular`` scales the specular lobe; ``shininess`` is the Blinn-Phong
    exponent; ``alpha_x``/``alpha_y`` are the Ward roughnesses along the
    tangent and bitangent.
    """

    tag: str = "lambertian"
    specular: float = 0.0
    shininess: float = 32.0
    alpha_x: float = 0.1
    alpha_y: float = 0.1

    def __post_init__(self):
        if self.tag not in BRDF_TAGS:
            raise ValueError(f"unknown BRDF '{self.tag}', expected one of {BRDF_TAGS}")

    def __call__(self, n, l, v, albedo, tangent=None):
        """Evaluate rho(n, l, v) per point; returns (N, 3)."""
        diffuse = albedo / math.pi
        if self.tag == "lambertian" or self.specular == 0.0:
            return diffuse
        h = _normalize(l + v)
        nh = np.clip(_dot(n, h), 0.0, 1.0)
        if self.tag == "blinn-phong":
            lobe = (self.shininess + 8.0) / (8.0 * math.pi) * nh**self.shininess
        else:
            if tangent is None:
                raise ValueError("ward BRDF needs a tangent field")
            x = tangent
            y = np.cross(n, x)
            nl = np.maximum(_dot(n, l), 1e-6)
            nv = np.maximum(_dot(n, v), 1e-6)
            hn = np.maximum(nh, 1e-6)
            e = ((_dot(h, x) / self.alpha_x) ** 2 + (_dot(h, y) / self.alpha_y) ** 2) / hn**2
            lobe = np.exp(-e) / (4.0 * math.pi * self.alpha_x * self.alpha_y * np.sqrt(nl * nv))
        return diffuse + self.specular * lobe[..., None]


def azimuthal_tangent(n):
    """Unit tangent field along the azimuth about world z (x axis at poles)."""
    t = np.cross(np.array([0.0, 0.0, 1.0]), n)
    bad = np.linalg.norm(t, axis=-1) < 1e-8
    if np.any(bad):
        t[bad] = np.cross(n[bad], np.array([0.0, 1.0, 0.0]))
    return _normalize(t)


def constant_albedo(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)

    def f(p):
        return np.broadcast_to(rgb, p.shape[:-1] + (3,)).copy()

    return f


def checker_albedo(rgb_a, rgb_b, frequency: float = 4.0):
    a = np.asarray(rgb_a, dtype=np.float64)
    b = np.asarray(rgb_b, dtype=np.float64)

    def f(p):
        k = np.floor(p * frequency).astype(np.int64).sum(axis=-1) % 2
        return np.where(k[..., None] == 0, a, b)

    return f


@dataclass
class AnalyticScene:
    name: str
    sdf: Callable
    sdf_grad: Callable
    albedo: Callable
    brdf: BRDF
    bounding_radius: float
    texture: str = "none"

    def normal(self, p):
        return _normalize(self.sdf_grad(p))


def make_scene(
    shape: str = "sphere",
    brdf: str = "lambertian",
    texture: str = "none",
    bounding_radius: float = 1.5,
    specular: float | None = None,
    shininess: float = 32.0,
    alpha_x: float = 0.15,
    alpha_y: float = 0.05,
    albedo=(0.6, 0.6, 0.6),
) -> AnalyticScene:
    if shape not in SHAPES:
        raise ValueError(f"unknown shape '{shape}', expected one of {sorted(SHAPES)}")
    sdf, grad = SHAPES[shape]()
    if specular is None:
        specular = {"lambertian": 0.0, "blinn-phong": 0.1, "ward": 0.03}[brdf]
    if texture == "none":
        alb = constant_albedo(albedo)
    elif texture == "checker":
        alb = checker_albedo(albedo, 0.35 * np.asarray(albedo), frequency=3.0)
    else:
        raise ValueError(f"unknown texture '{texture}'")
    return AnalyticScene(
        name=shape,
        sdf=sdf,
        sdf_grad=grad,
        albedo=alb,
        brdf=BRDF(brdf, specular=specular, shininess=shininess, alpha_x=alpha_x, alpha_y=alpha_y),
        bounding_radius=bounding_radius,
        texture=texture,
    )


# ---------------------------------------------------------------------------
# cameras and lights
# ---------------------------------------------------------------------------


@dataclass
class CameraView:
    K: np.ndarray
    R: np.ndarray
    t: np.ndarray
    width: int
    height: int

    def __post_init__(self):
        self.K = np.asarray(self.K, dtype=np.float64).reshape(3, 3)
        self.R = np.asarray(self.R, dtype=np.float64).reshape(3, 3)
        self.t = np.asarray(self.t, dtype=np.float64).reshape(3)

    @property
    def center(self) -> np.ndarray:
        return self.t

    def validate(self, tol: float = 1e-9) -> None:
        if not np.allclose(self.R.T @ self.R, np.eye(3), atol=tol) or abs(np.linalg.det(self.R) - 1.0) > tol:
            raise ValueError("camera rotation is not orthonormal with det +1")
        if not (np.allclose(np.tril(self.K, -1), 0.0) and self.K[0, 0] > 0 and self.K[1, 1] > 0):
            raise ValueError("intrinsics must be upper-triangular with positive focal lengths")

    def pixel_grid(self) -> np.ndarray:
        """Homogeneous pixel coordinates (H, W, 3)."""
        xs, ys = np.meshgrid(np.arange(self.width, dtype=np.float64), np.arange(self.height, dtype=np.float64))
        return np.stack([xs, ys, np.ones_like(xs)], axis=-1)

    def project(self, p: np.ndarray):
        """World points (N, 3) -> (pixel xy (N, 2), camera depth (N,))."""
        pc = (p - self.t) @ self.R  # R^T (p - t), row form
        uvw = pc @ self.K.T
        return uvw[:, :2] / uvw[:, 2:3], pc[:, 2]


@dataclass
class LightRig:
    """Directional lights fixed to the camera.  ``directions`` are in the
    camera frame and point from the surface towards the light."""

    directions: np.ndarray
    intensities: np.ndarray = field(default=None)

    def __post_init__(self):
        self.directions = np.asarray(self.directions, dtype=np.float64).reshape(-1, 3)
        if self.intensities is None:
            self.intensities = np.full(len(self.directions), math.pi)
        self.intensities = np.asarray(self.intensities, dtype=np.float64).reshape(-1)
        if not np.allclose(np.linalg.norm(self.directions, axis=1), 1.0, atol=1e-9):
            raise ValueError("light directions must be unit vectors")
        if np.any(self.intensities <= 0):
            raise ValueError("light intensities must be positive")

    def __len__(self):
        return len(self.directions)

    def world_directions(self, view: CameraView) -> np.ndarray:
        return self.directions @ view.R.T


def look_at(center, target=(0.0, 0.0, 0.0), up=(0.0, 0.0, 1.0)) -> np.ndarray:
    """Camera-to-world rotation for a camera at ``center`` looking at ``target``."""
    z = _normalize(np.asarray(target, float) - np.asarray(center, float))
    x = np.cross(z, np.asarray(up, float))
    if np.linalg.norm(x) < 1e-9:
        x = np.cross(z, np.array([0.0, 1.0, 0.0]))
    x = _normalize(x)
    y = np.cross(z, x)
    return np.stack([x, y, z], axis=1)


def ring_lights(count: int, min_angle_deg: float = 15.0, max_angle_deg: float = 45.0) -> np.ndarray:
    """Lights on concentric rings around the optical axis (camera frame)."""
    n_rings = max(1, min(count // 8, count // 3))
    per = [count // n_rings + (1 if i < count % n_rings else 0) for i in range(n_rings)]
    if n_rings == 1:
        angles = [0.5 * (min_angle_deg + max_angle_deg)]
    else:
        angles = np.linspace(min_angle_deg, max_angle_deg, n_rings)
    dirs = []
    for k, (m, a) in enumerate(zip(per, angles)):
        th = math.radians(a)
        for j in range(m):
            phi = 2.0 * math.pi * (j + 0.5 * (k % 2)) / m
            dirs.append([math.sin(th) * math.cos(phi), math.sin(th) * math.sin(phi), -math.cos(th)])
    return np.asarray(dirs)


def turntable_rig(
    V: int,
    L: int,
    radius: float = 4.0,
    elevation: float | Sequence[float] = (30.0, -30.0),
    bounding_radius: float = 1.5,
    resolution: int = 128,
    intensity: float = math.pi,
) -> tuple[list[CameraView], LightRig]:
    """``V`` cameras evenly spaced in azimuth, all looking at the origin, and
    ``L`` camera-fixed lights.

    ``elevation`` (degrees) is either one angle for every view or a sequence
    cycled over consecutive views.  The default alternates above and below
    the equator so the underside of the object is observed as well.
    """
    if V < 2:
        raise ValueError(f"need at least 2 views, got {V}")
    if L < 3:
        raise ValueError(f"need at least 3 lights, got {L}")
    if radius <= bounding_radius:
        raise ValueError(f"camera radius {radius} must exceed the bounding radius {bounding_radius}")
    half = math.asin(bounding_radius / radius)
    f = 0.5 * resolution / math.tan(half) * 0.98
    c = 0.5 * (resolution - 1)
    K = np.array([[f, 0.0, c], [0.0, f, c], [0.0, 0.0, 1.0]])
    els = [float(elevation)] if np.isscalar(elevation) else [float(e) for e in elevation]
    if not els or any(abs(e) >= 90.0 for e in els):
        raise ValueError(f"elevations must lie strictly between -90 and 90 degrees, got {elevation}")
    views = []
    for k in range(V):
        az = 2.0 * math.pi * k / V
        el = math.radians(els[k % len(els)])
        center = radius * np.array([math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        views.append(CameraView(K, look_at(center), center, resolution, resolution))
    return views, LightRig(ring_lights(L), np.full(L, intensity))


def ray_through_pixel(view: CameraView, pixel) -> tuple[np.ndarray, np.ndarray]:
    """Origin and unit direction of the ray through pixel(s) ``(x, y)``.

    ``pixel`` may be a single (2,) coordinate or an (N, 2) array."""
    pixel = np.asarray(pixel, dtype=np.float64)
    single = pixel.ndim == 1
    px = np.atleast_2d(pixel)
    o = np.concatenate([px, np.ones((len(px), 1))], axis=1)
    d = np.linalg.solve(view.K, o.T).T @ view.R.T
    d = _normalize(d)
    origin = np.broadcast_to(view.center, d.shape).copy()
    return (origin[0], d[0]) if single else (origin, d)


def view_rays(view: CameraView) -> tuple[np.ndarray, np.ndarray]:
    """Rays for every pixel, row-major, as (H*W, 3) arrays."""
    pix = view.pixel_grid().reshape(-1, 3)
    return ray_through_pixel(view, pix[:, :2])


def bounding_interval(origins, dirs, radius):
    """Entry/exit distances of rays against the origin-centred sphere."""
    b = np.sum(origins * dirs, axis=-1)
    c = np.sum(origins * origins, axis=-1) - radius * radius
    disc = b * b - c
    hit = disc > 0
    s = np.sqrt(np.maximum(disc, 0.0))
    return np.maximum(-b - s, 0.0), -b + s, hit


# ---------------------------------------------------------------------------
# ray casting and shading
# ---------------------------------------------------------------------------


@dataclass
class TraceResult:
    hit: np.ndarray
    t: np.ndarray
    points: np.ndarray
    exhausted: int


def sphere_trace(
    scene: AnalyticScene,
    origins,
    dirs,
    t_start=None,
    t_far=None,
    eps: float = 1e-6,
    max_steps: int = 512,
) -> TraceResult:
    """March rays by the SDF value until ``|sdf| < eps`` or ``t > t_far``.

    Rays still marching after ``max_steps`` are reported as misses; their
    count is logged.
    """
    origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
    dirs = np.atleast_2d(np.asarray(dirs, dtype=np.float64))
    n = len(dirs)
    t0, t1, inside = bounding_interval(origins, dirs, scene.bounding_radius)
    t = t0.copy() if t_start is None else np.broadcast_to(np.asarray(t_start, float), (n,)).copy()
    far = t1 if t_far is None else np.broadcast_to(np.asarray(t_far, float), (n,))
    active = inside & (t <= far)
    hit = np.zeros(n, dtype=bool)
    for _ in range(max_steps):
        if not np.any(active):
            break
        idx = np.nonzero(active)[0]
        p = origins[idx] + t[idx, None] * dirs[idx]
        d = scene.sdf(p)
        done = np.abs(d) < eps
        hit[idx[done]] = True
        t[idx] += np.where(done, 0.0, d)
        still = ~done & (t[idx] <= far[idx])
        active[idx] = still
    exhausted = int(active.sum())
    if exhausted:
        logger.debug("sphere_trace: %d rays exceeded %d steps, reported as misses", exhausted, max_steps)
    points = origins + t[:, None] * dirs
    return TraceResult(hit, t, points, exhausted)


def shade(point, normal, view_dir, light_dir, intensity, brdf: BRDF, albedo, visible=None, tangent=None):
    """Image formation e * rho(n, l, v) * max(n.l, 0) * visibility -> (N, 3)."""
    point = np.atleast_2d(point)
    normal = np.atleast_2d(normal)
    view_dir = np.broadcast_to(view_dir, normal.shape)
    light = np.broadcast_to(np.asarray(light_dir, float), normal.shape)
    albedo = np.broadcast_to(np.asarray(albedo, float), normal.shape)
    if brdf.tag == "ward" and tangent is None:
        tangent = azimuthal_tangent(normal)
    rho = brdf(normal, light, view_dir, albedo, tangent)
    attached = np.maximum(_dot(normal, light), 0.0)
    vis = np.ones(len(normal)) if visible is None else np.asarray(visible, float)
    return np.asarray(intensity, float)[..., None] * rho * (attached * vis)[:, None]


def cast_shadow_visibility(scene: AnalyticScene, points, normals, light_dir, offset: float = 2e-3) -> np.ndarray:
    """1 where the shadow ray towards a directional light escapes, else 0."""
    light = np.broadcast_to(np.asarray(light_dir, float), points.shape)
    start = points + offset * normals
    res = sphere_trace(scene, start, light, t_start=np.zeros(len(points)), eps=1e-5, max_steps=256)
    return (~res.hit).astype(np.float64)


@dataclass
class PSImageSet:
    """Simulated MVPS capture.

    Arrays are indexed ``[view, light, row, col, channel]`` for ``images`` and
    ``[view, row, col, ...]`` for the per-view maps.
    """

    views: list
    rig: LightRig
    images: np.ndarray
    median: np.ndarray
    mask: np.ndarray
    depth: np.ndarray
    normal: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def V(self) -> int:
        return len(self.views)

    @property
    def L(self) -> int:
        return len(self.rig)

    def light_directions(self, v: int) -> np.ndarray:
        return self.rig.world_directions(self.views[v])


def _f32(a):
    return np.asarray(a, dtype=np.float32).astype(np.float64)


def render_view(scene: AnalyticScene, view: CameraView, rig: LightRig):
    """Render one view: (images (L,H,W,3), mask, depth, normal)."""
    H, W = view.height, view.width
    origins, dirs = view_rays(view)
    tr = sphere_trace(scene, origins, dirs)
    mask = tr.hit
    images = np.zeros((len(rig), H * W, 3))
    depth = np.zeros(H * W)
    normal = np.zeros((H * W, 3))
    if np.any(mask):
        p = tr.points[mask]
        n = scene.normal(p)
        vdir = -dirs[mask]
        depth[mask] = ((p - view.t) @ view.R)[:, 2]
        normal[mask] = n
        alb = scene.albedo(p)
        tangent = azimuthal_tangent(n) if scene.brdf.tag == "ward" else None
        lights = rig.world_directions(view)
        for j in range(len(rig)):
            vis = cast_shadow_visibility(scene, p, n, lights[j])
            images[j, mask] = shade(p, n, vdir, lights[j], rig.intensities[j], scene.brdf, alb, vis, tangent)
    return (
        images.reshape(len(rig), H, W, 3),
        mask.reshape(H, W),
        depth.reshape(H, W),
        normal.reshape(H, W, 3),
    )


def render_dataset(
    scene: AnalyticScene,
    views: list,
    rig: LightRig,
    noise_std: float = 0.0,
    seed: int = 0,
    workers: int = 1,
) -> PSImageSet:
    """Render every view under every light, plus masks, median images and
    ground-truth depth/normal maps.  ``seed`` only drives the optional
    additive Gaussian sensor noise."""
    for v in views:
        v.validate()
    if workers > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(lambda v: render_view(scene, v, rig), views))
    else:
        results = [render_view(scene, v, rig) for v in views]
    images = np.stack([r[0] for r in results])
    if noise_std > 0:
        rng = np.random.default_rng(seed)
        images = np.maximum(images + rng.normal(0.0, noise_std, size=images.shape), 0.0)
    # maps are kept float32-representable so PFM round trips are exact
    images = _f32(images)
    median = _f32(np.median(images, axis=1))
    meta = {
        "views": len(views),
        "lights": len(rig),
        "bounding_radius": scene.bounding_radius,
        "brdf": scene.brdf.tag,
        "shape": scene.name,
        "texture": scene.texture,
        "noise_std": noise_std,
    }
    return PSImageSet(
        views=list(views),
        rig=rig,
        images=images,
        median=median,
        mask=np.stack([r[1] for r in results]),
        depth=_f32(np.stack([r[2] for r in results])),
        normal=_f32(np.stack([r[3] for r in results])),
        meta=meta,
    )
