import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import AnalyticFields, check_param_gradients, plane_fields, sphere_fields
from mvps import autodiff as ad
from mvps.autodiff import Tape
from mvps.fields import FieldConfig, FieldPair
from mvps.render import (
    density,
    density_np,
    dump_ray_csv,
    importance_resample,
    mask_opacity,
    render_color,
    render_normal,
    render_rays,
    sample_ray,
    weights,
    weights_np,
)
from mvps.scene import bounding_interval

SMALL = FieldConfig(sdf_layers=4, sdf_width=32, skip_layer=2, feature_dim=8, radiance_layers=3, radiance_width=16)


def down_rays(n=1, height=1.0):
    o = np.tile([0.0, 0.0, height], (n, 1))
    d = np.tile([0.0, 0.0, -1.0], (n, 1))
    return o, d


# --- density ---------------------------------------------------------------


@pytest.mark.parametrize("alpha,beta", [(10.0, 0.1), (3.7, 0.013), (250.0, 2.0)])
def test_density_hand_values(alpha, beta):
    assert abs(density_np(0.0, alpha, beta) - alpha / 2) < 1e-12
    assert abs(density_np(-beta * math.log(2.0), alpha, beta) - 0.75 * alpha) < 1e-12
    # 0.25 alpha on the outside at the same distance
    assert abs(density_np(beta * math.log(2.0), alpha, beta) - 0.25 * alpha) < 1e-12


def test_density_limits_without_overflow():
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        assert density_np(1e6, 5.0, 1e-4) == 0.0
        assert density_np(-1e6, 5.0, 1e-4) == 5.0


def test_tape_density_matches_numpy():
    s = np.random.default_rng(0).normal(scale=0.3, size=(50, 1))
    tape = Tape()
    out = density(tape.const(s), tape.const(np.array([7.0])), tape.const(np.array([0.05])))
    assert np.allclose(out.value, density_np(s, 7.0, 0.05), atol=1e-14)


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 5), st.floats(-5, 5), st.floats(0.01, 100), st.floats(1e-3, 1.0))
def test_density_is_non_increasing_in_distance(s1, s2, alpha, beta):
    lo, hi = min(s1, s2), max(s1, s2)
    assert density_np(hi, alpha, beta) <= density_np(lo, alpha, beta)
    assert 0.0 <= density_np(hi, alpha, beta) <= alpha


# --- sampling --------------------------------------------------------------


def test_stratified_only_gives_one_sample_per_stratum():
    o, d = down_rays(5)
    smp = sample_ray(o, d, 0.5, 2.5, 16, 0, seed=3)
    assert smp.t.shape == (5, 16)
    stratum = np.floor((smp.t - 0.5) / (2.0 / 16)).astype(int)
    assert np.array_equal(stratum, np.tile(np.arange(16), (5, 1)))


def test_samples_are_increasing_inside_bounds_and_seeded():
    f = sphere_fields()
    rng = np.random.default_rng(0)
    o = np.tile([0.0, 0.0, 3.0], (20, 1))
    d = np.column_stack([rng.uniform(-0.3, 0.3, (20, 2)), -np.ones(20)])
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t0, t1, _ = bounding_interval(o, d, 1.5)
    a = sample_ray(o, d, t0, t1, 24, 8, seed=5, sdf_fn=f.sdf.sdf, alpha=10.0, beta=0.1)
    b = sample_ray(o, d, t0, t1, 24, 8, seed=5, sdf_fn=f.sdf.sdf, alpha=10.0, beta=0.1)
    assert np.array_equal(a.t, b.t)
    assert np.all(np.diff(a.t, axis=1) > 0) and np.all(a.delta > 0)
    assert np.all(a.t >= t0[:, None]) and np.all(a.t <= t1[:, None])


def test_sampling_preconditions():
    o, d = down_rays()
    with pytest.raises(ValueError):
        sample_ray(o, d, 2.0, 1.0, 8)
    with pytest.raises(ValueError):
        sample_ray(o, d, 0.0, 1.0, 8, 4)  # importance sampling without a field


def test_importance_samples_concentrate_on_the_peak():
    B = 64
    edges = np.linspace(0.0, 1.0, B + 1)[None]
    mid = 0.5 * (edges[:, 1:] + edges[:, :-1])
    w = np.exp(-0.5 * ((mid - 0.63) / 0.02) ** 2)
    top = w[0] >= np.quantile(w[0], 0.9)
    lo, hi = edges[0, :-1][top].min(), edges[0, 1:][top].max()
    for rng in (None, np.random.default_rng(0)):
        s = importance_resample(edges, w, 200, rng)
        assert np.mean((s >= lo) & (s <= hi)) >= 0.7


# --- compositing -----------------------------------------------------------


def test_weights_telescope_on_random_rays():
    rng = np.random.default_rng(0)
    sigma = rng.exponential(5.0, size=(10_000, 64)) * (rng.uniform(size=(10_000, 64)) < 0.5)
    delta = rng.uniform(0.001, 0.1, size=(10_000, 64))
    w, T, T_end = weights_np(sigma, delta)
    assert np.max(np.abs(w.sum(axis=1) - (1.0 - T_end))) < 1e-12
    assert np.all(w >= 0) and np.all(w.sum(axis=1) <= 1.0 + 1e-15)
    assert np.all(T[:, 0] == 1.0)
    assert np.allclose(T[:, 1:], T[:, :-1] * np.exp(-sigma[:, :-1] * delta[:, :-1]), rtol=1e-12, atol=0)
    tape = Tape()
    wv, Tv, Tend = weights(tape.const(sigma[:100]), delta[:100])
    assert np.max(np.abs(wv.value.sum(axis=1) - (1.0 - Tend.value))) < 1e-12


def test_empty_space_renders_black_with_zero_normal():
    far = AnalyticFields(lambda p: np.full(len(p), 1e3), lambda p: np.tile([1.0, 0.0, 0.0], (len(p), 1)))
    o, d = down_rays(4)
    smp = sample_ray(o, d, 0.0, 2.0, 32, 0, seed=0)
    tape = Tape()
    assert np.all(render_color(tape, far, smp).value == 0.0)
    assert np.all(render_normal(tape, far, smp).value == 0.0)


def test_opaque_wall_returns_the_radiance():
    rgb = np.array([0.2, 0.5, 0.8])
    f = plane_fields(rgb=rgb, alpha=100.0, beta=0.01)
    o, d = down_rays(8)
    smp = sample_ray(o, d, 0.0, 2.0, 48, 16, seed=1, sdf_fn=f.sdf.sdf, alpha=100.0, beta=0.01)
    out = render_rays(Tape(), f, smp)
    assert np.all(out.weights.value.sum(axis=1) > 0.99)
    assert np.all(np.abs(out.color.value - rgb) <= 0.01 * rgb)


def _angle(a, b):
    a = a / np.linalg.norm(a, axis=-1, keepdims=True)
    b = b / np.linalg.norm(b, axis=-1, keepdims=True)
    return np.degrees(np.arccos(np.clip(np.sum(a * b, axis=-1), -1, 1)))


def test_plane_normal_points_up():
    f = plane_fields(alpha=20.0, beta=0.05)
    rng = np.random.default_rng(2)
    o = np.column_stack([rng.uniform(-1, 1, (10, 2)), np.ones(10)])
    d = np.column_stack([rng.uniform(-0.4, 0.4, (10, 2)), -np.ones(10)])
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    smp = sample_ray(o, d, 0.0, 3.0, 48, 16, seed=0, sdf_fn=f.sdf.sdf, alpha=20.0, beta=0.05)
    n = render_normal(Tape(), f, smp).value
    assert np.all(_angle(n, np.array([0.0, 0.0, 1.0])) < 1.0)


def test_sphere_normal_faces_the_ray_through_the_centre():
    f = sphere_fields(alpha=20.0, beta=0.05)
    o = np.array([[0.0, 0.0, 3.0], [3.0, 0.0, 0.0], [1.2, -2.0, 1.0]])
    d = -o / np.linalg.norm(o, axis=1, keepdims=True)
    t0, t1, _ = bounding_interval(o, d, 1.5)
    smp = sample_ray(o, d, t0, t1, 48, 16, seed=0, sdf_fn=f.sdf.sdf, alpha=20.0, beta=0.05)
    n = render_normal(Tape(), f, smp).value
    assert np.all(_angle(n, -d) < 1.0)


def test_mask_opacity_on_a_sphere():
    f = sphere_fields(alpha=10.0, beta=0.02)
    offsets = np.linspace(0.0, 1.45, 30)
    o = np.column_stack([offsets, np.zeros(30), np.full(30, 3.0)])
    d = np.tile([0.0, 0.0, -1.0], (30, 1))
    smp = sample_ray(o, d, 1.5, 4.5, 256, 0, seed=None)
    op = mask_opacity(Tape(), f, smp).value
    assert np.all(op[offsets < 0.95] >= 0.5)  # crosses the surface
    assert op[-1] < 1e-3  # passes 0.45 = 22 beta away
    # moving the ray towards the surface never lowers the value
    assert np.all(np.diff(op) <= 1e-12)
    assert np.all((op > 0) & (op < 1))


# --- gradients -------------------------------------------------------------


def _net_batch(seed=0, n_rays=8):
    fp = FieldPair(SMALL, seed=seed)
    rng = np.random.default_rng(seed + 10)
    o = np.tile([0.0, 0.0, 3.0], (n_rays, 1))
    d = np.column_stack([rng.uniform(-0.2, 0.2, (n_rays, 2)), -np.ones(n_rays)])
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t0, t1, _ = bounding_interval(o, d, 1.5)
    smp = sample_ray(o, d, t0, t1, 16, 0, seed=seed)
    return fp, smp


def test_color_gradients_match_differences():
    fp, smp = _net_batch(0)
    w = np.random.default_rng(1).normal(size=(8, 3))
    check_param_gradients(fp.params(), lambda tape: ad.vsum(render_color(tape, fp, smp) * w), rtol=1e-3)


def test_normal_gradients_match_differences():
    fp, smp = _net_batch(1)
    w = np.random.default_rng(2).normal(size=(8, 3))
    check_param_gradients(fp.sdf.params(), lambda tape: ad.vsum(render_normal(tape, fp, smp) * w), rtol=1e-3)


def test_debug_dump(tmp_path):
    f = sphere_fields()
    o, d = down_rays(2, 3.0)
    smp = sample_ray(o, d, 1.5, 4.5, 8, 0, seed=0)
    out = render_rays(Tape(), f, smp)
    dump_ray_csv(tmp_path / "rays.csv", out)
    rows = list(csv.reader(open(tmp_path / "rays.csv")))
    assert rows[0] == ["ray", "j", "t", "sigma", "T", "w"] and len(rows) == 17
    assert float(rows[1][2]) == smp.t[0, 0]


def test_64_sample_colour_is_close_to_a_fine_quadrature():
    fp = FieldPair(SMALL, seed=0)
    rng = np.random.default_rng(0)
    o = np.tile([0.0, 0.0, 4.0], (24, 1))
    d = rng.uniform(-0.5, 0.5, (24, 3)) - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t0, t1, _ = bounding_interval(o, d, 1.5)
    coarse = sample_ray(o, d, t0, t1, 48, 16, seed=1, sdf_fn=fp.sdf.sdf, alpha=fp.sdf.alpha, beta=fp.sdf.beta)
    fine = sample_ray(o, d, t0, t1, 4096, 0, seed=None)
    c64 = render_color(Tape(grad_enabled=False), fp, coarse).value
    c4k = render_color(Tape(grad_enabled=False), fp, fine).value
    assert np.linalg.norm(c64 - c4k) <= 0.02 * np.linalg.norm(c4k)
