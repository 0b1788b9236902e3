"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

The end-to-end criteria (4-7) share one grid of desk-scale training runs
(2000 epochs each) built lazily in a module-scoped fixture; on a single
CPU core the whole grid takes roughly two hours.
"""

import math
import time

import numpy as np
import pytest

from conftest import check_param_gradients
from harness import SCENES, VARIANTS, run_variant, scene_dir
from mvps import autodiff as ad
from mvps import dataset as dsio
from mvps.autodiff import Tape
from mvps.cli import main
from mvps.fields import FieldConfig
from mvps.loss import LossConfig, total_loss
from mvps.metrics import chamfer_l2, fscore
from mvps.priors import (
    TAU_MVS,
    TAU_PS,
    PSOracleConfig,
    blend_hypotheses,
    ensemble_stats,
    gate_depth,
    gate_normal,
    simulate_priors,
)
from mvps.render import density_np, render_color, sample_ray, weights, weights_np
from mvps.scene import bounding_interval, make_scene, render_dataset, turntable_rig

RESULTS: list[str] = []


def record(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS.append(line)
    print(line)


# --- shared training grid --------------------------------------------------


class Grid:
    def __init__(self, root):
        self.root = root
        self.cache = {}

    def get(self, shape, brdf, variant="full"):
        key = (shape, brdf, variant)
        if key not in self.cache:
            self.cache[key] = run_variant(self.root, shape, brdf, variant)
        return self.cache[key]


@pytest.fixture(scope="module")
def grid(tmp_path_factory):
    return Grid(str(tmp_path_factory.mktemp("acceptance")))


# --- 1. gradients ----------------------------------------------------------

TERM_FLAGS = ("no_mvs", "no_ps", "no_render", "no_mask", "no_eikonal")


def test_criterion_01_gradient_correctness():
    t0 = time.time()
    views, rig = turntable_rig(2, 8, resolution=24)
    ds = render_dataset(make_scene("sphere", "blinn-phong"), views, rig)
    pr = simulate_priors(ds, ps_cfg=PSOracleConfig(ensemble_size=16), seed=0)
    net = FieldConfig(sdf_layers=4, sdf_width=32, skip_layer=2, feature_dim=8, radiance_layers=3, radiance_width=32)
    base = dict(rays_per_view=4, n_uniform=16, n_importance=0, eikonal_points=16, seed=1)
    from mvps.train import Trainer

    tr = Trainer(ds, pr, LossConfig(**base), net)
    batch = tr.batch(0)
    n_rays = batch.inside.t.shape[0] + (0 if batch.outside is None else batch.outside.t.shape[0])
    assert n_rays == 8
    assert batch.render_gate.any() and batch.c_mvs.any() and batch.c_ps.any() and batch.outside is not None
    worst = {}
    for term in ("mvs", "ps", "render", "mask", "eikonal"):
        cfg = LossConfig(**base, flags=[f for f in TERM_FLAGS if f != "no_" + term])
        worst[term] = check_param_gradients(tr.fields.params(), lambda tape, c=cfg: total_loss(tape, tr.fields, batch, c).total, n=10, rtol=2e-3)
    w = np.random.default_rng(3).normal(size=(batch.inside.t.shape[0], 3))
    worst["render_color"] = check_param_gradients(
        tr.fields.params(), lambda tape: ad.vsum(render_color(tape, tr.fields, batch.inside) * w), n=10, rtol=2e-3
    )
    dt = time.time() - t0
    ok = max(worst.values()) <= 2e-3 and dt < 60
    record(1, ok, "worst relative error " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()) + f"; {dt:.1f} s")
    assert ok


# --- 2. density and quadrature ---------------------------------------------


def test_criterion_02_density_and_quadrature(grid):
    alpha, beta = 10.0, 0.1
    e0 = abs(density_np(0.0, alpha, beta) - alpha / 2)
    e1 = abs(density_np(-beta * math.log(2.0), alpha, beta) - 0.75 * alpha)
    fp = grid.get("sphere", "lambertian").fields
    rng = np.random.default_rng(0)
    n = 256
    o = rng.normal(size=(n, 3))
    o = 4.0 * o / np.linalg.norm(o, axis=1, keepdims=True)
    d = rng.uniform(-0.9, 0.9, size=(n, 3)) - o
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    t0, t1, _ = bounding_interval(o, d, 1.5)
    coarse = sample_ray(o, d, t0, t1, 48, 16, seed=1, sdf_fn=fp.sdf.sdf, alpha=fp.sdf.alpha, beta=fp.sdf.beta)
    c64 = render_color(Tape(grad_enabled=False), fp, coarse).value
    # the oracle is rendered 16 rays at a time to bound memory
    c4k = np.concatenate([
        render_color(Tape(grad_enabled=False), fp, sample_ray(o[s], d[s], t0[s], t1[s], 4096, 0, seed=None)).value
        for s in (slice(i, i + 16) for i in range(0, n, 16))
    ])
    rel = np.linalg.norm(c64 - c4k) / np.linalg.norm(c4k)
    ok = e0 <= 1e-12 and e1 <= 1e-12 and rel <= 0.02
    record(2, ok, f"hand values off by {e0:.1e}, {e1:.1e}; 64-sample colour within {100 * rel:.2f}% of 4096-sample oracle (beta {fp.sdf.beta:.4f})")
    assert ok


# --- 3. transmittance ------------------------------------------------------


def test_criterion_03_transmittance_conservation():
    rng = np.random.default_rng(0)
    sigma = rng.exponential(5.0, size=(10_000, 64)) * (rng.uniform(size=(10_000, 64)) < 0.5)
    delta = rng.uniform(0.001, 0.1, size=(10_000, 64))
    w, _, T_end = weights_np(sigma, delta)
    err_np = np.max(np.abs(w.sum(axis=1) - (1.0 - T_end)))
    wv, _, Tv = weights(Tape().const(sigma), delta)
    err_tape = np.max(np.abs(wv.value.sum(axis=1) - (1.0 - Tv.value)))
    ok = max(err_np, err_tape) <= 1e-12
    record(3, ok, f"max |sum w - (1 - T_end)| = {max(err_np, err_tape):.1e} over 10^4 rays")
    assert ok


# --- 4. Eikonal ------------------------------------------------------------


def test_criterion_04_eikonal_soundness(grid):
    from mvps.loss import eikonal_term

    x = np.random.default_rng(1).uniform(-1.5, 1.5, size=(10_000, 3))
    tape = Tape()
    _, g = ad.spatial_gradient(tape, lambda p: ad.dual_norm(p) - 1.0, x)
    probe = eikonal_term(tape, [g], 1.0).value
    fp = grid.get("sphere", "lambertian").fields
    _, grad = fp.sdf.sdf_and_gradient(x)
    mean_norm = float(np.mean(np.linalg.norm(grad, axis=1)))
    ok = probe < 1e-10 and 0.9 <= mean_norm <= 1.1
    record(4, ok, f"analytic probe {probe:.1e}; trained sphere mean |grad f| = {mean_norm:.4f} over 10^4 box samples")
    assert ok


# --- 5. Lambertian reconstruction ------------------------------------------


def test_criterion_05_lambertian_reconstruction(grid):
    limit = (0.01 * 3.0) ** 2
    rows, ok = [], True
    for shape in ("sphere", "torus"):
        r = grid.get(shape, "lambertian")
        good = r.chamfer_l2 <= limit and r.fscore >= 0.95 and r.seconds <= 7200
        ok &= good
        rows.append(f"{shape} chamfer {r.chamfer_l2:.2e} F {r.fscore:.4f} ({r.seconds / 60:.0f} min)")
    record(5, ok, "; ".join(rows) + f"; limits chamfer <= {limit:.1e}, F >= 0.95")
    assert ok


# --- 6. glossy advantage ---------------------------------------------------


def test_criterion_06_glossy_advantage(grid):
    data = scene_dir(grid.root, "sphere", "blinn-phong")
    ds, pr = dsio.load_dataset(data)
    flat = np.mean([np.mean(pr[v].depth.confidence[ds.mask[v]] < TAU_MVS) for v in range(ds.V)])
    full = grid.get("sphere", "blinn-phong").chamfer_l2
    norender = grid.get("sphere", "blinn-phong", "no_render").chamfer_l2
    tsdf = grid.get("sphere", "blinn-phong", "tsdf").chamfer_l2
    gain_r, gain_t = 1 - full / norender, 1 - full / tsdf
    ok = flat >= 0.5 and gain_r >= 0.2 and gain_t >= 0.2
    record(6, ok, f"flat MVS costs on {100 * flat:.0f}% of mask; full {full:.2e} vs no_render {norender:.2e} "
                  f"({100 * gain_r:.1f}% better) and TSDF {tsdf:.2e} ({100 * gain_t:.1f}% better); needs >= 20%")
    assert ok


# --- 7. ablation ordering --------------------------------------------------


def test_criterion_07_ablation_ordering(grid):
    avg = {v: float(np.mean([grid.get(s, b, v).chamfer_l2 for s, b in SCENES])) for v in VARIANTS}
    best = min(avg, key=avg.get)
    ok = best == "full"
    record(7, ok, "mean chamfer " + ", ".join(f"{v} {c:.2e}" for v, c in avg.items()) + f"; lowest: {best}")
    assert ok


# --- 8. oracle and metric equivalence --------------------------------------


def _brute_blend(depths, costs):
    d, c = [], []
    for row_d, row_c in zip(depths, costs):
        e = [math.exp(x - max(row_c)) for x in row_c]
        s = sum(e)
        d.append(sum(di * ei / s for di, ei in zip(row_d, e)))
        c.append(max(e) / s)
    return np.array(d), np.array(c)


def _brute_pairs(A, B):
    dab = [min(math.dist(a, b) for b in B) for a in A]
    dba = [min(math.dist(a, b) for a in A) for b in B]
    return dab, dba


def _brute_chamfer(A, B):
    dab, dba = _brute_pairs(A, B)
    return sum(x * x for x in dab) / len(dab) + sum(x * x for x in dba) / len(dba)


def _brute_fscore(A, B, tau):
    dab, dba = _brute_pairs(A, B)
    p = sum(x < tau for x in dab) / len(dab)
    r = sum(x < tau for x in dba) / len(dba)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _brute_variance(members):
    M = len(members)
    out = np.zeros(members.shape[1:])
    for i in range(members.shape[1]):
        for c in range(3):
            mu = sum(members[k, i, c] for k in range(M)) / M
            out[i, c] = sum((members[k, i, c] - mu) ** 2 for k in range(M)) / M
    return out


def test_criterion_08_oracle_and_metric_equivalence():
    rng = np.random.default_rng(8)
    worst = dict(blend=0.0, chamfer=0.0, fscore=0.0, variance=0.0)
    for _ in range(20):
        n, h = int(rng.integers(1, 25)), int(rng.integers(1, 9))
        depths, costs = rng.uniform(0.5, 4, (n, h)), rng.normal(0, 3, (n, h))
        d, c = blend_hypotheses(depths, costs)
        bd, bc = _brute_blend(depths, costs)
        worst["blend"] = max(worst["blend"], np.max(np.abs(d - bd)), np.max(np.abs(c - bc)))
        A = rng.normal(size=(int(rng.integers(1, 200)), 3))
        B = rng.normal(size=(int(rng.integers(1, 200)), 3))
        worst["chamfer"] = max(worst["chamfer"], abs(chamfer_l2(A, B) - _brute_chamfer(A, B)))
        tau = float(rng.uniform(0.05, 1.0))
        worst["fscore"] = max(worst["fscore"], abs(fscore(A, B, tau).fscore - _brute_fscore(A, B, tau)))
        m = rng.normal(size=(int(rng.integers(1, 12)), int(rng.integers(1, 16)), 3))
        m /= np.linalg.norm(m, axis=2, keepdims=True)
        worst["variance"] = max(worst["variance"], np.max(np.abs(ensemble_stats(m)[1] - _brute_variance(m))))
    ok = max(worst.values()) <= 1e-12
    record(8, ok, "max deviation from brute force " + ", ".join(f"{k} {v:.1e}" for k, v in worst.items()))
    assert ok


# --- 9. gating boundary ----------------------------------------------------


def test_criterion_09_gating_boundary():
    at_mvs = bool(gate_depth(np.array([TAU_MVS]), TAU_MVS)[0])
    above_mvs = bool(gate_depth(np.array([np.nextafter(TAU_MVS, 1.0)]), TAU_MVS)[0])
    var = np.array([[0.015, 0.0075, 0.0075]])
    tau = float(np.sum(var))  # the L1 norm lands exactly on the threshold
    at_ps = bool(gate_normal(var, tau)[0])
    below_ps = bool(gate_normal(var, np.nextafter(tau, 1.0))[0])
    ok = not at_mvs and above_mvs and not at_ps and below_ps and tau == TAU_PS
    record(9, ok, f"C = tau_mvs -> gate {int(at_mvs)}; |var|_1 = tau_ps -> gate {int(at_ps)}; one ulp inside -> gates {int(above_mvs)}, {int(below_ps)}")
    assert ok


# --- 10. determinism -------------------------------------------------------


def test_criterion_10_determinism(tmp_path):
    sim = ["--views", "3", "--lights", "6", "--resolution", "24", "--noise-std", "0.005", "--seed", "5"]
    train = ["--sdf-layers", "4", "--sdf-width", "32", "--skip-layer", "2", "--feature-dim", "8", "--radiance-layers", "3",
             "--radiance-width", "32", "--epochs", "20", "--rays-per-view", "16", "--eikonal-points", "64", "--lr", "1e-3",
             "--grid-resolution", "48", "--samples", "20000", "--seed", "5"]
    blobs = []
    for run in ("a", "b"):
        d, o = tmp_path / run / "data", tmp_path / run / "out"
        assert main(["simulate", "--out", str(d)] + sim) == 0
        assert main(["priors", "--data", str(d), "--ensemble-size", "16", "--seed", "5"]) == 0
        assert main(["reconstruct", "--data", str(d), "--out", str(o)] + train) == 0
        assert main(["evaluate", "--data", str(d), "--mesh", str(o / "mesh.obj"), "--out", str(o / "eval"),
                     "--samples", "20000", "--seed", "5"]) == 0
        blobs.append([(o / p).read_bytes() for p in ("mesh.obj", "eval/report.txt", "eval/report.csv", "train_log.csv")])
    same = [x == y for x, y in zip(*blobs)]
    ok = all(same) and len(blobs[0][0]) > 0
    record(10, ok, f"mesh, report.txt, report.csv, train_log.csv byte-identical: {same}")
    assert ok
