import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mvps import autodiff as ad
from mvps.autodiff import Adam, Dual, NonFiniteError, Param, ShapeError, Tape

RNG = np.random.default_rng(0)


def fd_check(fn, x0, step=1e-4, rtol=1e-3, atol=1e-7):
    """Compare tape gradient of sum(w * fn(x)) to central differences."""

    def value_at(x):
        t = Tape()
        return fn(t, t.const(x)).value

    w = np.random.default_rng(1).normal(size=np.shape(value_at(x0)))
    tape = Tape()
    x = tape.variable(x0)
    root = ad.vsum(fn(tape, x) * w)
    (g,) = tape.grad_of(root, [x])
    num = np.zeros_like(x0)
    for i in np.ndindex(x0.shape):
        xp, xm = x0.copy(), x0.copy()
        xp[i] += step
        xm[i] -= step
        fp = np.sum(value_at(xp) * w)
        fm = np.sum(value_at(xm) * w)
        num[i] = (fp - fm) / (2 * step)
    err = np.abs(g - num) / np.maximum(np.abs(num), 1.0)
    assert np.all(err < rtol) or np.allclose(g, num, atol=atol), (g, num)


UNARY = {
    "relu": lambda t, x: ad.relu(x),
    "sigmoid": lambda t, x: ad.sigmoid(x),
    "softplus": lambda t, x: ad.softplus(x, 3.0),
    "exp": lambda t, x: ad.exp(x),
    "log": lambda t, x: ad.log(ad.vabs(x) + 0.5),
    "sin": lambda t, x: ad.sin(x),
    "cos": lambda t, x: ad.cos(x),
    "abs": lambda t, x: ad.vabs(x),
    "square": lambda t, x: ad.square(x),
    "sqrt": lambda t, x: ad.sqrt(ad.vabs(x) + 0.1),
    "clamp_min": lambda t, x: ad.clamp_min(x, 0.3),
    "clamp_max": lambda t, x: ad.clamp_max(x, -0.3),
    "softmax": lambda t, x: ad.softmax(x, axis=-1),
    "norm2": lambda t, x: ad.norm(x, axis=-1),
    "norm1": lambda t, x: ad.norm(x, axis=-1, ord=1),
    "mean": lambda t, x: ad.mean(x, axis=0),
    "vmax": lambda t, x: ad.vmax(x, axis=1),
    "cumsum": lambda t, x: ad.cumsum(x, axis=1),
    "cumsum_excl": lambda t, x: ad.cumsum(x, axis=1, exclusive=True),
    "div_scalar": lambda t, x: x / 2.5,
    "transpose": lambda t, x: ad.transpose(x, (1, 0)),
    "getitem": lambda t, x: x[np.array([0, 2, 2])],
    "concat": lambda t, x: ad.concat([x, x * 2.0], axis=-1),
}


@pytest.mark.parametrize("name", sorted(UNARY))
def test_unary_primitives_match_finite_differences(name):
    x0 = np.random.default_rng(hash(name) % 2**32).uniform(-2, 2, size=(4, 5))
    # keep away from kinks where the derivative is undefined
    x0[np.abs(x0) < 0.05] = 0.5
    x0[np.abs(np.abs(x0) - 0.3) < 0.05] = 0.7
    fd_check(UNARY[name], x0)


@pytest.mark.parametrize("op", ["add", "sub", "mul", "div", "matmul"])
def test_binary_primitives_match_finite_differences(op):
    rng = np.random.default_rng(7)
    a0 = rng.uniform(-2, 2, size=(3, 4))
    b0 = rng.uniform(0.5, 2, size=(4, 4) if op == "matmul" else (1, 4))
    f = {
        "add": lambda x, y: x + y,
        "sub": lambda x, y: x - y,
        "mul": lambda x, y: x * y,
        "div": lambda x, y: x / y,
        "matmul": lambda x, y: x @ y,
    }[op]
    fd_check(lambda t, x: f(x, t.const(b0)), a0)
    fd_check(lambda t, y: f(t.const(a0), y), b0)


def test_trivial_examples():
    t = Tape()
    s = ad.softmax(t.const(np.zeros(3)))
    assert np.allclose(s.value, 1 / 3)
    for x, want in ((2.0, 1.0), (-2.0, 0.0)):
        t = Tape()
        v = t.variable(np.array([x]))
        (g,) = t.grad_of(ad.vsum(ad.relu(v)), [v])
        assert g[0] == want
    t = Tape()
    v = t.variable(np.array([0.0]))
    (g,) = t.grad_of(ad.vsum(ad.exp(v)), [v])
    assert g[0] == 1.0


def test_backward_linear_and_nonparticipating():
    x = np.array([1.0, -2.0, 3.0])
    W = Param("W", RNG.normal(size=(2, 3)))
    U = Param("U", np.ones((2, 2)))
    U.grad[:] = 5.0
    t = Tape()
    root = ad.vsum(t.param(W) @ x.reshape(3, 1))
    t.backward(root, [W, U])
    assert np.allclose(W.grad, np.tile(x, (2, 1)))
    assert np.all(U.grad == 0.0)


def test_backward_requires_scalar_root():
    t = Tape()
    v = t.variable(np.ones(3))
    with pytest.raises(ShapeError):
        t.backward(v * 2.0)


def test_shape_mismatch_names_both_shapes():
    t = Tape()
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4, 5\)"):
        ad.matmul(t.const(np.ones((2, 3))), t.const(np.ones((4, 5))))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        ad.add(t.const(np.ones((2, 3))), t.const(np.ones(4)))


def test_non_finite_reports_node_index():
    t = Tape()
    v = t.const(np.array([1.0, 0.0]))
    with pytest.raises(NonFiniteError, match="node 1"), np.errstate(divide="ignore"):
        ad.log(v)


def _mlp(rng, sizes):
    return [(Param(f"W{i}", rng.normal(0, 0.7, size=(a, b))), Param(f"b{i}", rng.normal(0, 0.1, size=b))) for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))]


def _mlp_loss(tape, layers, x):
    h = tape.const(x)
    for i, (W, b) in enumerate(layers):
        h = h @ tape.param(W) + tape.param(b)
        if i < len(layers) - 1:
            h = ad.softplus(h, 2.0)
    return ad.mean(ad.square(h))


def test_three_layer_mlp_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    layers = _mlp(rng, [4, 6, 5, 2])
    x = rng.uniform(-2, 2, size=(7, 4))
    params = [p for l in layers for p in l]
    t = Tape()
    t.backward(_mlp_loss(t, layers, x), params)
    worst = 0.0
    for p in params:
        for i in np.ndindex(p.value.shape):
            old = p.value[i]
            p.value[i] = old + 1e-4
            fp = _mlp_loss(Tape(), layers, x).value
            p.value[i] = old - 1e-4
            fm = _mlp_loss(Tape(), layers, x).value
            p.value[i] = old
            num = (fp - fm) / 2e-4
            worst = max(worst, abs(p.grad[i] - num) / max(abs(num), 1e-6))
    assert worst < 1e-3


def test_adam_first_step_hand_computed():
    p = Param("p", np.array([1.0]))
    opt = Adam([p], lr=0.1)
    p.grad[:] = 1.0
    assert opt.step()
    # m_hat = v_hat = 1 after bias correction: step = lr / (1 + eps)
    assert p.value[0] == pytest.approx(1.0 - 0.1 / (1.0 + 1e-8), abs=1e-15)


def test_adam_zero_gradient_and_monotone_motion():
    p = Param("p", np.array([2.0, -1.0]))
    opt = Adam([p], lr=0.01)
    opt.step()
    assert np.array_equal(p.value, [2.0, -1.0])
    prev = p.value.copy()
    for _ in range(50):
        p.grad[:] = [1.0, -3.0]
        opt.step()
        assert p.value[0] < prev[0] and p.value[1] > prev[1]
        prev = p.value.copy()


def test_adam_skips_non_finite_gradient():
    p = Param("p", np.array([1.0]))
    opt = Adam([p], lr=0.1)
    p.grad[:] = np.nan
    assert not opt.step()
    assert p.value[0] == 1.0 and opt.t == 0


def test_functional_adam_matches_class():
    p1, p2 = Param("a", np.array([0.3, -0.2])), Param("a", np.array([0.3, -0.2]))
    opt = Adam([p1], lr=0.05)
    m, v = [np.zeros(2)], [np.zeros(2)]
    for t in range(1, 6):
        g = np.array([np.sin(t), np.cos(t)])
        p1.grad[:] = g
        opt.step()
        ad.adam_step([p2], [g], 0.05, 0.9, 0.999, 1e-8, t, m, v)
    assert np.array_equal(p1.value, p2.value)


def test_param_grad_shape_tracks_value():
    p = Param("p", np.zeros((3, 2)))
    assert p.grad.shape == p.value.shape == p.shape


# ---------------------------------------------------------------------------
# spatial gradients
# ---------------------------------------------------------------------------


def test_spatial_gradient_linear_and_sphere():
    a = np.array([0.5, -2.0, 3.0])
    t = Tape()
    _, g = ad.spatial_gradient(t, lambda d: d @ t.const(a.reshape(3, 1)), RNG.normal(size=(4, 3)))
    assert np.allclose(g.value, a)
    t = Tape()
    _, g = ad.spatial_gradient(t, lambda d: ad.dual_norm(d) - 1.0, np.array([[2.0, 0.0, 0.0]]))
    assert np.allclose(g.value, [[1.0, 0.0, 0.0]])


def _dual_mlp(tape, layers, d):
    h = d
    for i, (W, b) in enumerate(layers):
        h = h @ tape.param(W) + tape.param(b)
        if i < len(layers) - 1:
            h = ad.dual_softplus(h, 5.0)
    return h


def test_spatial_gradient_matches_finite_differences():
    rng = np.random.default_rng(5)
    layers = _mlp(rng, [3, 8, 8, 1])
    x = rng.uniform(-1, 1, size=(6, 3))
    t = Tape()
    _, g = ad.spatial_gradient(t, lambda d: _dual_mlp(t, layers, d), x)

    def f(p):
        tt = Tape()
        return _dual_mlp(tt, layers, ad.dual_input(tt, p)).value.value[:, 0]

    for k in range(3):
        e = np.zeros(3)
        e[k] = 1e-4
        num = (f(x + e) - f(x - e)) / 2e-4
        assert np.all(np.abs(g.value[:, k] - num) <= 1e-3 * np.maximum(np.abs(num), 1e-3))


def test_spatial_gradient_backpropagates_into_weights():
    """Loss on |grad f|: analytic weight gradient vs. finite differences."""
    rng = np.random.default_rng(6)
    layers = _mlp(rng, [3, 6, 1])
    x = rng.uniform(-1, 1, size=(5, 3))
    params = [p for l in layers for p in l]

    def loss(tape):
        _, g = ad.spatial_gradient(tape, lambda d: _dual_mlp(tape, layers, d), x)
        return ad.mean(ad.square(ad.norm(g, axis=-1) - 1.0))

    t = Tape()
    t.backward(loss(t), params)
    W = layers[0][0]
    for i in [(0, 0), (1, 3), (2, 5)]:
        old = W.value[i]
        W.value[i] = old + 1e-4
        fp = loss(Tape()).value
        W.value[i] = old - 1e-4
        fm = loss(Tape()).value
        W.value[i] = old
        num = (fp - fm) / 2e-4
        assert abs(W.grad[i] - num) <= 1e-3 * max(abs(num), 1e-6)


def test_tape_determinism():
    rng = np.random.default_rng(8)
    layers = _mlp(rng, [3, 5, 1])
    x = rng.normal(size=(4, 3))
    a = _mlp_loss(Tape(), layers, x).value
    b = _mlp_loss(Tape(), layers, x).value
    assert a.tobytes() == b.tobytes()


def test_dual_arithmetic_product_rule():
    t = Tape()
    x = np.array([[0.3, -0.4, 1.1]])
    d = ad.dual_input(t, x)
    u = ad.dual_slice(d, slice(0, 1))
    v = ad.dual_slice(d, slice(1, 2))
    prod = u * v  # gradient (x1, x0, 0)
    assert np.allclose(prod.tangent.value[:, 0, 0], [x[0, 1], x[0, 0], 0.0])
    s = ad.dual_sin(u)
    assert np.allclose(s.tangent.value[:, 0, 0], [np.cos(x[0, 0]), 0, 0])


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-2, 2), min_size=2, max_size=6))
def test_softmax_is_a_distribution(xs):
    t = Tape()
    s = ad.softmax(t.const(np.array(xs))).value
    assert np.all(s >= 0) and abs(s.sum() - 1.0) < 1e-12


@settings(max_examples=30, deadline=None)
@given(st.floats(-2, 2).filter(lambda v: abs(v) > 1e-3))
def test_abs_gradient_is_sign(x):
    t = Tape()
    v = t.variable(np.array([x]))
    (g,) = t.grad_of(ad.vsum(ad.vabs(v)), [v])
    assert g[0] == np.sign(x)
