import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from brclab import kernels
from brclab.autodiff import (
    AdamW,
    BroNet,
    DenseLayer,
    GradTape,
    LayerNorm,
    ParameterSet,
    ResidualBlock,
    TanhGaussianActor,
    Tensor,
    adamw_step,
    backward,
    forward,
    grad_check,
    ops,
)
from brclab.autodiff.gradcheck import numerical_grad, relative_error


def sq_loss(net, x):
    return ops.sum(ops.square(net(x)))


# --- forward -----------------------------------------------------------------


def test_dense_identity_forward():
    layer = DenseLayer(2, 2, init="identity")
    out = forward(layer, np.array([[2.0, 3.0]]), GradTape())
    np.testing.assert_array_equal(out.data, [[2.0, 3.0]])


def test_residual_block_zero_weights_is_identity(rng):
    block = ResidualBlock(4, rng)
    for t in block.params.values():
        t.data[...] = 0.0
    x = rng.standard_normal((3, 4))
    np.testing.assert_array_equal(block(x).data, x)


def test_layer_norm_small_vector():
    ln = LayerNorm(2, eps=1e-5)
    out = ln(np.array([[1.0, 3.0]])).data[0]
    expected = np.array([-1.0, 1.0]) / math.sqrt(1.0 + 1e-5)
    np.testing.assert_allclose(out, expected, atol=1e-12)
    assert np.all(np.abs(out - [-1.0, 1.0]) <= 1e-4)


def test_forward_shape_mismatch_names_layer(rng):
    net = BroNet(5, 8, 1, 3, rng, name="critic")
    with pytest.raises(ValueError, match="critic"):
        net(np.zeros((2, 4)))
    with pytest.raises(ValueError, match="mylayer"):
        DenseLayer(3, 2, rng, name="mylayer")(np.zeros((1, 4)))


def test_layer_norm_requires_positive_eps():
    with pytest.raises(ValueError):
        LayerNorm(3, eps=0.0)


def test_fused_bronet_matches_layerwise(rng):
    net = BroNet(6, 16, 2, 7, rng, head_init="orthogonal")
    x = rng.standard_normal((5, 6))
    np.testing.assert_allclose(net(x).data, net.forward_reference(x).data, rtol=0, atol=1e-12)
    np.testing.assert_allclose(net.body(x).data, net.body_reference(x).data, rtol=0, atol=1e-12)


def test_fused_bronet_gradients_match_layerwise(rng):
    net = BroNet(6, 16, 2, 7, rng, head_init="orthogonal")
    x = rng.standard_normal((5, 6))
    w = rng.standard_normal((5, 7))
    grads = []
    for fn in (net.forward, net.forward_reference):
        xt = Tensor(x, requires_grad=True)
        net.params.zero_grad()
        with GradTape() as tape:
            loss = ops.sum(ops.mul(fn(xt), w))
        tape.backward(loss)
        grads.append(np.concatenate([net.params.flat_grad(), xt.grad.ravel()]))
    np.testing.assert_allclose(grads[0], grads[1], rtol=0, atol=1e-11)


def test_zero_head_gives_uniform_logits(rng):
    net = BroNet(3, 8, 2, 101, rng)
    out = net(rng.standard_normal((4, 3))).data
    np.testing.assert_array_equal(out, 0.0)


# --- backward ----------------------------------------------------------------


def test_linear_map_gradient_rows():
    w = Tensor(np.zeros((2, 3)), requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum(ops.matmul(np.array([[1.0, 2.0]]), w))
    backward(tape, loss)
    np.testing.assert_array_equal(w.grad, [[1.0, 1.0, 1.0], [2.0, 2.0, 2.0]])


def test_disconnected_parameter_grad_is_exact_zero(rng):
    a = Tensor(rng.standard_normal(3), requires_grad=True)
    b = Tensor(rng.standard_normal(3), requires_grad=True)
    with GradTape() as tape:
        loss = ops.sum(ops.square(a))
    tape.backward(loss)
    assert np.all(b.grad == 0.0)


def test_backward_accumulates_until_cleared():
    w = Tensor(np.ones(2), requires_grad=True)
    for expected in (1.0, 2.0):
        with GradTape() as tape:
            loss = ops.sum(w)
        tape.backward(loss)
        np.testing.assert_array_equal(w.grad, expected)
    w.zero_grad()
    assert np.all(w.grad == 0.0)


def test_backward_without_forward_errors():
    with pytest.raises(RuntimeError):
        GradTape().backward(Tensor(1.0))


def test_backward_rejects_foreign_or_nonscalar_loss():
    w = Tensor(np.ones(2), requires_grad=True)
    with GradTape() as tape:
        vec = ops.mul(w, 2.0)
    with pytest.raises(ValueError):
        tape.backward(vec)
    with GradTape() as other:
        loss = ops.sum(w)
    with pytest.raises(RuntimeError):
        tape.backward(loss)
    other.backward(loss)


def test_random_bronet_matches_finite_differences(rng):
    net = BroNet(5, 8, 2, 4, rng, head_init="orthogonal")
    assert grad_check(net, rng.standard_normal((3, 5)), sq_loss, h=1e-5) <= 1e-4


# --- AdamW -------------------------------------------------------------------


def _single(theta):
    p = Tensor(np.array([theta]), requires_grad=True)
    return p, ParameterSet([("p", p)])


def test_adamw_zero_grad_isolates_decay():
    p, ps = _single(1.0)
    opt = AdamW(ps, lr=0.01, weight_decay=0.1)
    p.grad = np.zeros(1)
    adamw_step(ps, opt)
    np.testing.assert_allclose(p.data, [0.999], rtol=0, atol=1e-15)


def test_adamw_single_step_hand_expansion():
    p, ps = _single(0.0)
    opt = AdamW(ps, lr=3e-4, betas=(0.9, 0.999), weight_decay=0.0)
    p.grad = np.ones(1)
    opt.step()
    assert abs(p.data[0] + 3e-4) <= 1e-8
    assert p._grad is None


def test_adamw_step_size_saturates_at_lr():
    p, ps = _single(0.0)
    opt = AdamW(ps, lr=1e-3, weight_decay=0.0)
    prev = 0.0
    for _ in range(2000):
        p.grad = np.array([0.5])
        opt.step()
        step = prev - p.data[0]
        prev = p.data[0]
    assert abs(step - 1e-3) < 1e-6


def test_adamw_nonfinite_grad_names_parameter():
    p, ps = _single(0.0)
    opt = AdamW(ps)
    p.grad = np.array([np.nan])
    with pytest.raises(FloatingPointError, match="'p'"):
        opt.step()


def test_adamw_kernel_paths_agree(rng):
    n = 257
    theta, g = rng.standard_normal(n), rng.standard_normal(n)
    m, v = rng.standard_normal(n) * 0.1, rng.random(n)
    a = [x.copy() for x in (theta, g, m, v)]
    b = [x.copy() for x in (theta, g, m, v)]
    hp = (3e-4, 0.9, 0.999, 1e-8, 3e-5, 0.271, 0.00299)
    kernels.adamw_update_loop(*a, *hp)
    kernels.adamw_update_numpy(*b, *hp)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x, y)


def test_adamw_moments_shape_match(rng):
    net = BroNet(3, 4, 1, 2, rng)
    opt = AdamW(net.params)
    for name, t in net.params.items():
        assert opt.m[name].shape == t.shape and opt.v[name].shape == t.shape


def test_adamw_flat_storage_keeps_views_in_sync(rng):
    net = BroNet(3, 4, 1, 2, rng, head_init="orthogonal")
    opt = AdamW(net.params)
    x = rng.standard_normal((2, 3))
    with GradTape() as tape:
        loss = sq_loss(net, x)
    tape.backward(loss)
    before = net.params.flat().copy()
    opt.step()
    after = net.params.flat()
    assert np.all(np.isfinite(after)) and not np.array_equal(before, after)
    np.testing.assert_array_equal(after, net.params.storage())


# --- grad_check --------------------------------------------------------------


def test_grad_check_linear_quadratic(rng):
    layer = DenseLayer(3, 2, rng)
    assert grad_check(layer, rng.standard_normal((4, 3)), sq_loss) <= 1e-7


def test_grad_check_bronet_with_layer_norm(rng):
    net = BroNet(4, 6, 2, 3, rng, head_init="orthogonal")
    assert grad_check(net, rng.standard_normal((3, 4)), sq_loss) <= 1e-4


def test_grad_check_actor_log_density(rng):
    actor = TanhGaussianActor(4, 6, 1, 2, rng)
    x = rng.standard_normal((3, 4))
    noise = rng.standard_normal((3, 2))
    assert grad_check(actor, x, lambda a, x: ops.sum(a(x, noise)[1])) <= 1e-4


def test_numerical_grad_rejects_noncontiguous():
    with pytest.raises(ValueError):
        numerical_grad(lambda: 0.0, np.zeros((3, 2)).T)


def test_relative_error_floor():
    assert relative_error(np.array([1e-12]), np.array([0.0])) <= 1e-6


# --- actor -------------------------------------------------------------------


def test_actor_samples_in_open_box_with_finite_log_density(rng):
    actor = TanhGaussianActor(3, 8, 1, 2, rng)
    x = rng.standard_normal((50, 3)) * 5
    action, logp = actor(x, rng.standard_normal((50, 2)) * 3)
    assert np.all(np.abs(action.data) < 1.0)
    assert np.all(np.isfinite(logp.data))
    assert logp.shape == (50,)


def test_actor_log_std_starts_at_zero(rng):
    actor = TanhGaussianActor(3, 8, 1, 2, rng)
    _, log_std = actor.distribution(rng.standard_normal((4, 3)))
    np.testing.assert_allclose(log_std.data, 0.0, atol=0.15)


def test_actor_log_prob_matches_change_of_variables(rng):
    actor = TanhGaussianActor(3, 8, 1, 2, rng)
    x = rng.standard_normal((6, 3))
    noise = rng.standard_normal((6, 2))
    action, logp = actor(x, noise)
    mean, log_std = actor.distribution(x)
    u = mean.data + np.exp(log_std.data) * noise
    gauss = -0.5 * noise**2 - 0.5 * np.log(2 * np.pi) - log_std.data
    direct = (gauss - np.log(1 - np.tanh(u) ** 2)).sum(axis=1)
    np.testing.assert_allclose(logp.data, direct, rtol=1e-9)


# --- properties --------------------------------------------------------------


@settings(max_examples=10, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_every_layer_type_passes_gradient_check(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((3, 4))
    assert grad_check(DenseLayer(4, 3, rng), x, sq_loss) <= 1e-4
    ln = LayerNorm(4)
    ln.scale.data[...] = rng.standard_normal(4)
    ln.shift.data[...] = rng.standard_normal(4)
    assert grad_check(ln, x, lambda n, x: ops.sum(ops.mul(n(x), np.arange(1.0, 5.0)))) <= 1e-4
    assert grad_check(ResidualBlock(4, rng), x, sq_loss) <= 1e-4


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10_000), rows=st.integers(1, 5), dim=st.integers(2, 16))
def test_layer_norm_moments(seed, rows, dim):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((rows, dim)) * rng.uniform(0.1, 10) + rng.uniform(-5, 5)
    y = LayerNorm(dim, eps=1e-12)(x).data
    assert np.all(np.abs(y.mean(axis=1)) <= 1e-10)
    assert np.all(np.abs(y.var(axis=1) - 1.0) <= 1e-6)


def test_identical_seeds_give_identical_parameters_after_training():
    def run():
        rng = np.random.default_rng(7)
        net = BroNet(3, 8, 2, 4, rng, head_init="orthogonal")
        opt = AdamW(net.params)
        x = rng.standard_normal((5, 3))
        for _ in range(5):
            with GradTape() as tape:
                loss = sq_loss(net, x)
            tape.backward(loss)
            opt.step()
        return net.params.flat()

    assert run().tobytes() == run().tobytes()


def test_residual_identity_on_post_input_representation(rng):
    net = BroNet(3, 8, 2, 4, rng)
    for block in net.blocks:
        for t in block.params.values():
            t.data[...] = 0.0
    x = rng.standard_normal((4, 3))
    first = ops.relu(net.inp_ln(net.inp(x))).data
    np.testing.assert_allclose(net.body(x).data, first, rtol=0, atol=0)


def test_parameter_set_rejects_duplicates_and_is_ordered(rng):
    net = BroNet(3, 4, 1, 2, rng)
    names = net.params.names()
    assert names == BroNet(3, 4, 1, 2, np.random.default_rng(0)).params.names()
    ps = ParameterSet()
    ps.add("a", Tensor(1.0))
    with pytest.raises(KeyError):
        ps.add("a", Tensor(2.0))
