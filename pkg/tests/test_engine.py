import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hoopnet.engine import (
    BatchNorm,
    GRUCell,
    Linear,
    Parameter,
    RMSProp,
    Tensor,
    backward,
    clip_gradients,
    concat,
    conv2d,
    gaussian_noise,
    gradcheck,
    hadamard,
    load_checkpoint,
    log_softmax,
    maxpool2d,
    no_grad,
    relative_error,
    relu,
    rmsprop_step,
    save_checkpoint,
    sigmoid,
    softmax,
    softmax_nll,
    tanh,
)
from hoopnet.engine.nn import Module, batch_norm
from hoopnet.engine.tensor import row_block
from hoopnet.errors import CheckpointError

RNG = np.random.default_rng(20240801)
TOL = 1e-4


# conv2d


def test_conv_identity_kernel():
    x = Tensor(RNG.normal(size=(2, 3, 5, 5)))
    w = Parameter(np.zeros((3, 3, 1, 1)))
    for c in range(3):
        w.data[c, c, 0, 0] = 1.0
    b = Parameter(np.zeros(3))
    out = conv2d(x, w, b, stride=1)
    np.testing.assert_allclose(out.data, x.data)


def test_conv_zero_input_gives_bias():
    x = Tensor(np.zeros((1, 2, 4, 4)))
    w = Parameter(RNG.normal(size=(5, 2, 3, 3)))
    b = Parameter(np.arange(5.0))
    out = conv2d(x, w, b)
    expect = np.broadcast_to(np.arange(5.0)[:, None, None], (5, 4, 4))
    np.testing.assert_allclose(out.data[0], expect)


def test_conv_gradcheck():
    x = Tensor(RNG.normal(size=(1, 3, 4, 4)), requires_grad=True)
    w = Parameter(RNG.normal(size=(2, 3, 3, 3)) * 0.5)
    b = Parameter(RNG.normal(size=2))
    err = gradcheck(lambda: (conv2d(x, w, b) * Tensor(_fixed_like((1, 2, 4, 4)))).sum(), [x, w, b])
    assert err < TOL


def test_conv_stride2_gradcheck():
    x = Tensor(RNG.normal(size=(2, 2, 5, 6)), requires_grad=True)
    w = Parameter(RNG.normal(size=(3, 2, 3, 3)) * 0.5)
    b = Parameter(RNG.normal(size=3))
    err = gradcheck(
        lambda: (conv2d(x, w, b, stride=2) * Tensor(_fixed_like((2, 3, 3, 3)))).sum(), [x, w, b]
    )
    assert err < TOL


def test_conv_shape_mismatch():
    x = Tensor(np.zeros((1, 3, 4, 4)))
    w = Parameter(np.zeros((2, 4, 3, 3)))
    with pytest.raises(ValueError):
        conv2d(x, w, None)


def _fixed_like(shape):
    rng = np.random.default_rng(99)
    return rng.normal(size=shape)


# maxpool2d


def test_maxpool_constant_input():
    x = Tensor(np.full((1, 2, 4, 4), 3.5))
    out = maxpool2d(x, 2, 2)
    assert out.data.shape == (1, 2, 2, 2)
    np.testing.assert_allclose(out.data, 3.5)


def test_maxpool_routes_gradient_to_max():
    data = np.zeros((1, 1, 2, 2))
    data[0, 0, 1, 0] = 7.0
    x = Tensor(data, requires_grad=True)
    out = maxpool2d(x, 2, 2)
    backward(out.sum())
    expect = np.zeros((1, 1, 2, 2))
    expect[0, 0, 1, 0] = 1.0
    np.testing.assert_array_equal(x.grad, expect)


def test_maxpool_matches_brute_force():
    x = RNG.normal(size=(2, 3, 6, 6))
    out = maxpool2d(Tensor(x), 2, 2)
    for n in range(2):
        for c in range(3):
            for i in range(3):
                for j in range(3):
                    window = x[n, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2]
                    assert out.data[n, c, i, j] == window.max()


def test_maxpool_tie_breaks_first_index():
    data = np.zeros((1, 1, 2, 2))  # all equal: gradient goes to index 0
    x = Tensor(data, requires_grad=True)
    backward(maxpool2d(x, 2, 2).sum())
    expect = np.zeros((1, 1, 2, 2))
    expect[0, 0, 0, 0] = 1.0
    np.testing.assert_array_equal(x.grad, expect)


def test_maxpool_gradcheck_unique_entries():
    # distinct values so finite differences cannot flip the argmax
    vals = RNG.permutation(36).astype(float).reshape(1, 1, 6, 6)
    x = Tensor(vals, requires_grad=True)
    err = gradcheck(lambda: (maxpool2d(x, 2, 2) * Tensor(_fixed_like((1, 1, 3, 3)))).sum(), [x])
    assert err < TOL


def test_maxpool_uneven_padding():
    x = Tensor(RNG.normal(size=(1, 1, 5, 5)))
    out = maxpool2d(x, 2, 2)
    assert out.data.shape == (1, 1, 3, 3)
    assert out.data[0, 0, 2, 2] == x.data[0, 0, 4, 4]


# GRU


def test_gru_zero_weights_update_rule():
    cell = GRUCell(2, 2, np.random.default_rng(0))
    for p in cell.parameters():
        p.data[...] = 0.0
    h = Tensor(np.ones((1, 2)))
    x = Tensor(np.zeros((1, 2)))
    out = cell.step(x, h)
    np.testing.assert_allclose(out.data, 0.5)  # z=0.5, candidate=0 -> h'=h/2


def test_gru_update_gate_closed_keeps_state():
    cell = GRUCell(2, 2, np.random.default_rng(1))
    cell.b_update.data[...] = -50.0  # update gate ~ 0 -> h' = h
    h = Tensor(RNG.normal(size=(3, 2)))
    x = Tensor(RNG.normal(size=(3, 2)))
    out = cell.step(x, h)
    np.testing.assert_allclose(out.data, h.data, atol=1e-12)


def test_gru_gradcheck():
    cell = GRUCell(3, 4, np.random.default_rng(2))
    x = Tensor(RNG.normal(size=(2, 3)), requires_grad=True)
    h = Tensor(RNG.normal(size=(2, 4)), requires_grad=True)
    fixed = Tensor(_fixed_like((2, 4)))
    err = gradcheck(
        lambda: (cell.step(x, h) * fixed).sum(), [x, h] + cell.parameters()
    )
    assert err < TOL


def test_gru_projected_matches_plain_step():
    cell = GRUCell(3, 4, np.random.default_rng(3))
    x = Tensor(RNG.normal(size=(2, 3)))
    h = Tensor(RNG.normal(size=(2, 4)))
    a = cell.step(x, h)
    proj = cell.project_inputs(x)
    b = cell.step_projected(proj, h)
    np.testing.assert_allclose(a.data, b.data, atol=1e-12)


# batch normalization


def test_batchnorm_normalizes():
    bn = BatchNorm(3)
    x = Tensor(RNG.normal(loc=5.0, scale=10.0, size=(64, 3)))
    out = bn(x, training=True)
    np.testing.assert_allclose(out.data.mean(axis=0), 0.0, atol=1e-6)
    np.testing.assert_allclose(out.data.var(axis=0), 1.0, atol=1e-6)


def test_batchnorm_gamma_zero_gives_beta():
    bn = BatchNorm(3)
    bn.gamma.data[...] = 0.0
    bn.beta.data[...] = 2.5
    out = bn(Tensor(RNG.normal(size=(8, 3))), training=True)
    np.testing.assert_allclose(out.data, 2.5)


def test_batchnorm_batch_of_one_rejected():
    bn = BatchNorm(3)
    with pytest.raises(ValueError):
        bn(Tensor(np.zeros((1, 3))), training=True)


def test_batchnorm_inference_uses_running_stats():
    bn = BatchNorm(2)
    x = Tensor(RNG.normal(loc=3.0, size=(32, 2)))
    for _ in range(200):
        bn(x, training=True)
    inf = bn(x, training=False)
    trn = bn(x, training=True)
    np.testing.assert_allclose(inf.data, trn.data, atol=1e-2)


def test_batchnorm_gradcheck():
    gamma = Parameter(RNG.uniform(0.5, 1.5, 4))
    beta = Parameter(RNG.normal(size=4))
    x = Tensor(RNG.normal(size=(6, 4)), requires_grad=True)
    fixed = Tensor(_fixed_like((6, 4)))
    running = np.zeros(4), np.ones(4)

    def loss():
        out, _, _ = batch_norm(x, gamma, beta, running[0], running[1], training=True)
        return (out * fixed).sum()

    err = gradcheck(loss, [x, gamma, beta])
    assert err < TOL


def test_batchnorm_conv_layout_gradcheck():
    gamma = Parameter(RNG.uniform(0.5, 1.5, 2))
    beta = Parameter(RNG.normal(size=2))
    x = Tensor(RNG.normal(size=(3, 2, 4, 4)), requires_grad=True)
    fixed = Tensor(_fixed_like((3, 2, 4, 4)))

    def loss():
        out, _, _ = batch_norm(x, gamma, beta, np.zeros(2), np.ones(2), training=True)
        return (out * fixed).sum()

    assert gradcheck(loss, [x, gamma, beta]) < TOL


# softmax / cross-entropy


def test_softmax_nll_uniform_logits():
    logits = Tensor(np.zeros((3, 7)))
    loss = softmax_nll(logits, np.array([0, 3, 6]))
    np.testing.assert_allclose(loss.data, math.log(7.0))


def test_softmax_nll_dominant_logit():
    logits = np.zeros((1, 289))
    logits[0, 42] = 50.0
    loss = softmax_nll(Tensor(logits), np.array([42]))
    assert loss.data[0] < 1e-10


def test_softmax_nll_matches_direct_evaluation():
    logits = RNG.normal(size=(5, 11))
    targets = RNG.integers(0, 11, 5)
    loss = softmax_nll(Tensor(logits), targets)
    for i in range(5):
        p = np.exp(logits[i]) / np.exp(logits[i]).sum()
        np.testing.assert_allclose(loss.data[i], -np.log(p[targets[i]]), rtol=1e-12)


def test_softmax_nll_accepts_one_hot():
    logits = Tensor(RNG.normal(size=(4, 6)))
    idx = np.array([1, 0, 5, 2])
    onehot = np.eye(6)[idx]
    a = softmax_nll(logits, idx)
    b = softmax_nll(logits, onehot)
    np.testing.assert_array_equal(a.data, b.data)


def test_softmax_nll_backward_is_p_minus_target():
    logits = Parameter(RNG.normal(size=(3, 5)))
    targets = np.array([2, 0, 4])
    backward(softmax_nll(logits, targets).sum())
    p = np.exp(logits.data - logits.data.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    expect = p.copy()
    expect[np.arange(3), targets] -= 1.0
    np.testing.assert_allclose(logits.grad, expect, atol=1e-12)


def test_softmax_nll_gradcheck():
    logits = Parameter(RNG.normal(size=(4, 9)))
    targets = RNG.integers(0, 9, 4)
    assert gradcheck(lambda: softmax_nll(logits, targets).sum(), [logits]) < TOL


def test_softmax_simplex_property():
    x = Tensor(RNG.normal(size=(30, 17)) * 10)
    p = softmax(x)
    assert (p.data >= 0).all()
    np.testing.assert_allclose(p.data.sum(axis=-1), 1.0, atol=1e-9)


def test_log_softmax_gradcheck():
    x = Parameter(RNG.normal(size=(3, 6)))
    fixed = Tensor(_fixed_like((3, 6)))
    assert gradcheck(lambda: (log_softmax(x) * fixed).sum(), [x]) < TOL


def test_softmax_gradcheck():
    x = Parameter(RNG.normal(size=(3, 6)))
    fixed = Tensor(_fixed_like((3, 6)))
    assert gradcheck(lambda: (softmax(x) * fixed).sum(), [x]) < TOL


# hadamard


def test_hadamard_identity_and_zero():
    a = Tensor(RNG.normal(size=(4, 5)))
    ones = Tensor(np.ones((4, 5)))
    np.testing.assert_array_equal(hadamard(a, ones).data, a.data)
    zeros = Tensor(np.zeros((4, 5)))
    np.testing.assert_array_equal(hadamard(a, zeros).data, 0.0)


def test_hadamard_shape_mismatch():
    with pytest.raises(ValueError):
        hadamard(Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2))))


def test_hadamard_gradcheck():
    a = Parameter(RNG.normal(size=(3, 4)))
    b = Parameter(RNG.normal(size=(3, 4)))
    fixed = Tensor(_fixed_like((3, 4)))
    assert gradcheck(lambda: (hadamard(a, b) * fixed).sum(), [a, b]) < TOL


# elementwise + structural ops


def test_elementwise_gradchecks():
    for fn in (relu, sigmoid, tanh):
        x = Parameter(RNG.normal(size=(4, 3)))
        fixed = Tensor(_fixed_like((4, 3)))
        assert gradcheck(lambda: (fn(x) * fixed).sum(), [x]) < TOL, fn.__name__


def test_linear_and_concat_gradcheck():
    lin = Linear(5, 3, np.random.default_rng(4))
    x = Tensor(RNG.normal(size=(2, 5)), requires_grad=True)
    y = Tensor(RNG.normal(size=(2, 5)), requires_grad=True)
    fixed = Tensor(_fixed_like((2, 6)))

    def loss():
        return (concat([lin(x), lin(y)], axis=-1) * fixed).sum()

    assert gradcheck(loss, [x, y] + lin.parameters()) < TOL


def test_row_block_gradcheck():
    x = Parameter(RNG.normal(size=(6, 3)))
    fixed = Tensor(_fixed_like((2, 3)))
    assert gradcheck(lambda: (row_block(x, 2, 4) * fixed).sum(), [x]) < TOL


def test_broadcast_add_gradcheck():
    x = Parameter(RNG.normal(size=(4, 3)))
    b = Parameter(RNG.normal(size=(3,)))
    assert gradcheck(lambda: ((x + b) * Tensor(_fixed_like((4, 3)))).sum(), [x, b]) < TOL


# gaussian noise


def test_noise_sigma_zero_is_identity():
    x = Tensor(RNG.normal(size=(3, 3)))
    assert gaussian_noise(x, 0.0, np.random.default_rng(0), training=True) is x


def test_noise_inference_is_identity():
    x = Tensor(RNG.normal(size=(3, 3)))
    assert gaussian_noise(x, 10.0, np.random.default_rng(0), training=False) is x


def test_noise_statistics():
    x = Tensor(np.zeros(1_000_000))
    out = gaussian_noise(x, 1e-3, np.random.default_rng(8), training=True)
    mean = out.data.mean()
    assert abs(mean) < 5 * 1e-3 / math.sqrt(1_000_000)


def test_noise_passes_gradient_through():
    x = Parameter(np.zeros((2, 2)))
    out = gaussian_noise(x, 0.5, np.random.default_rng(1), training=True)
    backward(out.sum())
    np.testing.assert_array_equal(x.grad, np.ones((2, 2)))


# optimizer


def test_rmsprop_zero_gradient_no_change():
    p = Parameter(np.array([1.0, 2.0]))
    p.grad = np.zeros(2)
    rmsprop_step([p], lr=0.1, momentum=0.9)
    np.testing.assert_array_equal(p.data, [1.0, 2.0])


def test_rmsprop_frozen_parameter_unchanged():
    p = Parameter(np.array([1.0]))
    p.frozen = True
    p.grad = np.array([5.0])
    rmsprop_step([p], lr=0.1)
    np.testing.assert_array_equal(p.data, [1.0])
    assert p.grad is None  # buffers still cleared


def test_rmsprop_hand_computed_steps():
    p = Parameter(np.array([0.0]))
    opt = RMSProp([p], lr=0.1, decay=0.0, momentum=0.0, rho=0.9, eps=1e-8)
    p.grad = np.array([1.0])
    opt.step()
    expect1 = -0.1 * 1.0 / (math.sqrt(0.1) + 1e-8)
    np.testing.assert_allclose(p.data, [expect1], rtol=1e-12)
    p.grad = np.array([1.0])
    opt.step()
    cache2 = 0.9 * 0.1 + 0.1
    expect2 = expect1 - 0.1 / (math.sqrt(cache2) + 1e-8)
    np.testing.assert_allclose(p.data, [expect2], rtol=1e-12)


def test_rmsprop_lr_decay():
    p = Parameter(np.array([0.0]))
    opt = RMSProp([p], lr=1.0, decay=0.5, momentum=0.0, rho=0.0, eps=0.0)
    p.grad = np.array([1.0])
    opt.step()  # t=0: lr 1.0, cache=1 -> step -1
    np.testing.assert_allclose(p.data, [-1.0])
    p.grad = np.array([1.0])
    opt.step()  # t=1: lr 1/1.5
    np.testing.assert_allclose(p.data, [-1.0 - 1.0 / 1.5])


def test_clip_gradients():
    a = Parameter(np.array([3.0]))
    b = Parameter(np.array([4.0]))
    a.grad = np.array([3.0])
    b.grad = np.array([4.0])
    norm = clip_gradients([a, b], max_norm=10.0)
    assert norm == 5.0
    np.testing.assert_array_equal(a.grad, [3.0])  # below threshold: unchanged
    norm = clip_gradients([a, b], max_norm=2.5)
    np.testing.assert_allclose(np.hypot(a.grad[0], b.grad[0]), 2.5, rtol=1e-9)


def test_clip_gradients_random_norm_bound():
    params = [Parameter(np.zeros(7)) for _ in range(5)]
    for p in params:
        p.grad = RNG.normal(size=7) * 10
    clip_gradients(params, max_norm=1.0)
    total = math.sqrt(sum(float((p.grad ** 2).sum()) for p in params))
    assert total <= 1.0 + 1e-9


# determinism / freezing / autodiff behavior


def test_forward_determinism():
    cell = GRUCell(4, 4, np.random.default_rng(5))
    x = RNG.normal(size=(3, 4))
    h = RNG.normal(size=(3, 4))
    a = cell.step(Tensor(x), Tensor(h)).data
    b = cell.step(Tensor(x), Tensor(h)).data
    np.testing.assert_array_equal(a, b)


def test_frozen_bits_invariant_under_many_steps():
    lin = Linear(3, 3, np.random.default_rng(6))
    frozen_bytes = lin.weight.data.tobytes()
    lin.weight.frozen = True
    opt = RMSProp(lin.parameters(), lr=0.5, momentum=0.9)
    for _ in range(10):
        out = lin(Tensor(RNG.normal(size=(4, 3))))
        backward((out * out).sum())
        opt.step()
    assert lin.weight.data.tobytes() == frozen_bytes
    assert lin.bias.data.tobytes() != Parameter(np.zeros(3)).data.tobytes()


def test_backward_requires_scalar_and_finite():
    x = Parameter(np.ones((2, 2)))
    with pytest.raises(ValueError):
        backward(x + 0.0)
    bad = Tensor(np.array(np.inf))
    with pytest.raises(FloatingPointError):
        backward(bad)


def test_grad_accumulates_across_backward_calls():
    p = Parameter(np.array([2.0]))
    backward((p * 3.0).sum())
    backward((p * 3.0).sum())
    np.testing.assert_array_equal(p.grad, [6.0])


def test_no_grad_builds_no_tape():
    p = Parameter(np.ones(3))
    with no_grad():
        out = (p * 2.0).sum()
    assert out._vjp is None and out._parents == ()


@settings(max_examples=30, deadline=None)
@given(st.integers(2, 5), st.integers(2, 6))
def test_softmax_rows_simplex_property(n, k):
    x = np.random.default_rng(n * 100 + k).normal(size=(n, k)) * 5
    p = softmax(Tensor(x)).data
    assert (p >= 0).all()
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-9)


# checkpoints


class _TinyModel(Module):
    def __init__(self, seed=0):
        super().__init__()
        rng = np.random.default_rng(seed)
        self.layer = Linear(3, 2, rng)
        self.norm = BatchNorm(2)


def test_checkpoint_round_trip(tmp_path):
    m = _TinyModel(seed=1)
    state = [(n, a) for n, a, _ in m.named_state()]
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, state, "hash123", meta={"variant": "tiny", "completed_stages": "a,b"})
    m2 = _TinyModel(seed=2)
    state2 = [(n, a) for n, a, _ in m2.named_state()]
    meta = load_checkpoint(path, state2, "hash123")
    assert meta["completed_stages"] == "a,b"
    np.testing.assert_array_equal(m2.layer.weight.data, m.layer.weight.data)
    np.testing.assert_array_equal(m2.norm.running_mean, m.norm.running_mean)


def test_checkpoint_hash_mismatch(tmp_path):
    m = _TinyModel()
    state = [(n, a) for n, a, _ in m.named_state()]
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, state, "aaaa")
    with pytest.raises(CheckpointError, match="different configuration"):
        load_checkpoint(path, state, "bbbb")


def test_checkpoint_shape_mismatch(tmp_path):
    m = _TinyModel()
    state = [(n, a) for n, a, _ in m.named_state()]
    path = tmp_path / "model.ckpt"
    save_checkpoint(path, state, "h")

    class Other(Module):
        def __init__(self):
            super().__init__()
            self.layer = Linear(4, 2, np.random.default_rng(0))
            self.norm = BatchNorm(2)

    other = Other()
    with pytest.raises(CheckpointError, match="manifest"):
        load_checkpoint(path, [(n, a) for n, a, _ in other.named_state()], "h")


def test_checkpoint_not_a_checkpoint(tmp_path):
    path = tmp_path / "junk.ckpt"
    path.write_bytes(b"not a checkpoint at all")
    m = _TinyModel()
    with pytest.raises(CheckpointError, match="not a checkpoint"):
        load_checkpoint(path, [(n, a) for n, a, _ in m.named_state()], "h")
