import numpy as np
import pytest

from ganlab.tinygan.losses import d_loss_grads, g_loss_grad, gan_losses
from ganlab.tinygan.nets import SGD, Adam, DenseNet, sigmoid


def small_net(sizes, output="identity", seed=0):
    return DenseNet.init(sizes, np.random.default_rng(seed), output=output, dtype=np.float64)


def numeric_grad(f, arr, h=1e-5):
    g = np.zeros_like(arr)
    it = np.nditer(arr, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = arr[i]
        arr[i] = old + h
        up = f()
        arr[i] = old - h
        down = f()
        arr[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(a)), np.max(np.abs(b)), 1e-8)


def test_zero_net_outputs_zero():
    net = DenseNet.zeros([5, 4, 3])
    assert not net(np.ones((7, 5))).any()


def test_single_layer_is_matrix_product():
    rng = np.random.default_rng(1)
    w, b = rng.standard_normal((4, 3)), rng.standard_normal(3)
    x = rng.standard_normal((6, 4))
    np.testing.assert_allclose(DenseNet([w], [b])(x), x @ w + b)


def test_shape_validation():
    with pytest.raises(ValueError):
        DenseNet([np.zeros((3, 4)), np.zeros((5, 1))], [np.zeros(4), np.zeros(1)])
    with pytest.raises(ValueError):
        small_net([3, 2])(np.zeros((2, 4)))
    with pytest.raises(ValueError):
        DenseNet([np.zeros((2, 2))], [np.zeros(2)], hidden="tanh")


def test_sigmoid_matches_reference_and_is_stable():
    x = np.linspace(-50, 50, 1001)
    ref = 1.0 / (1.0 + np.exp(-np.clip(x, -30, 30)))
    np.testing.assert_allclose(sigmoid(x), ref, rtol=1e-12)
    assert np.isfinite(sigmoid(np.array([-1e30, 1e30]))).all()


@pytest.mark.parametrize("output", ["identity", "sigmoid"])
def test_backward_matches_finite_differences(output):
    net = small_net([6, 8, 5, 3], output=output, seed=2)
    assert net.n_params() <= 500
    rng = np.random.default_rng(3)
    x = rng.standard_normal((4, 6))
    v = rng.standard_normal((4, 3))
    loss = lambda: float((net(x) * v).sum())  # noqa: E731
    grads, gx = net.backward(net.forward(x), v, need_input_grad=True)
    for p, g in zip(net.params, grads):
        assert rel_err(g, numeric_grad(loss, p)) < 1e-4
    assert rel_err(gx, numeric_grad(loss, x)) < 1e-4


def test_discriminator_loss_gradients_all_regimes():
    rng = np.random.default_rng(4)
    disc = small_net([5, 7, 1], seed=5)
    xr, xf, xc = rng.random((3, 5)), rng.random((4, 5)), rng.random((4, 5))
    for pcr in (False, True):
        def loss():
            s = disc(np.concatenate([xr, xf, xc]))[:, 0]
            return gan_losses(s[:3], s[3:7], s[7:] if pcr else None, pcr)[0]
        inp = np.concatenate([xr, xf, xc] if pcr else [xr, xf])
        cache = disc.forward(inp)
        s = cache[-1][:, 0]
        parts = d_loss_grads(s[:3], s[3:7], s[7:] if pcr else None, pcr)
        grads, _ = disc.backward(cache, np.concatenate([p for p in parts if p is not None])[:, None])
        for p, g in zip(disc.params, grads):
            assert rel_err(g, numeric_grad(loss, p)) < 1e-4


def test_generator_loss_gradient_through_both_nets():
    rng = np.random.default_rng(6)
    gen = small_net([3, 6, 5], output="sigmoid", seed=7)
    disc = small_net([5, 6, 1], seed=8)
    z = rng.standard_normal((5, 3))

    def loss():
        s = disc(gen(z))[:, 0]
        return gan_losses(np.zeros(1), s)[1]

    gc = gen.forward(z)
    dc = disc.forward(gc[-1])
    _, gin = disc.backward(dc, g_loss_grad(dc[-1][:, 0])[:, None], need_input_grad=True)
    grads, _ = gen.backward(gc, gin)
    for p, g in zip(gen.params, grads):
        assert rel_err(g, numeric_grad(loss, p)) < 1e-4


def test_sgd_step_reduces_discriminator_loss():
    rng = np.random.default_rng(9)
    disc = small_net([10, 16, 1], seed=10)
    xr, xf = rng.random((32, 10)) + 0.5, rng.random((32, 10))
    opt = SGD(disc.params, 1e-2)

    def loss_and_grads():
        cache = disc.forward(np.concatenate([xr, xf]))
        s = cache[-1][:, 0]
        gr, gf, _ = d_loss_grads(s[:32], s[32:])
        grads, _ = disc.backward(cache, np.concatenate([gr, gf])[:, None])
        return gan_losses(s[:32], s[32:])[0], grads

    before, grads = loss_and_grads()
    for _ in range(5):
        opt.step(grads)
        after, grads = loss_and_grads()
        assert after < before
        before = after


def test_adam_first_step_moves_by_lr():
    p = np.array([1.0, -2.0, 3.0])
    opt = Adam([p], lr=0.1)
    opt.step([np.array([5.0, -0.01, 0.0])])
    np.testing.assert_allclose(p, [0.9, -1.9, 3.0], atol=1e-6)
    assert opt.t == 1


def test_adam_state_round_trip():
    p = np.ones(3)
    opt = Adam([p], lr=0.01)
    for g in ([1, 2, 3], [0.5, -1, 2]):
        opt.step([np.array(g, dtype=float)])
    q = p.copy()
    twin = Adam([q], lr=0.01)
    twin.load_state(opt.state(), opt.t)
    opt.step([np.ones(3)])
    twin.step([np.ones(3)])
    np.testing.assert_array_equal(p, q)


def test_copy_is_deep():
    net = small_net([3, 2])
    twin = net.copy()
    twin.weights[0][0, 0] += 1.0
    assert net.weights[0][0, 0] != twin.weights[0][0, 0]
