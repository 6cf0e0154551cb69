import numpy as np
import pytest

from cgmkit.errors import (CacheMismatchError, DegenerateBatchError,
                           DimensionError)
from cgmkit.nn import BN_EPS, AdamW, Mlp, MlpLayer, mlp_stack
from cgmkit.rng import Rng


def identity_layer(dim, **kw):
    rng = Rng(0)
    layer = MlpLayer(dim, dim, rng, **kw)
    layer.weight[:] = np.eye(dim)
    layer.bias[:] = 0.0
    return layer


def test_identity_linear_layer():
    net = Mlp([identity_layer(3)]).eval()
    x = np.arange(6.0).reshape(2, 3)
    out, _ = net.forward(x)
    assert np.allclose(out, x)


def test_relu_layer():
    net = Mlp([identity_layer(2, activation="relu")]).eval()
    out, _ = net.forward(np.array([[-1.0, 2.0]]))
    assert np.allclose(out, [[0.0, 2.0]])


def test_batch_norm_train_hand_case():
    # column (1, 3): batch mean 2, biased variance 1
    net = Mlp([identity_layer(1, batch_norm=True)]).train()
    out, _ = net.forward(np.array([[1.0], [3.0]]))
    expected = np.array([[-1.0], [1.0]]) / np.sqrt(1.0 + BN_EPS)
    assert np.allclose(out, expected, atol=1e-14)


def test_batch_norm_updates_running_stats():
    net = Mlp([identity_layer(1, batch_norm=True)]).train()
    layer = net.layers[0]
    net.forward(np.array([[1.0], [3.0]]))
    assert np.allclose(layer.running_mean, 0.9 * 0.0 + 0.1 * 2.0)
    assert np.allclose(layer.running_var, 0.9 * 1.0 + 0.1 * 1.0)


def test_batch_norm_degenerate_batch():
    net = Mlp([identity_layer(1, batch_norm=True)]).train()
    with pytest.raises(DegenerateBatchError):
        net.forward(np.array([[1.0]]))


def test_dropout_inverted_scaling():
    rng = Rng(5)
    layer = identity_layer(1000, dropout=0.4)
    net = Mlp([layer]).train()
    x = np.ones((1, 1000))
    out, _ = net.forward(x, rng=rng.derive("drop"))
    kept = out[out > 0]
    assert np.allclose(kept, 1.0 / 0.6)
    assert abs(kept.size / 1000 - 0.6) < 0.06
    out_eval, _ = net.eval().forward(x)
    assert np.allclose(out_eval, 1.0)


def test_linear_backward_closed_form():
    # loss = 0.5 ||W x - y||^2  ->  dW = (W x - y) x^T
    rng = Rng(2)
    layer = MlpLayer(3, 2, rng)
    net = Mlp([layer]).eval()
    x = np.array([[1.0, -2.0, 0.5]])
    y = np.array([[0.3, -0.7]])
    out, cache = net.forward(x)
    grads, _ = net.backward(cache, out - y)
    assert np.allclose(grads[0], (out - y).T @ x)
    assert np.allclose(grads[1], (out - y).ravel())


def test_zero_grad_gives_zero_param_grads():
    rng = Rng(9)
    net = mlp_stack(4, 3, 8, 2, rng, dropout=0.0)
    net.eval()
    out, cache = net.forward(np.ones((3, 4)))
    grads, gin = net.backward(cache, np.zeros_like(out))
    assert all(np.allclose(g, 0.0) for g in grads)
    assert np.allclose(gin, 0.0)


def fd_check(net, x, rng=None, h=1e-6, tol=1e-5, floor=1e-3):
    """Central finite differences of 0.5 * sum(out^2) against backprop.

    The scale floor guards against FD truncation noise on near-zero
    gradient entries."""

    def loss():
        out, _ = net.forward(x, rng=rng)
        return 0.5 * float(np.sum(out ** 2))

    out, cache = net.forward(x, rng=rng)
    grads, gin = net.backward(cache, out)
    params = [p for _, p in net.parameters()]
    for arr, grad in zip(params, grads):
        flat = arr.reshape(-1)
        idx = np.linspace(0, flat.size - 1, min(flat.size, 12)).astype(int)
        for i in np.unique(idx):
            keep = flat[i]
            flat[i] = keep + h
            lp = loss()
            flat[i] = keep - h
            lm = loss()
            flat[i] = keep
            fd = (lp - lm) / (2 * h)
            scale = max(abs(fd), abs(grad.reshape(-1)[i]), floor)
            assert abs(fd - grad.reshape(-1)[i]) / scale < tol, (
                f"param grad mismatch: fd={fd}, bp={grad.reshape(-1)[i]}")
    # input gradient as well
    flat = x.reshape(-1)
    for i in range(0, flat.size, max(1, flat.size // 8)):
        keep = flat[i]
        flat[i] = keep + h
        lp = loss()
        flat[i] = keep - h
        lm = loss()
        flat[i] = keep
        fd = (lp - lm) / (2 * h)
        scale = max(abs(fd), abs(gin.reshape(-1)[i]), floor)
        assert abs(fd - gin.reshape(-1)[i]) / scale < tol


@pytest.mark.parametrize("activation", ["relu", "sigmoid", "identity"])
@pytest.mark.parametrize("batch_norm", [False, True])
def test_gradcheck_eval_mode_layer_combos(activation, batch_norm):
    rng = Rng(7).derive(activation, int(batch_norm))
    layers = [
        MlpLayer(5, 6, rng, activation=activation, batch_norm=batch_norm,
                 dropout=0.0),
        MlpLayer(6, 4, rng, activation=activation, batch_norm=batch_norm,
                 bn_affine=False, dropout=0.0),
        MlpLayer(4, 3, rng),
    ]
    net = Mlp(layers)
    if batch_norm:
        # non-trivial running stats
        net.train().forward(rng.normal((16, 5)) * 2.0 + 0.5)
    net.eval()
    x = rng.normal((4, 5)) + 0.1
    fd_check(net, x)


def test_gradcheck_train_mode_batch_norm():
    rng = Rng(13)
    net = Mlp([
        MlpLayer(4, 6, rng, activation="relu", batch_norm=True, dropout=0.0),
        MlpLayer(6, 2, rng, batch_norm=True, bn_affine=False, dropout=0.0),
    ]).train()
    x = rng.normal((6, 4)) + 0.05
    fd_check(net, x)


def test_stale_cache_rejected():
    rng = Rng(4)
    net = mlp_stack(3, 2, 4, 1, rng, dropout=0.0).eval()
    out, cache = net.forward(np.ones((2, 3)))
    net.note_update()
    with pytest.raises(CacheMismatchError):
        net.backward(cache, out)


def test_dim_mismatch_rejected():
    rng = Rng(4)
    with pytest.raises(DimensionError):
        Mlp([MlpLayer(3, 2, rng), MlpLayer(3, 2, rng)])
    net = Mlp([MlpLayer(3, 2, rng)])
    with pytest.raises(DimensionError):
        net.forward(np.ones((2, 5)))


def test_adamw_first_step_hand_value():
    # t=1, g=1: mhat = vhat = 1, step = -lr / (1 + eps)
    theta = np.array([0.0])
    opt = AdamW([theta], lr=1e-3, weight_decay=0.0)
    opt.step([np.array([1.0])])
    assert abs(theta[0] - (-1e-3 / (1.0 + 1e-8))) < 1e-12


def test_adamw_zero_gradient_no_decay():
    theta = np.array([1.5])
    opt = AdamW([theta], lr=1e-3, weight_decay=0.0)
    opt.step([np.array([0.0])])
    assert theta[0] == 1.5


def test_adamw_decoupled_decay_only():
    theta = np.array([1.0])
    opt = AdamW([theta], lr=1e-3, weight_decay=1e-2)
    opt.step([np.array([0.0])])
    assert abs(theta[0] - 0.99999) < 1e-12


def test_training_trajectory_deterministic():
    def run():
        rng = Rng(21)
        net = mlp_stack(3, 2, 8, 2, rng.derive("init"), dropout=0.1)
        opt = AdamW(net.parameters())
        data_rng = rng.derive("data")
        x = data_rng.normal((16, 3))
        y = data_rng.normal((16, 2))
        for step in range(10):
            out, cache = net.forward(x, rng=rng.derive("drop", step))
            grads, _ = net.backward(cache, (out - y) / len(x))
            opt.step(grads)
            net.note_update()
        return [p.copy() for _, p in net.parameters()]

    a, b = run(), run()
    assert all(np.array_equal(pa, pb) for pa, pb in zip(a, b))
