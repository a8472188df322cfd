import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from pressim.errors import DivergenceDetected, EmptyDataset, FormatError, KindMismatch, \
    ShapeMismatch
from pressim.nn import (GRID, Hyperparams, LossMode, NetworkKind, TrainingSet, build_model,
                        evaluate, grad_check, grad_check_report, load_checkpoint,
                        save_checkpoint, train)
from pressim.nn import losses
from pressim.nn.checkpoint import decode, encode
from pressim.nn.layers import BatchNorm, Conv, Dense, Dropout, UpsampleNearest
from pressim.nn.model import input_shape_for
from pressim.nn.optim import Adam
from pressim.nn.train import _project_fusion


def brute_conv(x, kernel, bias, pad):
    """Loop-based stride-1 cross-correlation, channels-last."""
    nd = kernel.ndim - 2
    xp = np.pad(x, [(0, 0)] + [(p, p) for p in pad] + [(0, 0)])
    out = tuple(xp.shape[1 + i] - kernel.shape[i] + 1 for i in range(nd))
    y = np.zeros((x.shape[0], *out, kernel.shape[-1]))
    for n in range(x.shape[0]):
        for pos in itertools.product(*map(range, out)):
            for off in itertools.product(*map(range, kernel.shape[:nd])):
                src = tuple(p + o for p, o in zip(pos, off))
                y[(n, *pos)] += xp[(n, *src)] @ kernel[off]
    return y + bias


def sample_inputs(kind, rng, n=2, joints=17):
    shape = input_shape_for(kind, joints)
    if isinstance(shape[0], tuple):
        return tuple(rng.random((n, *s)) * 0.1 for s in shape)
    return rng.random((n, *shape)) * 0.5


# -- layers ------------------------------------------------------------------

@pytest.mark.parametrize("cin, cout, kernel, pad", [
    (2, 5, (3, 3), (1, 1)),        # patch path
    (6, 2, (3, 5), (1, 2)),        # shift path (cout < cin)
    (1, 4, (3, 3, 3), (0, 1, 1)),  # temporal volume
    (4, 3, (2, 1, 3), (0, 0, 0)),
])
def test_conv_forward_matches_loops(rng, cin, cout, kernel, pad):
    layer = Conv("c", cin, cout, kernel, rng, pad=pad)
    layer.params["bias"] = rng.normal(size=cout)
    x = rng.normal(size=(2, *([5] * len(kernel)), cin))
    y = layer.forward(x, False, None)
    np.testing.assert_allclose(y, brute_conv(x, layer.params["kernel"], layer.params["bias"], pad),
                               atol=1e-12)


@pytest.mark.parametrize("cin, cout", [(3, 4), (5, 2)])
def test_conv_input_and_kernel_gradients(rng, cin, cout):
    layer = Conv("c", cin, cout, (3, 3), rng)
    x = rng.normal(size=(2, 4, 5, cin))
    dy = rng.normal(size=(2, 4, 5, cout))
    layer.forward(x, True, None)
    dx = layer.backward(dy)
    h = 1e-6
    for idx in [(0, 0, 0, 0), (1, 3, 4, cin - 1), (0, 2, 2, 1)]:
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        num = np.sum((layer.forward(xp, True, None) - layer.forward(xm, True, None)) * dy) / (2 * h)
        assert dx[idx] == pytest.approx(num, rel=1e-6)
    layer.forward(x, True, None)
    layer.backward(dy)
    brute = np.zeros_like(layer.params["kernel"])
    xp = np.pad(x, [(0, 0), (1, 1), (1, 1), (0, 0)])
    for i, j in itertools.product(range(3), range(3)):
        brute[i, j] = np.einsum("nhwc,nhwd->cd", xp[:, i:i + 4, j:j + 5], dy)
    np.testing.assert_allclose(layer.grads["kernel"], brute, atol=1e-10)
    np.testing.assert_allclose(layer.grads["bias"], dy.sum(axis=(0, 1, 2)), atol=1e-10)


def test_conv_collapse_drops_time_axis(rng):
    layer = Conv("c", 3, 2, (8, 1, 3), rng, pad=(0, 0, 0), collapse=True)
    assert layer.output_shape((8, 17, 3, 3)) == (17, 1, 2)
    assert layer.forward(rng.random((2, 8, 17, 3, 3)), False, None).shape == (2, 17, 1, 2)
    with pytest.raises(ValueError):
        layer.output_shape((9, 17, 3, 3))


def test_dense_and_upsample(rng):
    d = Dense("d", 6, 4, rng, out_shape=(2, 2, 1))
    x = rng.normal(size=(3, 6))
    y = d.forward(x, False, None)
    np.testing.assert_allclose(y.reshape(3, 4), x @ d.params["kernel"] + d.params["bias"])
    with pytest.raises(ValueError):
        Dense("d", 6, 4, rng, out_shape=(3, 1))
    up = UpsampleNearest("u", (2, 3))
    x = rng.normal(size=(1, 2, 2, 1))
    y = up.forward(x, False, None)
    assert y.shape == (1, 4, 6, 1)
    assert y[0, 3, 5, 0] == x[0, 1, 1, 0]
    g = up.backward(np.ones_like(y))
    np.testing.assert_array_equal(g, np.full_like(x, 6.0))


def test_batchnorm_training_and_running_stats(rng):
    bn = BatchNorm("bn", 3)
    x = rng.normal(2.0, 3.0, size=(50, 4, 3))
    y = bn.forward(x, True, None).reshape(-1, 3)
    np.testing.assert_allclose(y.mean(axis=0), 0, atol=1e-12)
    var = x.reshape(-1, 3).var(axis=0)
    np.testing.assert_allclose(y.var(axis=0), var / (var + bn.eps), rtol=1e-10)
    # The first update replaces the initial (0, 1) statistics outright.
    np.testing.assert_allclose(bn.buffers["moving_mean"], x.reshape(-1, 3).mean(axis=0))
    np.testing.assert_allclose(bn.buffers["moving_var"], var)
    batches = [rng.normal(size=(20, 3)) for _ in range(5)]
    bn2 = BatchNorm("bn", 3)
    for b in batches:
        bn2.forward(b, True, None)
    np.testing.assert_allclose(bn2.buffers["moving_mean"],
                               np.mean([b.mean(axis=0) for b in batches], axis=0), atol=1e-12)
    assert bn2.updates == 5


def test_batchnorm_becomes_exponential_after_warmup(rng):
    bn = BatchNorm("bn", 1)
    bn.updates = 1000
    before = bn.buffers["moving_mean"].copy()
    x = rng.normal(5.0, 1.0, size=(40, 1))
    bn.forward(x, True, None)
    np.testing.assert_allclose(bn.buffers["moving_mean"], 0.99 * before + 0.01 * x.mean(0))


def test_dropout_expectation_and_inference_identity(rng):
    d = Dropout("d", 0.3)
    x = np.ones((400, 500))
    y = d.forward(x, True, np.random.default_rng(0))
    assert abs(y.mean() - 1.0) < 0.01
    assert abs((y == 0).mean() - 0.3) < 0.01
    np.testing.assert_allclose(np.unique(y), [0.0, 1 / 0.7])
    np.testing.assert_array_equal(d.forward(x, False, np.random.default_rng(0)), x)
    with pytest.raises(ValueError):
        Dropout("d", 1.0)


# -- losses and optimiser ----------------------------------------------------

def test_losses_values_and_gradients(rng):
    p, t = rng.random((3, 80, 28)), rng.random((3, 80, 28))
    value, grad = losses.squared_error_sum(p, t)
    assert value == pytest.approx(sum(np.sum((p[i] - t[i]) ** 2) for i in range(3)) / 3)
    np.testing.assert_allclose(grad, 2 * (p - t) / 3)
    value, grad = losses.mse(p, t)
    assert value == pytest.approx(np.mean((p - t) ** 2))
    assert losses.mae(p, t) == pytest.approx(np.mean(np.abs(p - t)))
    with pytest.raises(ShapeMismatch):
        losses.mse(p, t[:, :, :27])


def test_fused_loss_gradients(rng):
    p, q, t = (rng.random((2, 6, 5)) for _ in range(3))
    a, b = 0.7, 1.3
    value, dp, dq, da, db = losses.fused_abs_sum(p, q, t, a, b)
    brute = sum(np.sum((a * np.abs(p[i] - t[i]) + b * np.abs(q[i] - t[i])) ** 2)
                for i in range(2)) / 2
    assert value == pytest.approx(brute)
    h = 1e-7
    f = lambda *args: losses.fused_abs_sum(*args)[0]
    assert da == pytest.approx((f(p, q, t, a + h, b) - f(p, q, t, a - h, b)) / (2 * h), rel=1e-6)
    assert db == pytest.approx((f(p, q, t, a, b + h) - f(p, q, t, a, b - h)) / (2 * h), rel=1e-6)
    pp = p.copy()
    pp[1, 2, 3] += h
    pm = p.copy()
    pm[1, 2, 3] -= h
    assert dp[1, 2, 3] == pytest.approx((f(pp, q, t, a, b) - f(pm, q, t, a, b)) / (2 * h),
                                        rel=1e-5)


def test_adam_matches_hand_computation():
    p = {"w": np.array([1.0, -2.0])}
    opt = Adam(lr=0.1)
    g = np.array([0.5, -0.25])
    opt.step(p, {"w": g})
    # Step 1 with bias correction moves each coordinate by lr * sign(g).
    np.testing.assert_allclose(p["w"], [0.9, -1.9], atol=1e-6)
    opt.step(p, {"w": g})
    np.testing.assert_allclose(p["w"], [0.8, -1.8], atol=1e-6)
    assert opt.t == 2


@given(st.floats(-10, 10), st.floats(-10, 10))
def test_fusion_projection_lands_on_simplex(a, b):
    w = _project_fusion(np.array([a, b]))
    assert w.min() >= 0 and w.sum() == pytest.approx(2.0)
    if a - b == pytest.approx(0):
        np.testing.assert_allclose(w, [1, 1])


# -- models ------------------------------------------------------------------

EXPECTED_LAYERS = {NetworkKind.TPN: 12, NetworkKind.TDN: 11, NetworkKind.PSN: 9,
                   NetworkKind.BASELINE: 16}
NON_TRAINABLE = {NetworkKind.TPN: 96, NetworkKind.TDN: 192, NetworkKind.PSN: 96,
                 NetworkKind.BASELINE: 96}
PAPER_TRAINABLE_PLUS_STATS = {NetworkKind.TPN: 15_361, NetworkKind.TDN: 40_563,
                              NetworkKind.PSN: 23_873}


@pytest.mark.parametrize("kind", list(NetworkKind))
def test_model_shapes_and_counts(rng, kind):
    net = build_model(kind, seed=1)
    assert len(net.layers) == EXPECTED_LAYERS[kind]
    assert net.non_trainable_count == NON_TRAINABLE[kind]
    y = net(sample_inputs(kind, rng, 3))
    assert y.shape == (3, *GRID) and y.dtype == np.float32
    if kind in PAPER_TRAINABLE_PLUS_STATS:
        total = net.trainable_count + net.non_trainable_count
        ratio = total / PAPER_TRAINABLE_PLUS_STATS[kind]
        assert 1 / 3 <= ratio <= 3


def test_body25_pose_networks(rng):
    for kind in (NetworkKind.TPN, NetworkKind.BASELINE):
        net = build_model(kind, joints=25)
        assert net(sample_inputs(kind, rng, 2, joints=25)).shape == (2, *GRID)
    with pytest.raises(ValueError):
        build_model("tpn", joints=18)


def test_build_is_deterministic_and_seeded():
    a, b, c = build_model("tdn", seed=4), build_model("tdn", seed=4), build_model("tdn", seed=5)
    for k, v in a.parameters().items():
        np.testing.assert_array_equal(v, b.parameters()[k])
    assert any(not np.array_equal(v, c.parameters()[k]) for k, v in a.parameters().items())


def test_relu_heads_are_nonnegative(rng):
    for kind in (NetworkKind.PSN, NetworkKind.BASELINE):
        assert build_model(kind)(sample_inputs(kind, rng, 4)).min() >= 0


def test_wrong_input_shape(rng):
    net = build_model("tpn")
    with pytest.raises(ShapeMismatch):
        net(rng.random((2, 10, 25, 3)))
    with pytest.raises(ShapeMismatch):
        build_model("psn")(rng.random((2, 80, 28)))


@pytest.mark.parametrize("kind", list(NetworkKind))
def test_gradients_match_central_differences(rng, kind):
    net = build_model(kind, seed=2, dtype=np.float64)
    report = grad_check_report(net, sample_inputs(kind, rng), rng.random((2, *GRID)) * 0.1,
                               per_kind=30, seed=3)
    assert set(report) >= {"dense", "conv3d", "batchnorm"} & set(report)
    assert max(report.values()) < 1e-3, report
    assert all(n >= 5 for n in report.probes.values())


def test_grad_check_tolerance_raises(rng):
    net = build_model("psn", dtype=np.float64)
    x = sample_inputs(NetworkKind.PSN, rng)
    net.layers[-2].params["kernel"] += 0  # untouched network passes
    assert grad_check(net, x, rng.random((2, *GRID)), per_kind=5) < 1e-3
    with pytest.raises(AssertionError):
        grad_check(net, x, rng.random((2, *GRID)), tolerance=-1.0, per_kind=5)


def test_input_gradient_of_psn(rng):
    net = build_model("psn", seed=6, dtype=np.float64)
    x = sample_inputs(NetworkKind.PSN, rng)
    t = rng.random((2, *GRID)) * 0.1
    _, dy = losses.squared_error_sum(net.forward(x, training=True, dropout=False), t)
    dx = net.backward(dy, input_grad=True)
    h = 1e-6
    for which, idx in [(0, (0, 40, 14)), (1, (1, 10, 3))]:
        xs = [a.copy() for a in x]
        xs[which][idx] += h
        up = losses.squared_error_sum(net.forward(tuple(xs), training=True, dropout=False), t)[0]
        xs[which][idx] -= 2 * h
        down = losses.squared_error_sum(net.forward(tuple(xs), training=True, dropout=False), t)[0]
        assert dx[which][idx] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-9)


# -- training ----------------------------------------------------------------

def _tiny_set(rng, kind, n=12):
    return TrainingSet(sample_inputs(kind, rng, n), rng.random((n, *GRID)) * 0.05)


def test_training_reduces_loss_and_is_deterministic(rng):
    data = _tiny_set(rng, NetworkKind.PSN)
    hyper = Hyperparams(learning_rate=1e-3, batch_size=4, epochs=6, seed=1)
    a, ha = train(build_model("psn", seed=0), data, hyper, validation=data)
    b, hb = train(build_model("psn", seed=0), data, hyper, validation=data)
    assert ha.train_loss[-1] < ha.train_loss[0]
    assert ha.to_csv() == hb.to_csv()
    assert encode(a) == encode(b)
    assert a.epoch == 6 and len(ha) == 6


def test_resume_is_bit_identical(rng, tmp_path):
    data = _tiny_set(rng, NetworkKind.TPN)
    full = Hyperparams(learning_rate=1e-3, batch_size=5, epochs=4, seed=2)
    ref, _ = train(build_model("tpn", seed=3), data, full)
    half, _ = train(build_model("tpn", seed=3), data, Hyperparams(**{**full.__dict__, "epochs": 2}))
    save_checkpoint(half, tmp_path / "tpn.ckpt")
    resumed, hist = train(load_checkpoint(tmp_path / "tpn.ckpt", "tpn"), data, full)
    assert hist.epoch == [3, 4]
    assert encode(resumed) == encode(ref)


def test_target_mse_stops_early(rng):
    data = _tiny_set(rng, NetworkKind.PSN)
    _, hist = train(build_model("psn"), data, Hyperparams(epochs=50, target_mse=1.0))
    assert len(hist) == 1 and hist.train_eval_mse[0] < 1.0


def test_eq4_literal_mode_keeps_fusion_on_simplex(rng):
    data = _tiny_set(rng, NetworkKind.PSN)
    data = TrainingSet(data.inputs, data.targets, aux=rng.random(data.targets.shape) * 0.05)
    net, hist = train(build_model("psn"), data,
                      Hyperparams(learning_rate=1e-2, batch_size=4, epochs=3,
                                  loss_mode=LossMode.EQ4_LITERAL, fusion_weights=(1.5, 1.5)))
    assert net.fusion.min() >= 0 and float(net.fusion.sum()) == pytest.approx(2.0, abs=1e-6)
    with pytest.raises(ValueError):
        train(build_model("psn"), _tiny_set(rng, NetworkKind.PSN),
              Hyperparams(loss_mode="eq4_literal", epochs=1))


def test_divergence_and_empty_data(rng):
    data = _tiny_set(rng, NetworkKind.PSN)
    data.targets[0, 0, 0] = np.nan
    with pytest.raises(DivergenceDetected):
        train(build_model("psn"), data, Hyperparams(epochs=1))
    empty = TrainingSet(tuple(a[:0] for a in data.inputs), data.targets[:0])
    with pytest.raises(EmptyDataset):
        train(build_model("psn"), empty, Hyperparams(epochs=1))
    with pytest.raises(EmptyDataset):
        evaluate(build_model("psn"), empty)


@pytest.mark.parametrize("kw", [{"learning_rate": -1}, {"batch_size": 0}, {"epochs": -1},
                                {"learning_rate": float("inf")}, {"loss_mode": "l1"}])
def test_bad_hyperparams(kw):
    with pytest.raises(ValueError):
        Hyperparams(**kw)


# -- checkpoints -------------------------------------------------------------

@pytest.mark.parametrize("kind", list(NetworkKind))
def test_checkpoint_round_trip(rng, tmp_path, kind):
    net = build_model(kind, seed=123_456_789_012)
    train(net, _tiny_set(rng, kind, 4), Hyperparams(epochs=1, batch_size=4))
    path = tmp_path / "m.ckpt"
    save_checkpoint(net, path)
    back = load_checkpoint(path)
    assert back.kind is kind and back.rng_seed == net.rng_seed and back.epoch == 1
    for k, v in net.parameters().items():
        np.testing.assert_array_equal(back.parameters()[k], v)
    for k, v in net.buffers().items():
        np.testing.assert_array_equal(back.buffers()[k], v)
    assert encode(back) == path.read_bytes()
    x = sample_inputs(kind, rng, 2)
    np.testing.assert_array_equal(back.predict(x), net.predict(x))


def test_checkpoint_errors(tmp_path):
    data = encode(build_model("psn"))
    with pytest.raises(FormatError):
        decode(b"XXXX" + data[4:])
    with pytest.raises(FormatError):
        decode(data[:-3])
    with pytest.raises(FormatError):
        decode(data + b"\0")
    (tmp_path / "p.ckpt").write_bytes(data)
    with pytest.raises(KindMismatch):
        load_checkpoint(tmp_path / "p.ckpt", "tdn")
