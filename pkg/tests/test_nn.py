import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hopplan import nn
from hopplan.lstm_planner import PlannerNet, TrainingSequence, make_batch


def _sq_loss(out, target):
    d = out - target
    return 0.5 * float(np.sum(d * d)), d


# -- forward -------------------------------------------------------------


def test_identity_dense_passes_input_through():
    p = nn.Params()
    d = nn.Dense(p, "d", 4, 4)
    p["d.W"][...] = np.eye(4)
    x = np.arange(8.0).reshape(2, 4)
    np.testing.assert_array_equal(d.forward(x)[0], x)


def test_dense_shape_mismatch_raises():
    d = nn.Dense(nn.Params(), "d", 3, 2)
    with pytest.raises(ValueError):
        d.forward(np.zeros((1, 4)))


def test_delta_kernel_conv_copies_channel():
    p = nn.Params()
    c = nn.Conv1d(p, "c", 2, 1, 7)
    p["c.W"][...] = 0.0
    p["c.W"][0, 1, 3] = 1.0
    x = np.random.default_rng(0).normal(size=(3, 2, 110))
    y, _ = c.forward(x)
    assert y.shape == (3, 1, 110)
    np.testing.assert_allclose(y[:, 0], x[:, 1])


def test_conv_rejects_even_kernel_and_bad_channels():
    with pytest.raises(ValueError):
        nn.Conv1d(nn.Params(), "c", 1, 1, 6)
    c = nn.Conv1d(nn.Params(), "c", 2, 1, 7)
    with pytest.raises(ValueError):
        c.forward(np.zeros((1, 3, 10)))


def test_conv_matches_direct_correlation():
    p = nn.Params()
    c = nn.Conv1d(p, "c", 2, 3, 5, rng=np.random.default_rng(4))
    x = np.random.default_rng(5).normal(size=(2, 2, 12))
    y, _ = c.forward(x)
    xp = np.pad(x, ((0, 0), (0, 0), (2, 2)))
    W, b = p["c.W"], p["c.b"]
    ref = np.zeros_like(y)
    for n in range(2):
        for o in range(3):
            for i in range(12):
                ref[n, o, i] = np.sum(W[o] * xp[n, :, i : i + 5]) + b[o]
    np.testing.assert_allclose(y, ref, atol=1e-12)


def test_zero_weight_lstm_stays_at_zero():
    p = nn.Params()
    lstm = nn.LSTMStack(p, "l", 3, 5, 2)
    for k in p:
        p[k][...] = 0.0
    state = lstm.zero_state(2)
    for _ in range(3):
        h, state, _ = lstm.step(np.ones((2, 3)), state)
    np.testing.assert_array_equal(h, 0.0)
    for hh, cc in state:
        np.testing.assert_array_equal(cc, 0.0)


def test_lstm_init_conventions():
    p = nn.Params()
    nn.LSTMStack(p, "l", 4, 6, 2, rng=np.random.default_rng(0))
    for k in range(2):
        W, b = p[f"l.{k}.W"], p[f"l.{k}.b"]
        assert W.shape == ((4 if k == 0 else 6) + 6, 24)
        assert np.abs(W).max() <= 1 / math.sqrt(6)
        np.testing.assert_array_equal(b[6:12], 1.0)
        np.testing.assert_array_equal(np.delete(b, np.s_[6:12]), 0.0)


# -- softmax / cross-entropy ---------------------------------------------


def test_uniform_logits_give_log_n():
    loss, g = nn.softmax_ce(np.zeros(110), 17)
    assert loss == pytest.approx(4.7005, abs=1e-4)
    assert loss == pytest.approx(math.log(110))
    assert g.sum() == pytest.approx(0.0, abs=1e-12)


def test_saturated_logits_give_zero_loss():
    z = np.zeros(110)
    z[3] = 50.0
    loss, _ = nn.softmax_ce(z, 3)
    assert loss < 1e-15


def test_softmax_ce_gradient_is_softmax_minus_onehot():
    z = np.random.default_rng(0).normal(size=7)
    _, g = nn.softmax_ce(z, 2)
    ref = nn.softmax(z)
    ref[2] -= 1.0
    np.testing.assert_allclose(g, ref)


def test_softmax_ce_errors():
    with pytest.raises(IndexError):
        nn.softmax_ce(np.zeros(5), 5)
    with pytest.raises(IndexError):
        nn.softmax_ce(np.zeros(5), -1)
    with pytest.raises(ValueError):
        nn.softmax_ce(np.array([0.0, np.inf]), 0)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-500, 500), min_size=2, max_size=40))
def test_softmax_is_a_distribution(xs):
    p = nn.softmax(np.array(xs))
    assert p.sum() == pytest.approx(1.0, abs=1e-9)
    assert np.all(p >= 0) and np.all(p <= 1)


def test_softmax_is_stable_for_large_logits():
    p = nn.softmax(np.array([1000.0, 1000.0]))
    np.testing.assert_allclose(p, [0.5, 0.5])


# -- gradients -----------------------------------------------------------


def test_perfect_fit_has_zero_gradients():
    mlp = nn.MLP([3, 1], rng=np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(4, 3))
    out, tape = mlp.forward(x)
    _, dy = nn.mse(out, out.copy())
    grads, _ = mlp.backward(tape, dy)
    for g in grads.values():
        np.testing.assert_array_equal(g, 0.0)


def test_dense_mlp_gradcheck():
    mlp = nn.MLP([3, 5, 4, 2], rng=np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(6, 3))
    y = np.random.default_rng(2).normal(size=(6, 2))

    def lg():
        out, tape = mlp.forward(x)
        loss, dy = _sq_loss(out, y)
        return loss, mlp.backward(tape, dy)[0]

    assert nn.grad_check(mlp.params, lg, eps=1e-5) <= 1e-6


def test_conv_gradcheck_including_input():
    p = nn.Params()
    c = nn.Conv1d(p, "c", 2, 3, 7, rng=np.random.default_rng(3))
    x = np.random.default_rng(4).normal(size=(2, 2, 11))
    t = np.random.default_rng(5).normal(size=(2, 3, 11))
    p["x"] = x  # treat the input as a parameter to check dx

    def lg():
        y, cache = c.forward(p["x"])
        loss, dy = _sq_loss(y, t)
        g = {k: np.zeros_like(v) for k, v in p.items()}
        g["x"] = c.backward(dy, cache, g)
        return loss, g

    assert nn.grad_check(p, lg) <= 1e-4


def test_lstm_bptt_gradcheck_and_cross_time_influence():
    p = nn.Params()
    lstm = nn.LSTMStack(p, "l", 3, 4, 2, rng=np.random.default_rng(6))
    p["x1"] = np.random.default_rng(7).normal(size=(2, 3))
    p["x2"] = np.random.default_rng(8).normal(size=(2, 3))
    target = np.random.default_rng(9).normal(size=(2, 4))

    def lg():
        s = lstm.zero_state(2)
        _, s, c1 = lstm.step(p["x1"], s)
        h2, s, c2 = lstm.step(p["x2"], s)
        loss, dh = _sq_loss(h2, target)  # loss only at t = 2
        g = {k: np.zeros_like(v) for k, v in p.items()}
        zero = [(np.zeros((2, 4)), np.zeros((2, 4))) for _ in range(2)]
        g["x2"], ds = lstm.step_backward(dh, zero, c2, g)
        g["x1"], _ = lstm.step_backward(np.zeros((2, 4)), ds, c1, g)
        return loss, g

    _, g = lg()
    assert np.abs(g["x1"]).max() > 1e-6
    assert nn.grad_check(p, lg) <= 1e-4


def _tiny_batch(n_cells, rng):
    seqs = []
    for _ in range(3):
        T = int(rng.integers(2, 4))
        cells = sorted(rng.choice(n_cells, size=T + 1, replace=False).tolist())
        seqs.append(TrainingSequence(rng.uniform(-1, 0.2, n_cells).tolist(), (0.85, 1.0), cells))
    return make_batch(seqs, n_cells)


def test_planner_net_gradcheck_reduced_width():
    rng = np.random.default_rng(10)
    net = PlannerNet(n_cells=30, hidden=16, channels=(3, 2), enc_dim=12, rng=11)
    batch = _tiny_batch(30, rng)
    assert nn.grad_check(net.params, lambda: net.loss_and_grads(batch), max_per_tensor=25) <= 1e-4


def test_planner_net_gradcheck_full_cells_two_steps():
    rng = np.random.default_rng(12)
    net = PlannerNet(n_cells=110, hidden=6, channels=(2, 2), enc_dim=6, rng=13)
    seqs = [TrainingSequence(rng.uniform(-1, 0.2, 110).tolist(), (0.9, 1.2), [30, 34, 39])]
    batch = make_batch(seqs, 110)
    assert nn.grad_check(net.params, lambda: net.loss_and_grads(batch), max_per_tensor=15) <= 1e-4


def test_stale_tape_is_rejected():
    mlp = nn.MLP([2, 3, 1])
    out, tape = mlp.forward(np.ones((1, 2)))
    nn.adam_step(mlp.params, {k: np.ones_like(v) for k, v in mlp.params.items()}, nn.AdamState())
    with pytest.raises(nn.StaleTapeError):
        mlp.backward(tape, np.ones_like(out))


def test_grad_check_rejects_zero_eps():
    mlp = nn.MLP([2, 1])
    with pytest.raises(ValueError):
        nn.grad_check(mlp.params, lambda: (0.0, mlp.params.zeros_like()), eps=0.0)


def test_backward_is_deterministic():
    mlp = nn.MLP([3, 4, 1], rng=np.random.default_rng(0))
    x = np.random.default_rng(1).normal(size=(5, 3))
    runs = []
    for _ in range(2):
        out, tape = mlp.forward(x)
        runs.append(mlp.backward(tape, np.ones_like(out))[0])
    for k in runs[0]:
        np.testing.assert_array_equal(runs[0][k], runs[1][k])


# -- Adam ----------------------------------------------------------------


def test_adam_zero_grad_keeps_params():
    p = nn.Params(w=np.array([1.0, -2.0]))
    nn.adam_step(p, {"w": np.zeros(2)}, nn.AdamState(lr=0.1))
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_minimises_quadratic():
    p = nn.Params(x=np.array([5.0]))
    st_ = nn.AdamState(lr=0.1)
    for _ in range(200):
        nn.adam_step(p, {"x": 2.0 * (p["x"] - 1.5)}, st_)
    assert abs(p["x"][0] - 1.5) < 1e-2


def test_adam_first_step_moves_by_lr():
    # bias correction makes the first update lr * sign(g), up to eps
    p = nn.Params(w=np.array([0.0, 0.0]))
    nn.adam_step(p, {"w": np.array([3.0, -0.01])}, nn.AdamState(lr=0.05))
    np.testing.assert_allclose(p["w"], [-0.05, 0.05], rtol=0, atol=1e-6)


def test_adam_is_deterministic_and_checks_shapes():
    outs = []
    for _ in range(2):
        p = nn.Params(w=np.ones(3))
        s = nn.AdamState()
        for i in range(5):
            nn.adam_step(p, {"w": np.array([0.1, -0.2, 0.3]) * i}, s)
        outs.append(p["w"].copy())
    np.testing.assert_array_equal(*outs)
    with pytest.raises(ValueError):
        nn.adam_step(nn.Params(w=np.ones(3)), {"w": np.ones(2)}, nn.AdamState())


def test_clip_grads_rescales_to_max_norm():
    g = {"a": np.array([3.0]), "b": np.array([4.0])}
    assert nn.clip_grads(g, 1.0) == pytest.approx(5.0)
    assert math.hypot(g["a"][0], g["b"][0]) == pytest.approx(1.0)


# -- weight files --------------------------------------------------------


def test_weight_file_roundtrip(tmp_path):
    import json

    params = {"a": np.arange(6.0).reshape(2, 3), "b": np.array([0.1])}
    path = tmp_path / "w.json"
    nn.save_weights(path, params, {"model": "x"})
    doc = json.loads(path.read_text())
    assert doc["format"] == 1
    assert doc["tensors"]["a"] == {"shape": [2, 3], "data": [0.0, 1.0, 2.0, 3.0, 4.0, 5.0]}
    back, meta = nn.load_weights(path)
    assert meta == {"model": "x"}
    np.testing.assert_array_equal(back["a"], params["a"])


def test_weight_file_rejects_unknown_format(tmp_path):
    path = tmp_path / "w.json"
    path.write_text('{"format": 99, "tensors": {}}')
    with pytest.raises(ValueError):
        nn.load_weights(path)
