"""Layer primitives: forward values, gradients, and optimizer behaviour."""

import numpy as np
import pytest

from eventcap.nn import (
    AdamState,
    BatchNormState,
    DimensionError,
    GruParams,
    adam_step,
    batch_norm_backward,
    batch_norm_forward,
    bigru_backward,
    bigru_forward,
    cross_entropy,
    dense_backward,
    dense_forward,
    dropout,
    dropout_backward,
    gradient_check,
    gru_forward,
    gru_backward,
    gru_step,
    init_gru,
    sigmoid,
    softmax,
    softmax_ce_backward,
    xavier_uniform,
    zero_grads,
)

from oracles import adam_1d_oracle, gru_step_oracle, softmax_oracle


def unit_gru(**overrides):
    """1-in 1-out GRU with all weights zero unless overridden."""
    fields = dict(
        W_z=np.zeros((1, 1)), W_r=np.zeros((1, 1)), W_h=np.zeros((1, 1)),
        U_z=np.zeros((1, 1)), U_r=np.zeros((1, 1)), U_h=np.zeros((1, 1)),
        b_z=np.zeros(1), b_r=np.zeros(1), b_h=np.zeros(1),
    )
    for key, val in overrides.items():
        fields[key] = np.asarray(val, dtype=np.float64).reshape(fields[key].shape)
    return GruParams(**fields)


def test_gru_hand_example():
    # all-zero gates give z = r = 1/2; W_h = 1 drives the candidate to tanh(1)
    p = unit_gru(W_h=[[1.0]])
    h, _ = gru_step(p, np.array([1.0]), np.array([0.0]))
    assert h.shape == (1,)
    assert abs(h[0] - 0.5 * np.tanh(1.0)) < 1e-12
    assert abs(h[0] - 0.38080) < 1e-4


def test_update_gate_weights_the_candidate():
    # saturating z toward 1 must hand the state to the candidate, not keep h_prev
    p = unit_gru(W_z=[[50.0]], W_h=[[1.0]])
    h_prev = np.array([-0.9])
    h, _ = gru_step(p, np.array([1.0]), h_prev)
    r = sigmoid(np.array([0.0]))[0]
    cand = np.tanh(1.0 + 0.0 * (r * h_prev[0]))
    assert abs(h[0] - cand) < 1e-6
    assert abs(h[0] - h_prev[0]) > 1.0


def test_reset_gate_gates_previous_state_inside_candidate():
    # with r forced to 0 the candidate ignores h_prev entirely
    p = unit_gru(W_r=[[-50.0]], U_h=[[5.0]], W_h=[[1.0]])
    h, _ = gru_step(p, np.array([1.0]), np.array([0.8]))
    # z = sigmoid(0) = 1/2, candidate = tanh(1) with the recurrent term cut
    expect = 0.5 * 0.8 + 0.5 * np.tanh(1.0)
    assert abs(h[0] - expect) < 1e-6


@pytest.mark.parametrize("inp,hid", [(1, 1), (3, 2), (4, 5)])
def test_gru_step_matches_scalar_oracle(inp, hid):
    rng = np.random.default_rng(inp * 10 + hid)
    p = init_gru(rng, inp, hid)
    x = rng.normal(size=inp)
    h0 = rng.normal(size=hid)
    ours, _ = gru_step(p, x, h0)
    listed = {
        name: getattr(p, name).tolist()
        for name in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")
    }
    ref = gru_step_oracle(listed, x.tolist(), h0.tolist())
    np.testing.assert_allclose(ours, ref, rtol=1e-12, atol=1e-12)


def test_gru_step_batch_matches_per_row():
    rng = np.random.default_rng(7)
    p = init_gru(rng, 3, 4)
    xs = rng.normal(size=(5, 3))
    hs = rng.normal(size=(5, 4))
    batched, _ = gru_step(p, xs, hs)
    for row in range(5):
        single, _ = gru_step(p, xs[row], hs[row])
        np.testing.assert_allclose(batched[row], single, atol=1e-12)


def test_gru_step_shape_errors():
    p = init_gru(np.random.default_rng(0), 3, 2)
    with pytest.raises(DimensionError):
        gru_step(p, np.zeros(4), np.zeros(2))
    with pytest.raises(DimensionError):
        gru_step(p, np.zeros(3), np.zeros(5))
    with pytest.raises(DimensionError):
        gru_step(p, np.zeros((2, 3)), np.zeros((3, 2)))


def test_gru_forward_unrolls_steps():
    rng = np.random.default_rng(1)
    p = init_gru(rng, 2, 3)
    seq = rng.normal(size=(4, 2))
    states, _ = gru_forward(p, seq)
    assert states.shape == (4, 3)
    h = np.zeros(3)
    for t in range(4):
        h, _ = gru_step(p, seq[t], h)
        np.testing.assert_allclose(states[t], h, atol=1e-12)
    with pytest.raises(DimensionError):
        gru_forward(p, np.zeros((0, 2)))


def test_bigru_realignment():
    rng = np.random.default_rng(2)
    pf = init_gru(rng, 2, 3)
    pb = init_gru(rng, 2, 3)
    seq = rng.normal(size=(5, 2))
    out, _ = bigru_forward(pf, pb, seq)
    assert out.shape == (5, 6)
    fwd, _ = gru_forward(pf, seq)
    bwd_rev, _ = gru_forward(pb, seq[::-1])
    for t in range(5):
        np.testing.assert_allclose(out[t, :3], fwd[t], atol=1e-12)
        np.testing.assert_allclose(out[t, 3:], bwd_rev[4 - t], atol=1e-12)


def test_bigru_rejects_mismatched_directions():
    rng = np.random.default_rng(3)
    with pytest.raises(DimensionError):
        bigru_forward(init_gru(rng, 2, 3), init_gru(rng, 2, 4), np.zeros((2, 2)))


# ---- gradient checks per layer ----------------------------------------------------


def check_ok(report):
    assert report["_overall"]["ok"], {
        k: v for k, v in report.items() if k != "_overall" and not v["ok"]
    }


def test_dense_gradients():
    rng = np.random.default_rng(10)
    for activation in (None, "leaky_relu"):
        W = rng.normal(size=(4, 3))
        b = rng.normal(size=4)
        x = rng.normal(size=(5, 3))
        tgt = rng.normal(size=(5, 4))
        params = {"d.W": W, "d.b": b, "x": x}

        def loss():
            out, _ = dense_forward(W, b, x, activation)
            return float(np.sum(out * tgt))

        grads = zero_grads(params)
        out, cache = dense_forward(W, b, x, activation)
        dx = dense_backward(W, cache, tgt, grads, "d")
        grads["x"] += dx
        check_ok(gradient_check(loss, params, grads))


def test_softmax_ce_fused_gradient():
    rng = np.random.default_rng(11)
    logits = rng.normal(size=(4, 6))
    targets = np.array([0, 5, 2, 2])
    params = {"logits": logits}

    def loss():
        return cross_entropy(softmax(logits), targets)

    probs = softmax(logits)
    grads = {"logits": softmax_ce_backward(probs, targets)}
    check_ok(gradient_check(loss, params, grads))


def test_softmax_ce_backward_weighted():
    rng = np.random.default_rng(12)
    probs = softmax(rng.normal(size=(3, 4)))
    targets = np.array([1, 0, 3])
    w = np.array([1.0, 0.0, 2.0])
    d = softmax_ce_backward(probs, targets, weights=w)
    np.testing.assert_allclose(d[1], np.zeros(4), atol=1e-15)
    onehot = np.zeros((3, 4))
    onehot[np.arange(3), targets] = 1.0
    np.testing.assert_allclose(d, (probs - onehot) * w[:, None] / 3.0, atol=1e-12)


def test_gru_sequence_gradients():
    rng = np.random.default_rng(13)
    p = init_gru(rng, 3, 4)
    seq = rng.normal(size=(2, 5, 3))
    tgt = rng.normal(size=(2, 5, 4))
    params = dict(p.named("g"))
    params["seq"] = seq

    def loss():
        states, _ = gru_forward(p, seq)
        return float(np.sum(states * tgt))

    grads = zero_grads(params)
    states, caches = gru_forward(p, seq)
    d_seq, _ = gru_backward(p, caches, tgt, grads, "g")
    grads["seq"] += d_seq
    check_ok(gradient_check(loss, params, grads))


def test_bigru_gradients():
    rng = np.random.default_rng(14)
    pf = init_gru(rng, 2, 3)
    pb = init_gru(rng, 2, 3)
    seq = rng.normal(size=(4, 2))
    tgt = rng.normal(size=(4, 6))
    params = {**pf.named("b.fwd"), **pb.named("b.bwd"), "seq": seq}

    def loss():
        out, _ = bigru_forward(pf, pb, seq)
        return float(np.sum(out * tgt))

    grads = zero_grads(params)
    out, caches = bigru_forward(pf, pb, seq)
    d_seq = bigru_backward(pf, pb, caches, tgt, grads, "b")
    grads["seq"] += d_seq
    check_ok(gradient_check(loss, params, grads))


def test_batch_norm_train_gradients():
    rng = np.random.default_rng(15)
    bn = BatchNormState.create(3)
    bn.gamma[:] = rng.normal(size=3)
    bn.beta[:] = rng.normal(size=3)
    x = rng.normal(size=(6, 3))
    tgt = rng.normal(size=(6, 3))
    params = {"bn.gamma": bn.gamma, "bn.beta": bn.beta, "x": x}

    def loss():
        out, _ = batch_norm_forward(x, bn, "train")
        return float(np.sum(out * tgt))

    grads = zero_grads(params)
    out, cache = batch_norm_forward(x, bn, "train")
    dx = batch_norm_backward(bn, cache, tgt, grads, "bn")
    grads["x"] += dx
    check_ok(gradient_check(loss, params, grads))


def test_dropout_gradients_with_replayed_mask():
    rng = np.random.default_rng(16)
    x = rng.normal(size=(4, 5))
    tgt = rng.normal(size=(4, 5))
    params = {"x": x}

    def loss():
        out, _ = dropout(x, 0.4, np.random.default_rng(99), "train")
        return float(np.sum(out * tgt))

    out, mask = dropout(x, 0.4, np.random.default_rng(99), "train")
    grads = {"x": dropout_backward(mask, tgt)}
    check_ok(gradient_check(loss, params, grads))


def test_gradient_check_flags_corrupted_gradient():
    rng = np.random.default_rng(17)
    W = rng.normal(size=(2, 3))
    x = rng.normal(size=3)
    params = {"W": W}

    def loss():
        return float(np.sum(W @ x))

    good = {"W": np.tile(x, (2, 1))}
    assert gradient_check(loss, params, good)["_overall"]["ok"]
    bad = {"W": np.tile(x, (2, 1)) + 0.5}
    report = gradient_check(loss, params, bad)
    assert not report["_overall"]["ok"]
    assert not report["W"]["ok"]


def test_gradient_check_subsampling_restores_values():
    rng = np.random.default_rng(18)
    W = rng.normal(size=(8, 8))
    before = W.copy()
    params = {"W": W}
    analytic = {"W": np.ones_like(W)}

    def loss():
        return float(np.sum(W))

    report = gradient_check(loss, params, analytic, max_per_tensor=5, rng=rng)
    assert report["W"]["checked"] == 5
    assert report["_overall"]["ok"]
    np.testing.assert_array_equal(W, before)


# ---- batch norm specifics ---------------------------------------------------------


def test_batch_norm_normalizes_columns():
    rng = np.random.default_rng(20)
    x = rng.normal(loc=3.0, scale=2.0, size=(50, 4))
    bn = BatchNormState.create(4)
    out, _ = batch_norm_forward(x, bn, "train")
    np.testing.assert_allclose(out.mean(axis=0), np.zeros(4), atol=1e-10)
    np.testing.assert_allclose(out.var(axis=0), np.ones(4), atol=1e-3)


def test_batch_norm_scale_and_shift():
    x = np.array([[1.0, 0.0], [3.0, 2.0]])
    bn = BatchNormState.create(2)
    bn.gamma[:] = [2.0, 0.5]
    bn.beta[:] = [1.0, -1.0]
    out, _ = batch_norm_forward(x, bn, "train")
    plain = BatchNormState.create(2)
    ref, _ = batch_norm_forward(x, plain, "train")
    np.testing.assert_allclose(out, ref * [2.0, 0.5] + [1.0, -1.0], atol=1e-12)


def test_batch_norm_running_statistics_update():
    x = np.array([[0.0, 10.0], [2.0, 14.0]])
    bn = BatchNormState.create(2)
    batch_norm_forward(x, bn, "train")
    np.testing.assert_allclose(bn.running_mean, 0.99 * 0.0 + 0.01 * np.array([1.0, 12.0]))
    np.testing.assert_allclose(bn.running_var, 0.99 * 1.0 + 0.01 * np.array([1.0, 4.0]))
    # a second pass compounds with the same momentum
    batch_norm_forward(x, bn, "train")
    np.testing.assert_allclose(
        bn.running_mean, 0.99 * (0.01 * np.array([1.0, 12.0])) + 0.01 * np.array([1.0, 12.0])
    )


def test_batch_norm_infer_does_not_touch_running_stats():
    bn = BatchNormState.create(2)
    bn.running_mean[:] = [1.0, -1.0]
    bn.running_var[:] = [4.0, 0.25]
    x = np.array([[1.0, -1.0], [3.0, 0.0]])
    out, _ = batch_norm_forward(x, bn, "infer")
    expect = (x - [1.0, -1.0]) / np.sqrt(np.array([4.0, 0.25]) + 1e-5)
    np.testing.assert_allclose(out, expect, atol=1e-10)
    np.testing.assert_array_equal(bn.running_mean, [1.0, -1.0])
    np.testing.assert_array_equal(bn.running_var, [4.0, 0.25])


def test_batch_norm_train_needs_two_rows():
    bn = BatchNormState.create(3)
    with pytest.raises(DimensionError):
        batch_norm_forward(np.ones((1, 3)), bn, "train")
    out, _ = batch_norm_forward(np.ones((1, 3)), bn, "infer")
    assert out.shape == (1, 3)


def test_batch_norm_constant_column_is_safe():
    bn = BatchNormState.create(2)
    bn.beta[:] = [5.0, -5.0]
    x = np.full((4, 2), 3.0)
    out, _ = batch_norm_forward(x, bn, "train")
    np.testing.assert_allclose(out, np.tile([5.0, -5.0], (4, 1)), atol=1e-6)


def test_batch_norm_rejects_bad_rank_and_mode():
    bn = BatchNormState.create(2)
    with pytest.raises(DimensionError):
        batch_norm_forward(np.zeros(2), bn, "train")
    with pytest.raises(ValueError):
        batch_norm_forward(np.zeros((2, 2)), bn, "test")


# ---- dropout ------------------------------------------------------------------------


def test_dropout_identity_paths_are_bitwise():
    x = np.random.default_rng(0).normal(size=(3, 4))
    out, cache = dropout(x, 0.5, None, "infer")
    assert out is x and cache is None
    out, cache = dropout(x, 0.0, None, "train")
    assert out is x and cache is None


def test_dropout_mask_values_and_scaling():
    x = np.ones((200, 50))
    out, mask = dropout(x, 0.25, np.random.default_rng(1), "train")
    vals = np.unique(np.round(mask, 12))
    np.testing.assert_allclose(vals, [0.0, 1.0 / 0.75])
    # inverted scaling keeps the expectation near 1
    assert abs(out.mean() - 1.0) < 0.02


def test_dropout_validation():
    x = np.ones((2, 2))
    with pytest.raises(ValueError):
        dropout(x, 1.0, np.random.default_rng(0), "train")
    with pytest.raises(ValueError):
        dropout(x, -0.1, np.random.default_rng(0), "train")
    with pytest.raises(ValueError):
        dropout(x, 0.5, None, "train")
    with pytest.raises(ValueError):
        dropout(x, 0.5, np.random.default_rng(0), "eval")


def test_dropout_backward_applies_same_mask():
    x = np.random.default_rng(2).normal(size=(3, 3))
    out, mask = dropout(x, 0.5, np.random.default_rng(3), "train")
    d = np.ones_like(x)
    np.testing.assert_array_equal(dropout_backward(mask, d), mask)
    np.testing.assert_array_equal(dropout_backward(None, d), d)


# ---- losses and softmax -------------------------------------------------------------


def test_softmax_matches_oracle_and_sums_to_one():
    rng = np.random.default_rng(30)
    logits = rng.normal(size=(6, 9))
    probs = softmax(logits)
    np.testing.assert_allclose(probs.sum(axis=1), np.ones(6), atol=1e-12)
    for row in range(6):
        np.testing.assert_allclose(probs[row], softmax_oracle(logits[row].tolist()), atol=1e-12)


def test_softmax_extreme_logits_stable():
    probs = softmax(np.array([1000.0, 0.0, -1000.0]))
    assert np.all(np.isfinite(probs))
    assert abs(probs[0] - 1.0) < 1e-12
    with pytest.raises(FloatingPointError):
        softmax(np.array([np.nan, 0.0]))


def test_cross_entropy_clip_prevents_infinity():
    probs = np.array([1.0, 0.0])
    val = cross_entropy(probs, 1)
    assert np.isfinite(val)
    assert abs(val - (-np.log(1e-12))) < 1e-9


def test_cross_entropy_batch_mean_and_range_checks():
    probs = np.array([[0.5, 0.5], [0.9, 0.1]])
    want = (-np.log(0.5 + 1e-12) - np.log(0.1 + 1e-12)) / 2.0
    assert abs(cross_entropy(probs, np.array([0, 1])) - want) < 1e-12
    with pytest.raises(IndexError):
        cross_entropy(np.array([0.5, 0.5]), 2)
    with pytest.raises(IndexError):
        cross_entropy(probs, np.array([0, 2]))
    with pytest.raises(DimensionError):
        cross_entropy(probs, np.array([0]))


# ---- optimizer ----------------------------------------------------------------------


def test_adam_first_step_magnitude_is_lr():
    # bias correction cancels on step one, so |update| = lr * |g| / (|g| + eps)
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState.create(p, lr=0.1)
    adam_step(state, p, {"w": np.array([3.0, -0.5])})
    np.testing.assert_allclose(p["w"], [1.0 - 0.1, -2.0 + 0.1], atol=1e-8)


def test_adam_quadratic_matches_scalar_oracle():
    x = np.array([2.5])
    params = {"x": x}
    state = AdamState.create(params, lr=0.05)
    for _ in range(3):
        adam_step(state, params, {"x": 2.0 * x})
    ref = adam_1d_oracle(2.5, lambda v: 2.0 * v, lr=0.05, steps=3)
    assert abs(x[0] - ref[-1]) < 1e-10


def test_adam_updates_in_place():
    w = np.ones(3)
    params = {"w": w}
    state = AdamState.create(params, lr=0.01)
    adam_step(state, params, {"w": np.ones(3)})
    assert params["w"] is w
    assert not np.allclose(w, np.ones(3))
    with pytest.raises(DimensionError):
        adam_step(state, params, {"w": np.ones(4)})


def test_adam_step_counter_is_shared():
    params = {"a": np.zeros(1), "b": np.zeros(1)}
    state = AdamState.create(params)
    adam_step(state, params, {"a": np.ones(1), "b": np.ones(1)})
    adam_step(state, params, {"a": np.ones(1), "b": np.ones(1)})
    assert state.step == 2


# ---- initializers -------------------------------------------------------------------


def test_xavier_bounds_and_spread():
    rng = np.random.default_rng(40)
    W = xavier_uniform(rng, 30, 50)
    bound = np.sqrt(6.0 / 80.0)
    assert W.shape == (30, 50)
    assert np.all(np.abs(W) <= bound)
    assert np.abs(W.mean()) < 0.02
    assert W.max() > 0.8 * bound and W.min() < -0.8 * bound


def test_sigmoid_stable_and_symmetric():
    assert sigmoid(np.array([0.0]))[0] == 0.5
    big = sigmoid(np.array([800.0, -800.0]))
    np.testing.assert_allclose(big, [1.0, 0.0], atol=1e-12)
    xs = np.linspace(-5, 5, 11)
    np.testing.assert_allclose(sigmoid(xs) + sigmoid(-xs), np.ones(11), atol=1e-12)
