"""Numpy neural-network core: GRU/BiGRU, dense, softmax, batch norm, dropout,
cross-entropy, Adam, and finite-difference gradient verification.

All forward functions accept a single vector or a batch-first matrix and
compute in double precision. Backward functions consume the caches returned
by their forward counterparts; gradients accumulate into plain dicts keyed
by parameter name so the optimizer and the checker can walk them uniformly.

Gate equations follow the common formulation with the reset gate applied
inside the candidate's recurrent term:

    z = sigmoid(W_z x + U_z h + b_z)
    r = sigmoid(W_r x + U_r h + b_r)
    hc = tanh(W_h x + U_h (r * h) + b_h)
    h_new = (1 - z) * h + z * hc
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAKY_ALPHA = 0.3
BN_EPS = 1e-5
BN_MOMENTUM = 0.99
CE_CLIP = 1e-12
FD_STEP = 1e-5
FD_TOL = 1e-4


class DimensionError(ValueError):
    """Raised when operand shapes disagree with a layer's parameters."""


def sigmoid(x: np.ndarray) -> np.ndarray:
    # the two-branch form never exponentiates a positive argument
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _as_batch(x: np.ndarray, dim: int, what: str):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise DimensionError(f"{what}: got length {x.shape[0]}, want {dim}")
        return x[None, :], True
    if x.ndim == 2:
        if x.shape[1] != dim:
            raise DimensionError(f"{what}: got width {x.shape[1]}, want {dim}")
        return x, False
    raise DimensionError(f"{what}: rank {x.ndim} unsupported")


@dataclass
class GruParams:
    """One GRU layer's weights: gate matrices over input and recurrent state."""

    W_z: np.ndarray
    W_r: np.ndarray
    W_h: np.ndarray
    U_z: np.ndarray
    U_r: np.ndarray
    U_h: np.ndarray
    b_z: np.ndarray
    b_r: np.ndarray
    b_h: np.ndarray

    @property
    def input_dim(self) -> int:
        return self.W_z.shape[1]

    @property
    def hidden_dim(self) -> int:
        return self.W_z.shape[0]

    def named(self, prefix: str) -> dict:
        return {
            f"{prefix}.{field}": getattr(self, field)
            for field in ("W_z", "W_r", "W_h", "U_z", "U_r", "U_h", "b_z", "b_r", "b_h")
        }


def xavier_uniform(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_gru(rng: np.random.Generator, input_dim: int, hidden_dim: int) -> GruParams:
    """Xavier-uniform gate matrices, zero biases."""

    def w():
        return xavier_uniform(rng, hidden_dim, input_dim)

    def u():
        return xavier_uniform(rng, hidden_dim, hidden_dim)

    return GruParams(
        W_z=w(), W_r=w(), W_h=w(),
        U_z=u(), U_r=u(), U_h=u(),
        b_z=np.zeros(hidden_dim), b_r=np.zeros(hidden_dim), b_h=np.zeros(hidden_dim),
    )


def gru_step(p: GruParams, x_t: np.ndarray, h_prev: np.ndarray):
    """One GRU update; returns (h_new, cache) with shapes following the input."""
    xb, x_single = _as_batch(x_t, p.input_dim, "gru_step input")
    hb, _ = _as_batch(h_prev, p.hidden_dim, "gru_step state")
    if xb.shape[0] != hb.shape[0]:
        raise DimensionError(
            f"gru_step: batch {xb.shape[0]} vs state batch {hb.shape[0]}"
        )
    z = sigmoid(xb @ p.W_z.T + hb @ p.U_z.T + p.b_z)
    r = sigmoid(xb @ p.W_r.T + hb @ p.U_r.T + p.b_r)
    rh = r * hb
    hc = np.tanh(xb @ p.W_h.T + rh @ p.U_h.T + p.b_h)
    h_new = (1.0 - z) * hb + z * hc
    cache = (xb, hb, z, r, rh, hc)
    return (h_new[0] if x_single else h_new), cache


def gru_step_backward(p: GruParams, cache, d_h_new: np.ndarray, grads: dict, prefix: str):
    """Backprop one step; returns (d_x, d_h_prev) and accumulates into grads."""
    xb, hb, z, r, rh, hc = cache
    dh = np.atleast_2d(d_h_new)

    dz = dh * (hc - hb)
    dhc = dh * z
    dh_prev = dh * (1.0 - z)

    da_h = dhc * (1.0 - hc * hc)
    grads[f"{prefix}.W_h"] += da_h.T @ xb
    grads[f"{prefix}.U_h"] += da_h.T @ rh
    grads[f"{prefix}.b_h"] += da_h.sum(axis=0)
    d_rh = da_h @ p.U_h
    dr = d_rh * hb
    dh_prev += d_rh * r

    da_r = dr * r * (1.0 - r)
    grads[f"{prefix}.W_r"] += da_r.T @ xb
    grads[f"{prefix}.U_r"] += da_r.T @ hb
    grads[f"{prefix}.b_r"] += da_r.sum(axis=0)

    da_z = dz * z * (1.0 - z)
    grads[f"{prefix}.W_z"] += da_z.T @ xb
    grads[f"{prefix}.U_z"] += da_z.T @ hb
    grads[f"{prefix}.b_z"] += da_z.sum(axis=0)

    dx = da_z @ p.W_z + da_r @ p.W_r + da_h @ p.W_h
    dh_prev = dh_prev + da_z @ p.U_z + da_r @ p.U_r
    return dx, dh_prev


def gru_forward(p: GruParams, seq: np.ndarray, h0: np.ndarray | None = None):
    """Run a GRU over (T, I) or (B, T, I); returns (states, cache).

    states has shape (T, H) or (B, T, H); the final state is states[..., -1, :].
    """
    seq = np.asarray(seq, dtype=np.float64)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    if seq.ndim != 3 or seq.shape[2] != p.input_dim:
        raise DimensionError(
            f"gru_forward: sequence shape {seq.shape}, want (B, T, {p.input_dim})"
        )
    batch, steps, _ = seq.shape
    if steps < 1:
        raise DimensionError("gru_forward: empty sequence")
    h = np.zeros((batch, p.hidden_dim)) if h0 is None else np.atleast_2d(
        np.asarray(h0, dtype=np.float64)
    ) * np.ones((batch, 1))
    states = np.empty((batch, steps, p.hidden_dim))
    caches = []
    for t in range(steps):
        h, cache = gru_step(p, seq[:, t, :], h)
        states[:, t, :] = h
        caches.append(cache)
    return (states[0] if single else states), caches


def gru_backward(
    p: GruParams,
    caches,
    d_states: np.ndarray,
    grads: dict,
    prefix: str,
):
    """BPTT through gru_forward; d_states matches the states output shape.

    Returns (d_seq, d_h0).
    """
    d_states = np.asarray(d_states, dtype=np.float64)
    single = d_states.ndim == 2
    if single:
        d_states = d_states[None]
    batch, steps, _ = d_states.shape
    d_seq = np.zeros((batch, steps, p.input_dim))
    dh = np.zeros((batch, p.hidden_dim))
    for t in range(steps - 1, -1, -1):
        dh = dh + d_states[:, t, :]
        dx, dh = gru_step_backward(p, caches[t], dh, grads, prefix)
        d_seq[:, t, :] = dx
    return (d_seq[0] if single else d_seq), dh


def bigru_forward(p_fwd: GruParams, p_bwd: GruParams, seq: np.ndarray):
    """Bidirectional GRU; output row t = concat(fwd state t, bwd state t).

    The backward half consumes the reversed sequence; its states are then
    re-aligned so row t describes position t from both directions.
    """
    if (p_fwd.input_dim, p_fwd.hidden_dim) != (p_bwd.input_dim, p_bwd.hidden_dim):
        raise DimensionError("bigru_forward: directions must share dimensions")
    states_f, cache_f = gru_forward(p_fwd, seq)
    seq_arr = np.asarray(seq, dtype=np.float64)
    rev = seq_arr[..., ::-1, :]
    states_b_rev, cache_b = gru_forward(p_bwd, rev)
    states_b = states_b_rev[..., ::-1, :]
    out = np.concatenate([states_f, states_b], axis=-1)
    return out, (cache_f, cache_b)


def bigru_backward(
    p_fwd: GruParams,
    p_bwd: GruParams,
    caches,
    d_out: np.ndarray,
    grads: dict,
    prefix: str,
):
    """Backprop through bigru_forward; returns d_seq."""
    cache_f, cache_b = caches
    hid = p_fwd.hidden_dim
    d_f = d_out[..., :hid]
    d_b = d_out[..., hid:]
    d_seq_f, _ = gru_backward(p_fwd, cache_f, d_f, grads, f"{prefix}.fwd")
    d_seq_b_rev, _ = gru_backward(
        p_bwd, cache_b, np.ascontiguousarray(d_b[..., ::-1, :]), grads, f"{prefix}.bwd"
    )
    return d_seq_f + d_seq_b_rev[..., ::-1, :]


def leaky_relu(v: np.ndarray, alpha: float = LEAKY_ALPHA) -> np.ndarray:
    return np.where(v > 0, v, alpha * v)


def dense_forward(W: np.ndarray, b: np.ndarray, x: np.ndarray, activation: str | None = None):
    """W x + b with optional leaky-relu; returns (out, cache)."""
    xb, single = _as_batch(x, W.shape[1], "dense input")
    pre = xb @ W.T + b
    if activation is None:
        out = pre
    elif activation == "leaky_relu":
        out = leaky_relu(pre)
    else:
        raise ValueError(f"unknown activation {activation!r}")
    cache = (xb, pre, activation)
    return (out[0] if single else out), cache


def dense_backward(W: np.ndarray, cache, d_out: np.ndarray, grads: dict, prefix: str):
    xb, pre, activation = cache
    d = np.atleast_2d(d_out)
    if activation == "leaky_relu":
        d = d * np.where(pre > 0, 1.0, LEAKY_ALPHA)
    grads[f"{prefix}.W"] += d.T @ xb
    grads[f"{prefix}.b"] += d.sum(axis=0)
    return d @ W


def softmax(logits: np.ndarray) -> np.ndarray:
    """Max-subtracted softmax along the last axis."""
    logits = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(logits)):
        raise FloatingPointError("softmax: non-finite logits")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def cross_entropy(probs: np.ndarray, target_index) -> float:
    """-log(probs[target] + clip); batch input takes the mean over rows."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        if not 0 <= int(target_index) < probs.shape[0]:
            raise IndexError(f"target {target_index} out of range {probs.shape[0]}")
        return float(-np.log(probs[int(target_index)] + CE_CLIP))
    targets = np.asarray(target_index, dtype=np.int64)
    if targets.ndim != 1 or targets.shape[0] != probs.shape[0]:
        raise DimensionError("cross_entropy: one target per row required")
    if targets.min() < 0 or targets.max() >= probs.shape[1]:
        raise IndexError("cross_entropy: target out of range")
    picked = probs[np.arange(probs.shape[0]), targets]
    return float(np.mean(-np.log(picked + CE_CLIP)))


def softmax_ce_backward(probs: np.ndarray, targets: np.ndarray, weights=None) -> np.ndarray:
    """Gradient of mean cross-entropy w.r.t. logits: (probs - onehot) / B."""
    probs = np.atleast_2d(probs)
    targets = np.atleast_1d(np.asarray(targets, dtype=np.int64))
    d = probs.copy()
    d[np.arange(probs.shape[0]), targets] -= 1.0
    if weights is not None:
        d *= np.asarray(weights, dtype=np.float64)[:, None]
        denom = float(np.sum(weights))
    else:
        denom = probs.shape[0]
    return d / max(denom, 1.0)


@dataclass
class BatchNormState:
    """Learned scale/shift plus running statistics for inference."""

    gamma: np.ndarray
    beta: np.ndarray
    running_mean: np.ndarray
    running_var: np.ndarray

    @staticmethod
    def create(dim: int) -> "BatchNormState":
        return BatchNormState(
            gamma=np.ones(dim),
            beta=np.zeros(dim),
            running_mean=np.zeros(dim),
            running_var=np.ones(dim),
        )


def batch_norm_forward(x: np.ndarray, bn: BatchNormState, mode: str):
    """Normalize per column; train mode uses batch stats and updates running ones."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"batch_norm: rank {x.ndim}, want 2")
    if mode == "train":
        if x.shape[0] < 2:
            raise DimensionError("batch_norm: train mode needs batch size >= 2")
        mean = x.mean(axis=0)
        var = x.var(axis=0)
        bn.running_mean *= BN_MOMENTUM
        bn.running_mean += (1.0 - BN_MOMENTUM) * mean
        bn.running_var *= BN_MOMENTUM
        bn.running_var += (1.0 - BN_MOMENTUM) * var
    elif mode == "infer":
        mean = bn.running_mean
        var = bn.running_var
    else:
        raise ValueError(f"unknown batch_norm mode {mode!r}")
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (x - mean) * inv_std
    out = bn.gamma * xhat + bn.beta
    cache = (xhat, inv_std, mode)
    return out, cache


def batch_norm_backward(bn: BatchNormState, cache, d_out: np.ndarray, grads: dict, prefix: str):
    xhat, inv_std, mode = cache
    grads[f"{prefix}.gamma"] += (d_out * xhat).sum(axis=0)
    grads[f"{prefix}.beta"] += d_out.sum(axis=0)
    d_xhat = d_out * bn.gamma
    if mode == "infer":
        return d_xhat * inv_std
    batch = xhat.shape[0]
    # standard train-mode expression folding the mean and variance paths
    return (
        inv_std
        / batch
        * (
            batch * d_xhat
            - d_xhat.sum(axis=0)
            - xhat * (d_xhat * xhat).sum(axis=0)
        )
    )


def dropout(x: np.ndarray, rate: float, rng: np.random.Generator | None, mode: str):
    """Inverted dropout; identity (bitwise) in infer mode or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate {rate} outside [0, 1)")
    if mode == "infer" or rate == 0.0:
        return x, None
    if mode != "train":
        raise ValueError(f"unknown dropout mode {mode!r}")
    if rng is None:
        raise ValueError("dropout: train mode needs a generator")
    mask = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return x * mask, mask


def dropout_backward(cache, d_out: np.ndarray) -> np.ndarray:
    if cache is None:
        return d_out
    return d_out * cache


@dataclass
class AdamState:
    """First/second moment accumulators and the shared step counter."""

    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @staticmethod
    def create(params: dict, lr: float = 1e-3) -> "AdamState":
        return AdamState(
            m={k: np.zeros_like(p) for k, p in params.items()},
            v={k: np.zeros_like(p) for k, p in params.items()},
            lr=lr,
        )


def adam_step(state: AdamState, params: dict, grads: dict) -> None:
    """Bias-corrected Adam update, applied to the parameter arrays in place."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1**t
    bc2 = 1.0 - state.beta2**t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionError(f"adam_step: grad shape {g.shape} vs {p.shape} for {name}")
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


def zero_grads(params: dict) -> dict:
    return {k: np.zeros_like(p) for k, p in params.items()}


def gradient_check(
    loss_fn,
    params: dict,
    analytic: dict,
    step: float = FD_STEP,
    tol: float = FD_TOL,
    max_per_tensor: int | None = None,
    rng: np.random.Generator | None = None,
) -> dict:
    """Compare analytic gradients to central finite differences.

    loss_fn() must recompute the scalar loss from the current (mutated)
    parameter values. Returns {name: {"max_rel_err", "checked", "ok"}} plus
    an "_overall" entry; relative error uses max(|a|, |n|, 1e-6) in the
    denominator.
    """
    report = {}
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            gen = rng if rng is not None else np.random.default_rng(0)
            idx = gen.choice(flat.size, size=max_per_tensor, replace=False)
        a_flat = analytic[name].reshape(-1)
        max_err = 0.0
        for i in idx:
            keep = flat[i]
            flat[i] = keep + step
            up = loss_fn()
            flat[i] = keep - step
            down = loss_fn()
            flat[i] = keep
            numeric = (up - down) / (2.0 * step)
            denom = max(abs(a_flat[i]), abs(numeric), 1e-6)
            max_err = max(max_err, abs(a_flat[i] - numeric) / denom)
        report[name] = {
            "max_rel_err": max_err,
            "checked": int(len(idx)),
            "ok": bool(max_err < tol),
        }
        worst = max(worst, max_err)
    report["_overall"] = {"max_rel_err": worst, "ok": bool(worst < tol)}
    return report
