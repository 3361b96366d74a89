"""Batched forward and backward passes for the GRU, LSTM and Transformer predictors.

Inputs are (N, L, F) arrays.  Every encoder maps them to an (N, H) state that
the shared linear head turns into ``[log1p ToS, ping-pong logit]``.
Dropout is inverted dropout driven by an explicit generator; pass ``rng=None``
for inference.
"""

from __future__ import annotations

import numpy as np

from ..errors import DimensionMismatch
from .params import N_HEADS, ModelKind, PredictorParams


def sigmoid(x):
    # split form avoids overflow in exp for large |x|
    out = np.empty_like(x, dtype=float)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def _dropout_mask(shape, p: float, rng) -> np.ndarray | None:
    if rng is None or p <= 0.0:
        return None
    return (rng.random(shape) >= p) / (1.0 - p)


# ------------------------------------------------------------------------ GRU

def _gru_forward(t, X):
    n, steps, _ = X.shape
    h = np.zeros((n, t["U_z"].shape[0]))
    cache = []
    for s in range(steps):
        x = X[:, s]
        z = sigmoid(x @ t["W_z"] + h @ t["U_z"] + t["b_z"])
        r = sigmoid(x @ t["W_r"] + h @ t["U_r"] + t["b_r"])
        hh = np.tanh(x @ t["W_h"] + (r * h) @ t["U_h"] + t["b_h"])
        cache.append((x, h, z, r, hh))
        h = (1.0 - z) * h + z * hh
    return h, cache


def _gru_backward(t, cache, dh, g):
    for x, hp, z, r, hh in reversed(cache):
        dz = dh * (hh - hp)
        dhp = dh * (1.0 - z)
        dah = dh * z * (1.0 - hh * hh)
        rh = r * hp
        g["W_h"] += x.T @ dah
        g["U_h"] += rh.T @ dah
        g["b_h"] += dah.sum(0)
        drh = dah @ t["U_h"].T
        dhp += drh * r
        dar = drh * hp * r * (1.0 - r)
        daz = dz * z * (1.0 - z)
        g["W_r"] += x.T @ dar
        g["U_r"] += hp.T @ dar
        g["b_r"] += dar.sum(0)
        g["W_z"] += x.T @ daz
        g["U_z"] += hp.T @ daz
        g["b_z"] += daz.sum(0)
        dh = dhp + dar @ t["U_r"].T + daz @ t["U_z"].T


# ----------------------------------------------------------------------- LSTM

def _lstm_forward(t, X):
    n, steps, _ = X.shape
    hd = t["U"].shape[0]
    h = np.zeros((n, hd))
    c = np.zeros((n, hd))
    cache = []
    for s in range(steps):
        x = X[:, s]
        a = x @ t["W"] + h @ t["U"] + t["b"]
        i = sigmoid(a[:, :hd])
        f = sigmoid(a[:, hd : 2 * hd])
        gg = np.tanh(a[:, 2 * hd : 3 * hd])
        o = sigmoid(a[:, 3 * hd :])
        c_new = f * c + i * gg
        tc = np.tanh(c_new)
        cache.append((x, h, c, i, f, gg, o, tc))
        h, c = o * tc, c_new
    return h, cache


def _lstm_backward(t, cache, dh, g):
    dc = np.zeros_like(dh)
    for x, hp, cp, i, f, gg, o, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc * tc)
        da = np.concatenate([
            dc * gg * i * (1.0 - i),
            dc * cp * f * (1.0 - f),
            dc * i * (1.0 - gg * gg),
            do * o * (1.0 - o),
        ], axis=1)
        g["W"] += x.T @ da
        g["U"] += hp.T @ da
        g["b"] += da.sum(0)
        dh = da @ t["U"].T
        dc = dc * f


# ---------------------------------------------------------------- Transformer

def _split(x):
    n, steps, hd = x.shape
    return x.reshape(n, steps, N_HEADS, hd // N_HEADS).transpose(0, 2, 1, 3)


def _merge(x):
    n, heads, steps, dk = x.shape
    return x.transpose(0, 2, 1, 3).reshape(n, steps, heads * dk)


def softmax(s, axis=-1):
    e = np.exp(s - s.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def _transformer_forward(t, X, p_drop=0.0, rng=None):
    if X.shape[1] != t["pos"].shape[0]:
        raise DimensionMismatch(f"transformer expects L={t['pos'].shape[0]}, got {X.shape[1]}")
    E = X @ t["W_in"] + t["b_in"] + t["pos"]
    Q, K, V = _split(E @ t["W_q"]), _split(E @ t["W_k"]), _split(E @ t["W_v"])
    dk = Q.shape[-1]
    A = softmax(Q @ K.transpose(0, 1, 3, 2) / np.sqrt(dk))
    C = _merge(A @ V)
    Z = C @ t["W_o"] + t["b_o"]
    mask = _dropout_mask(Z.shape, p_drop, rng)
    Zd = Z if mask is None else Z * mask
    R = E + Zd
    U = np.tanh(R @ t["W_1"] + t["b_1"])
    Y = R + U @ t["W_2"] + t["b_2"]
    pooled = Y.mean(axis=1)
    cache = dict(X=X, E=E, Q=Q, K=K, V=V, A=A, C=C, mask=mask, R=R, U=U, steps=X.shape[1])
    return pooled, cache


def _transformer_backward(t, c, dpooled, g):
    steps = c["steps"]
    dY = np.repeat(dpooled[:, None, :], steps, axis=1) / steps
    g["b_2"] += dY.sum((0, 1))
    g["W_2"] += np.einsum("nli,nlj->ij", c["U"], dY)
    dU = dY @ t["W_2"].T
    da1 = dU * (1.0 - c["U"] ** 2)
    g["W_1"] += np.einsum("nli,nlj->ij", c["R"], da1)
    g["b_1"] += da1.sum((0, 1))
    dR = dY + da1 @ t["W_1"].T
    dZ = dR if c["mask"] is None else dR * c["mask"]
    g["b_o"] += dZ.sum((0, 1))
    g["W_o"] += np.einsum("nli,nlj->ij", c["C"], dZ)
    dC = _split(dZ @ t["W_o"].T)
    A, Q, K, V = c["A"], c["Q"], c["K"], c["V"]
    dA = dC @ V.transpose(0, 1, 3, 2)
    dV = A.transpose(0, 1, 3, 2) @ dC
    dS = A * (dA - (dA * A).sum(-1, keepdims=True)) / np.sqrt(Q.shape[-1])
    dQ = dS @ K
    dK = dS.transpose(0, 1, 3, 2) @ Q
    E = c["E"]
    dQm, dKm, dVm = _merge(dQ), _merge(dK), _merge(dV)
    g["W_q"] += np.einsum("nli,nlj->ij", E, dQm)
    g["W_k"] += np.einsum("nli,nlj->ij", E, dKm)
    g["W_v"] += np.einsum("nli,nlj->ij", E, dVm)
    dE = dR + dQm @ t["W_q"].T + dKm @ t["W_k"].T + dVm @ t["W_v"].T
    g["pos"] += dE.sum(0)
    g["b_in"] += dE.sum((0, 1))
    g["W_in"] += np.einsum("nli,nlj->ij", c["X"], dE)


# -------------------------------------------------------------------- generic

def forward_batch(params: PredictorParams, X: np.ndarray, p_drop: float = 0.0, rng=None):
    """Return (out (N, 2), cache).  ``out[:, 0]`` is log1p-ToS, ``out[:, 1]`` the ping-pong logit."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 3 or X.shape[2] != params.input_dim:
        raise DimensionMismatch(f"expected (N, L, {params.input_dim}) input, got {X.shape}")
    t = params.tensors
    if params.kind is ModelKind.GRU:
        state, enc = _gru_forward(t, X)
    elif params.kind is ModelKind.LSTM:
        state, enc = _lstm_forward(t, X)
    else:
        state, enc = _transformer_forward(t, X, p_drop, rng)
    mask = None
    if params.kind is not ModelKind.TRANSFORMER:
        mask = _dropout_mask(state.shape, p_drop, rng)
    head_in = state if mask is None else state * mask
    out = head_in @ t["head_W"] + t["head_b"]
    return out, (enc, mask, head_in)


def backward_batch(params: PredictorParams, cache, dout: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar loss w.r.t. every tensor, given d loss / d out."""
    t = params.tensors
    enc, mask, head_in = cache
    g = {k: np.zeros_like(v) for k, v in t.items()}
    g["head_W"] += head_in.T @ dout
    g["head_b"] += dout.sum(0)
    dstate = dout @ t["head_W"].T
    if mask is not None:
        dstate = dstate * mask
    if params.kind is ModelKind.GRU:
        _gru_backward(t, enc, dstate, g)
    elif params.kind is ModelKind.LSTM:
        _lstm_backward(t, enc, dstate, g)
    else:
        _transformer_backward(t, enc, dstate, g)
    return g


def encode(params: PredictorParams, X: np.ndarray) -> np.ndarray:
    """Final (RNN) or mean-pooled (Transformer) state without dropout."""
    t = params.tensors
    X = np.asarray(X, dtype=float)
    if params.kind is ModelKind.GRU:
        return _gru_forward(t, X)[0]
    if params.kind is ModelKind.LSTM:
        return _lstm_forward(t, X)[0]
    return _transformer_forward(t, X)[0]


def attention_weights(params: PredictorParams, X: np.ndarray) -> np.ndarray:
    """Softmax attention of the Transformer block, shape (N, heads, L, L)."""
    if params.kind is not ModelKind.TRANSFORMER:
        raise ValueError("attention weights exist only for the Transformer")
    return _transformer_forward(params.tensors, np.asarray(X, dtype=float))[1]["A"]


def gru_hidden_states(params: PredictorParams, X: np.ndarray) -> np.ndarray:
    """Every GRU hidden state, shape (N, L, H)."""
    _, cache = _gru_forward(params.tensors, np.asarray(X, dtype=float))
    _, h_last, z, _, hh = cache[-1]
    states = [c[1] for c in cache[1:]] + [(1 - z) * h_last + z * hh]
    return np.stack(states, axis=1)
