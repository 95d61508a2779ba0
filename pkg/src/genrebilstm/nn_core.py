"""From-scratch recurrent classifier: Bi-LSTM stack, batch norm, dense head.

Everything runs in float64 numpy. Parameters live in a flat ``dict`` of named
arrays so the optimizer, gradient checker and serializer can treat them
uniformly. Gate weights act on the concatenation ``[h_prev; x_t]`` and are
stored per gate (``W_f``, ``W_i``, ``W_o``, ``W_g``, each ``h x (h + d)``).

Both directions of a layer are evaluated together: the backward direction is
fed the time-reversed sequence and the two scans are stacked along a leading
axis, so each time step costs one batched matmul instead of two.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import (
    BadMagic,
    BatchTooSmall,
    DimensionMismatch,
    ShapeChainBroken,
    TruncatedFile,
    VersionMismatch,
)

GATES = ("f", "i", "o", "g")
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
PROB_FLOOR = 1e-12

MODEL_MAGIC = b"BMGC1\n"
MODEL_VERSION = 1


def sigmoid(z):
    # tanh form never overflows
    return 0.5 * np.tanh(0.5 * z) + 0.5


def softmax(logits, axis=-1):
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


# --- single cell (reference path) -------------------------------------------


@dataclass
class LstmCellParams:
    W_f: np.ndarray
    W_i: np.ndarray
    W_o: np.ndarray
    W_g: np.ndarray
    b_f: np.ndarray
    b_i: np.ndarray
    b_o: np.ndarray
    b_g: np.ndarray

    @property
    def hidden(self) -> int:
        return self.W_f.shape[0]

    @property
    def input_dim(self) -> int:
        return self.W_f.shape[1] - self.W_f.shape[0]

    @classmethod
    def zeros(cls, hidden: int, input_dim: int) -> "LstmCellParams":
        w = lambda: np.zeros((hidden, hidden + input_dim))  # noqa: E731
        b = lambda: np.zeros(hidden)  # noqa: E731
        return cls(w(), w(), w(), w(), b(), b(), b(), b())

    @classmethod
    def from_tensors(cls, tensors: dict, prefix: str) -> "LstmCellParams":
        return cls(**{f"{k}_{g}": tensors[f"{prefix}.{k}_{g}"] for k in "Wb" for g in GATES})


def lstm_cell_step(x_t, h_prev, c_prev, p: LstmCellParams):
    """One LSTM step on single vectors; returns ``(h_t, c_t)``."""
    x_t = np.asarray(x_t, dtype=np.float64)
    if not np.all(np.isfinite(x_t)):
        raise ValueError("x_t contains non-finite values")
    if x_t.shape != (p.input_dim,) or np.shape(h_prev) != (p.hidden,) \
            or np.shape(c_prev) != (p.hidden,):
        raise DimensionMismatch(
            f"cell expects x:{p.input_dim}, h/c:{p.hidden}; got {x_t.shape}, "
            f"{np.shape(h_prev)}, {np.shape(c_prev)}")
    hx = np.concatenate([h_prev, x_t])
    f = sigmoid(p.W_f @ hx + p.b_f)
    i = sigmoid(p.W_i @ hx + p.b_i)
    o = sigmoid(p.W_o @ hx + p.b_o)
    g = np.tanh(p.W_g @ hx + p.b_g)
    c_t = f * c_prev + i * g
    return o * np.tanh(c_t), c_t


# --- stacked-direction LSTM layer -------------------------------------------


def _stack_gates(cells: list[LstmCellParams]):
    """Split per-gate weights into input and recurrent parts, stacked by direction.

    Returns ``Wx (D, din, 4h)``, ``Wh (D, h, 4h)``, ``b (D, 4h)``.
    """
    h = cells[0].hidden
    full = np.stack([np.vstack([c.W_f, c.W_i, c.W_o, c.W_g]) for c in cells])  # (D, 4h, h+din)
    Wh = np.ascontiguousarray(full[:, :, :h].transpose(0, 2, 1))
    Wx = np.ascontiguousarray(full[:, :, h:].transpose(0, 2, 1))
    b = np.stack([np.concatenate([c.b_f, c.b_i, c.b_o, c.b_g]) for c in cells])
    return Wx, Wh, b


def _direction_inputs(X, n_dir):
    # direction 1 scans reversed time
    return np.stack([X, X[:, ::-1]][:n_dir])


def lstm_scan(X, cells: list[LstmCellParams]):
    """Run one LSTM per entry of ``cells`` over ``X (B, T, din)``.

    Entry 0 scans forward, entry 1 (if present) scans backward. Returns the
    layer output ``(B, T, D*h)`` with every direction aligned to real time,
    and a cache for :func:`lstm_scan_backward`. Cached arrays are indexed
    ``[step, direction, batch, ...]`` in scan order.
    """
    n_dir = len(cells)
    B, T, din = X.shape
    if din != cells[0].input_dim:
        raise DimensionMismatch(f"layer expects {cells[0].input_dim} inputs, got {din}")
    h = cells[0].hidden
    Wx, Wh, b = _stack_gates(cells)
    Xd = _direction_inputs(X, n_dir)
    acts = np.matmul(Xd, Wx[:, None]) + b[:, None, None, :]  # (D, B, T, 4h)
    acts = np.ascontiguousarray(acts.transpose(2, 0, 1, 3))  # (T, D, B, 4h)
    # sigmoid(z) = (tanh(z/2) + 1) / 2 for the first three gates
    scale = np.full(4 * h, 0.5)
    scale[3 * h:] = 1.0

    C = np.empty((T, n_dir, B, h))
    TC = np.empty((T, n_dir, B, h))
    H = np.empty((T, n_dir, B, h))
    h_t = np.zeros((n_dir, B, h))
    c_t = np.zeros((n_dir, B, h))
    for s in range(T):
        a = acts[s]
        a += np.matmul(h_t, Wh)
        a *= scale
        np.tanh(a, out=a)
        sig = a[..., :3 * h]
        sig *= 0.5
        sig += 0.5
        c_t = a[..., :h] * c_t + a[..., h:2 * h] * a[..., 3 * h:]
        C[s] = c_t
        np.tanh(c_t, out=TC[s])
        h_t = np.multiply(a[..., 2 * h:3 * h], TC[s], out=H[s])

    out = [H[:, 0].transpose(1, 0, 2)]
    if n_dir == 2:
        out.append(H[::-1, 1].transpose(1, 0, 2))
    cache = dict(Xd=Xd, Wx=Wx, Wh=Wh, acts=acts, C=C, TC=TC, H=H)
    return np.concatenate(out, axis=-1), cache


def lstm_scan_backward(dOut, cache):
    """Backpropagation through time for :func:`lstm_scan`.

    Returns ``dX (B, T, din)`` and per-direction gradients as a list of
    :class:`LstmCellParams`.
    """
    Xd, Wx, Wh = cache["Xd"], cache["Wx"], cache["Wh"]
    acts, C, TC, H = cache["acts"], cache["C"], cache["TC"], cache["H"]
    T, n_dir, B, h = H.shape

    dH = [dOut[..., :h].transpose(1, 0, 2)]
    if n_dir == 2:
        dH.append(dOut[:, ::-1, h:2 * h].transpose(1, 0, 2))
    dH = np.stack(dH, axis=1)  # (T, D, B, h)
    dZ = np.empty_like(acts)
    WhT = Wh.transpose(0, 2, 1)
    dh_next = np.zeros((n_dir, B, h))
    dc_next = np.zeros((n_dir, B, h))
    zeros = np.zeros((n_dir, B, h))
    for s in range(T - 1, -1, -1):
        a = acts[s]
        f, i, o, g = a[..., :h], a[..., h:2 * h], a[..., 2 * h:3 * h], a[..., 3 * h:]
        tc = TC[s]
        c_prev = C[s - 1] if s > 0 else zeros
        dh = dH[s] + dh_next
        dc = dc_next + dh * o * (1.0 - tc * tc)
        dz = dZ[s]
        dz[..., :h] = dc * c_prev * f * (1.0 - f)
        dz[..., h:2 * h] = dc * g * i * (1.0 - i)
        dz[..., 2 * h:3 * h] = dh * tc * o * (1.0 - o)
        dz[..., 3 * h:] = dc * i * (1.0 - g * g)
        dc_next = dc * f
        dh_next = np.matmul(dz, WhT)

    H_prev = np.concatenate([np.zeros((1, n_dir, B, h)), H[:-1]], axis=0)
    # reductions over (time, batch) as per-direction matmuls
    dZd = np.ascontiguousarray(dZ.transpose(1, 2, 0, 3)).reshape(n_dir, B * T, 4 * h)
    Hp = np.ascontiguousarray(H_prev.transpose(1, 2, 0, 3)).reshape(n_dir, B * T, h)
    dWh = np.matmul(Hp.transpose(0, 2, 1), dZd)
    dWx = np.matmul(Xd.reshape(n_dir, B * T, -1).transpose(0, 2, 1), dZd)
    db = dZd.sum(axis=1)
    dXd = np.matmul(dZd, Wx.transpose(0, 2, 1)).reshape(n_dir, B, T, -1)
    dX = dXd[0].copy()
    if n_dir == 2:
        dX += dXd[1][:, ::-1]

    grads = []
    for k in range(n_dir):
        full = np.concatenate([dWh[k].T, dWx[k].T], axis=1)  # (4h, h+din)
        parts = {}
        for j, gname in enumerate(GATES):
            parts[f"W_{gname}"] = full[j * h:(j + 1) * h]
            parts[f"b_{gname}"] = db[k, j * h:(j + 1) * h]
        grads.append(LstmCellParams(**parts))
    return dX, grads


def bilstm_layer(seq, fwd: LstmCellParams, bwd: LstmCellParams):
    """``T x d`` sequence -> ``T x 2h`` rows ``[h_fwd_t ; h_bwd_t]``."""
    out, _ = lstm_scan(np.asarray(seq, dtype=np.float64)[None], [fwd, bwd])
    return out[0]


# --- batch norm ---------------------------------------------------------------


def batch_norm(x, gamma, beta, running_mean, running_var, training: bool,
               momentum: float = BN_MOMENTUM, eps: float = BN_EPS):
    """Normalize ``x (N, k)`` per column.

    Returns ``(y, new_running_mean, new_running_var, cache)``. In inference
    mode the running statistics pass through unchanged and ``cache`` is None.
    """
    if not training:
        y = gamma * (x - running_mean) / np.sqrt(running_var + eps) + beta
        return y, running_mean, running_var, None
    if x.shape[0] < 2:
        raise BatchTooSmall(f"batch norm needs >= 2 rows in training mode, got {x.shape[0]}")
    mu = x.mean(axis=0)
    var = x.var(axis=0)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x - mu) * inv_std
    new_mean = momentum * running_mean + (1.0 - momentum) * mu
    new_var = momentum * running_var + (1.0 - momentum) * var
    return gamma * xhat + beta, new_mean, new_var, (xhat, inv_std, gamma)


def batch_norm_backward(dy, cache):
    xhat, inv_std, gamma = cache
    n = dy.shape[0]
    dgamma = (dy * xhat).sum(axis=0)
    dbeta = dy.sum(axis=0)
    dxhat = dy * gamma
    dx = inv_std / n * (n * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0))
    return dx, dgamma, dbeta


# --- model -------------------------------------------------------------------


@dataclass
class ModelSpec:
    input_dim: int = 38
    hidden: int = 64
    n_layers: int = 2
    dense: int = 64
    n_classes: int = 10
    mode: str = "sequence"  # or "frame"
    bidirectional: bool = True

    def __post_init__(self):
        if self.mode not in ("sequence", "frame"):
            raise ValueError(f"mode must be 'sequence' or 'frame', got {self.mode!r}")

    @property
    def n_dir(self) -> int:
        return 2 if self.bidirectional else 1

    @property
    def directions(self) -> tuple:
        return ("fwd", "bwd")[:self.n_dir]

    def layer_input(self, layer: int) -> int:
        return self.input_dim if layer == 0 else self.n_dir * self.hidden

    def shapes(self) -> dict:
        """Expected shape of every named tensor."""
        h, out = self.hidden, self.n_dir * self.hidden
        shapes = {}
        for layer in range(self.n_layers):
            din = self.layer_input(layer)
            for d in self.directions:
                for g in GATES:
                    shapes[f"lstm{layer}.{d}.W_{g}"] = (h, h + din)
                    shapes[f"lstm{layer}.{d}.b_{g}"] = (h,)
            for name in ("gamma", "beta", "running_mean", "running_var"):
                shapes[f"bn{layer}.{name}"] = (out,)
        shapes["dense_hidden.W"] = (out, self.dense)
        shapes["dense_hidden.b"] = (self.dense,)
        shapes["dense_out.W"] = (self.dense, self.n_classes)
        shapes["dense_out.b"] = (self.n_classes,)
        return shapes


@dataclass
class ModelParams:
    spec: ModelSpec
    tensors: dict = field(default_factory=dict)

    def trainable(self) -> list[str]:
        return [k for k in self.tensors if ".running_" not in k]

    def count(self) -> int:
        return sum(self.tensors[k].size for k in self.trainable())

    def copy(self) -> "ModelParams":
        return ModelParams(ModelSpec(**asdict(self.spec)),
                           {k: v.copy() for k, v in self.tensors.items()})

    def cells(self, layer: int) -> list[LstmCellParams]:
        return [LstmCellParams.from_tensors(self.tensors, f"lstm{layer}.{d}")
                for d in self.spec.directions]

    def check(self) -> None:
        expected = self.spec.shapes()
        if set(expected) != set(self.tensors):
            missing = sorted(set(expected) - set(self.tensors))
            extra = sorted(set(self.tensors) - set(expected))
            raise ShapeChainBroken(f"tensor set mismatch; missing={missing} extra={extra}")
        for name, shape in expected.items():
            if self.tensors[name].shape != shape:
                raise ShapeChainBroken(
                    f"{name} has shape {self.tensors[name].shape}, expected {shape}")


def init_params(spec: ModelSpec, rng: np.random.Generator) -> ModelParams:
    """Glorot-uniform weights, forget-gate bias 1, other biases 0, BN identity."""
    tensors = {}
    for name, shape in spec.shapes().items():
        leaf = name.rsplit(".", 1)[1]
        if leaf.startswith("W"):
            fan_in, fan_out = (shape[1], shape[0]) if name.startswith("lstm") else shape
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            tensors[name] = rng.uniform(-limit, limit, size=shape)
        elif leaf == "b_f":
            tensors[name] = np.ones(shape)
        elif leaf in ("gamma", "running_var"):
            tensors[name] = np.ones(shape)
        else:
            tensors[name] = np.zeros(shape)
    return ModelParams(spec, tensors)


@dataclass
class ForwardTrace:
    X: np.ndarray
    training: bool
    lstm: list = field(default_factory=list)
    bn: list = field(default_factory=list)
    head_in: Optional[np.ndarray] = None
    pre_relu: Optional[np.ndarray] = None
    hidden_act: Optional[np.ndarray] = None
    probs: Optional[np.ndarray] = None
    running: dict = field(default_factory=dict)  # updated BN statistics


def model_forward(params: ModelParams, X, training: bool = False):
    """Class probabilities for a batch ``X (B, T, d)``.

    Sequence mode returns ``(B, G)`` from ``[h_fwd_T ; h_bwd_1]`` of the last
    layer; frame mode returns ``(B, T, G)``. In training mode BN uses the
    statistics of all ``B*T`` frames and the refreshed running statistics are
    returned in ``trace.running`` (``params`` is never mutated).
    """
    spec, p = params.spec, params.tensors
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[2] != spec.input_dim:
        raise DimensionMismatch(f"expected (B, T, {spec.input_dim}) input, got {X.shape}")
    B, T, _ = X.shape
    trace = ForwardTrace(X, training)
    out = X
    for layer in range(spec.n_layers):
        out, cache = lstm_scan(out, params.cells(layer))
        trace.lstm.append(cache)
        k = out.shape[-1]
        pre = f"bn{layer}."
        flat, rm, rv, bn_cache = batch_norm(
            out.reshape(B * T, k), p[pre + "gamma"], p[pre + "beta"],
            p[pre + "running_mean"], p[pre + "running_var"], training)
        trace.bn.append(bn_cache)
        if training:
            trace.running[pre + "running_mean"] = rm
            trace.running[pre + "running_var"] = rv
        out = flat.reshape(B, T, k)

    h = spec.hidden
    if spec.mode == "sequence":
        head_in = out[:, -1, :h]
        if spec.bidirectional:
            head_in = np.concatenate([head_in, out[:, 0, h:]], axis=1)
    else:
        head_in = out
    pre_relu = head_in @ p["dense_hidden.W"] + p["dense_hidden.b"]
    act = np.maximum(pre_relu, 0.0)
    probs = softmax(act @ p["dense_out.W"] + p["dense_out.b"])
    trace.head_in, trace.pre_relu, trace.hidden_act, trace.probs = head_in, pre_relu, act, probs
    return probs, trace


def _expand_targets(probs, target):
    target = np.asarray(target, dtype=np.int64)
    n_classes = probs.shape[-1]
    if probs.ndim == 3 and target.ndim == 1:
        target = np.repeat(target[:, None], probs.shape[1], axis=1)
    if target.shape != probs.shape[:-1]:
        raise DimensionMismatch(f"targets {target.shape} do not match probs {probs.shape}")
    if np.any(target < 0) or np.any(target >= n_classes):
        raise ValueError(f"target index out of range [0, {n_classes})")
    return target


def cross_entropy(probs, target) -> float:
    """Mean over the batch of ``-sum_t log p_t[target]``.

    ``probs`` is ``(G,)``, ``(B, G)`` or ``(B, T, G)``; frame-level targets may
    be per frame ``(B, T)`` or per sequence ``(B,)``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs[None]
        target = np.atleast_1d(target)
    target = _expand_targets(probs, target)
    picked = np.take_along_axis(probs, target[..., None], axis=-1)[..., 0]
    nll = -np.log(np.maximum(picked, PROB_FLOOR))
    per_example = nll.reshape(probs.shape[0], -1).sum(axis=1)
    return float(per_example.mean())


def backward(params: ModelParams, trace: ForwardTrace, target) -> dict:
    """Exact gradients of :func:`cross_entropy` w.r.t. every trainable tensor."""
    spec, p = params.spec, params.tensors
    if not trace.training:
        raise ValueError("backward needs a trace recorded in training mode")
    if len(trace.lstm) != spec.n_layers or trace.probs.shape[-1] != spec.n_classes:
        raise ShapeChainBroken("trace does not belong to these parameters")
    B, T, _ = trace.X.shape
    probs = trace.probs
    target = _expand_targets(probs, target)
    dlogits = probs.copy()
    np.put_along_axis(dlogits, target[..., None],
                      np.take_along_axis(dlogits, target[..., None], axis=-1) - 1.0, axis=-1)
    dlogits /= B

    grads = {}
    act2 = trace.hidden_act.reshape(-1, spec.dense)
    dl2 = dlogits.reshape(-1, spec.n_classes)
    grads["dense_out.W"] = act2.T @ dl2
    grads["dense_out.b"] = dl2.sum(axis=0)
    dpre = (dlogits @ p["dense_out.W"].T) * (trace.pre_relu > 0)
    head2 = trace.head_in.reshape(-1, trace.head_in.shape[-1])
    dpre2 = dpre.reshape(-1, spec.dense)
    grads["dense_hidden.W"] = head2.T @ dpre2
    grads["dense_hidden.b"] = dpre2.sum(axis=0)
    dhead = dpre @ p["dense_hidden.W"].T

    h = spec.hidden
    k = spec.n_dir * h
    if spec.mode == "sequence":
        dout = np.zeros((B, T, k))
        dout[:, -1, :h] = dhead[:, :h]
        if spec.bidirectional:
            dout[:, 0, h:] = dhead[:, h:]
    else:
        dout = dhead

    for layer in range(spec.n_layers - 1, -1, -1):
        dflat, dgamma, dbeta = batch_norm_backward(dout.reshape(B * T, k), trace.bn[layer])
        grads[f"bn{layer}.gamma"] = dgamma
        grads[f"bn{layer}.beta"] = dbeta
        dout, cell_grads = lstm_scan_backward(dflat.reshape(B, T, k), trace.lstm[layer])
        for d, cg in zip(spec.directions, cell_grads):
            for name, value in asdict(cg).items():
                grads[f"lstm{layer}.{d}.{name}"] = value
    return grads


def loss_and_grads(params: ModelParams, X, target):
    probs, trace = model_forward(params, X, training=True)
    return cross_entropy(probs, target), backward(params, trace, target), trace


def predict_proba(params: ModelParams, X) -> np.ndarray:
    """Inference-mode probabilities; frame mode is averaged over time."""
    probs, _ = model_forward(params, X, training=False)
    if params.spec.mode == "frame":
        probs = probs.mean(axis=1)
    return probs


# --- optimization -------------------------------------------------------------


def gradient_clip(grads: dict, max_norm: float) -> dict:
    if max_norm <= 0:
        raise ValueError("max_norm must be positive")
    norm = np.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


@dataclass
class AdamState:
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    t: int = 0


def adam_step(tensors: dict, grads: dict, state: AdamState, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    """Bias-corrected Adam, updating ``tensors`` and ``state`` in place."""
    state.t += 1
    c1 = 1.0 - beta1 ** state.t
    c2 = 1.0 - beta2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        tensors[name] -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


def train_step(params: ModelParams, X, target, state: AdamState, lr: float = 1e-3,
               max_norm: Optional[float] = 5.0) -> float:
    """Forward, backward, clip, Adam update and BN running-stat refresh."""
    loss, grads, trace = loss_and_grads(params, X, target)
    if max_norm is not None:
        grads = gradient_clip(grads, max_norm)
    adam_step(params.tensors, grads, state, lr)
    params.tensors.update(trace.running)
    return loss


# --- BMGC1 container ------------------------------------------------------------
# magic | u32 version | u32 meta length | meta JSON | u32 tensor count |
# per tensor: u32 name length, name, u32 rank, u32 dims..., u64 payload offset |
# float32 payloads (row-major, little-endian)


def save_model(path, params: ModelParams, norm_stats=None, config: Optional[dict] = None,
               genres: Optional[list] = None) -> None:
    params.check()
    tensors = dict(params.tensors)
    if norm_stats is not None:
        tensors["norm.mu"] = np.asarray(norm_stats.mu)
        tensors["norm.sigma"] = np.asarray(norm_stats.sigma)
    meta = {
        "architecture": asdict(params.spec),
        "n_classes": params.spec.n_classes,
        "genres": list(genres) if genres is not None else None,
        "mode": params.spec.mode,
        "normalizer": "norm.mu,norm.sigma" if norm_stats is not None else None,
        "config": config or {},
    }
    blob = json.dumps(meta, sort_keys=True).encode("utf-8")
    directory = bytearray(struct.pack("<I", len(tensors)))
    payloads = []
    offset = 0
    for name, arr in tensors.items():
        arr = np.ascontiguousarray(arr, dtype="<f4")
        enc = name.encode("utf-8")
        directory += struct.pack("<I", len(enc)) + enc
        directory += struct.pack("<I", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape)
        directory += struct.pack("<Q", offset)
        payloads.append(arr.tobytes())
        offset += arr.nbytes
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<II", MODEL_VERSION, len(blob)))
        fh.write(blob)
        fh.write(directory)
        for chunk in payloads:
            fh.write(chunk)


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}, file has {len(self.data)}")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def load_model(path):
    """Inverse of :func:`save_model`: ``(params, norm_stats, meta)``."""
    from .features import NormStats

    r = _Reader(Path(path).read_bytes())
    if r.take(len(MODEL_MAGIC)) != MODEL_MAGIC:
        raise BadMagic(f"{path} is not a BMGC1 model file")
    (version,) = r.unpack("<I")
    if version != MODEL_VERSION:
        raise VersionMismatch(f"model version {version}, this build reads {MODEL_VERSION}")
    (mlen,) = r.unpack("<I")
    meta = json.loads(r.take(mlen).decode("utf-8"))
    (count,) = r.unpack("<I")
    entries = []
    for _ in range(count):
        (nlen,) = r.unpack("<I")
        name = r.take(nlen).decode("utf-8")
        (rank,) = r.unpack("<I")
        dims = r.unpack(f"<{rank}I") if rank else ()
        (offset,) = r.unpack("<Q")
        entries.append((name, dims, offset))
    base = r.pos
    tensors = {}
    for name, dims, offset in entries:
        n = int(np.prod(dims)) if dims else 1
        start = base + offset
        if start + 4 * n > len(r.data):
            raise TruncatedFile(f"payload of {name} runs past end of file")
        arr = np.frombuffer(r.data, dtype="<f4", count=n, offset=start)
        tensors[name] = arr.reshape(dims).astype(np.float64)

    norm = None
    if "norm.mu" in tensors:
        norm = NormStats(tensors.pop("norm.mu"), tensors.pop("norm.sigma"))
    params = ModelParams(ModelSpec(**meta["architecture"]), tensors)
    params.check()
    if norm is not None and norm.mu.shape != (params.spec.input_dim,):
        raise ShapeChainBroken("normalizer width does not match model input")
    return params, norm, meta
