"""The coded-SDF network: a plain MLP (ReLU hidden layers, tanh output)
with clamped-L1 training under Adam, implemented from scratch.

All linear algebra runs through strict-IEEE numba kernels that accumulate
each output element sequentially over the contraction index. Each batch row
is an independent arithmetic chain, so batched evaluation is bitwise equal
to per-point evaluation no matter how callers batch or chunk queries, and
training is bit-deterministic for a fixed seed.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .binio import Packer, Unpacker, read_framed, write_framed
from .errors import FormatError, NumericError

CHECKPOINT_MAGIC = b"NCNN"
CHECKPOINT_VERSION = 1

_EVAL_CHUNK = 8192  # bounds activation memory; has no effect on results


# ---------------------------------------------------------------------------
# Kernels. Layout: activations are (batch, dim) rows; weights are (out, in).


@njit(cache=True, nogil=True)
def _affine(a, wt, bias, out):
    # out[n, j] = bias[j] + sum_k a[n, k] * wt[k, j], k strictly ascending
    n, din = a.shape
    dout = wt.shape[1]
    for i in range(n):
        for j in range(dout):
            out[i, j] = bias[j]
        for k in range(din):
            s = a[i, k]
            for j in range(dout):
                out[i, j] += s * wt[k, j]


@njit(cache=True, nogil=True)
def _relu_inplace(x):
    n, d = x.shape
    for i in range(n):
        for j in range(d):
            if x[i, j] < 0.0:
                x[i, j] = 0.0


@njit(cache=True, nogil=True)
def _tanh_inplace(x):
    n, d = x.shape
    for i in range(n):
        for j in range(d):
            x[i, j] = math.tanh(x[i, j])


@njit(cache=True, nogil=True)
def _back_data(dy, w, out):
    # out[n, k] = sum_i dy[n, i] * w[i, k], i strictly ascending
    n, dout = dy.shape
    din = w.shape[1]
    for i in range(n):
        for k in range(din):
            out[i, k] = 0.0
        for j in range(dout):
            s = dy[i, j]
            for k in range(din):
                out[i, k] += s * w[j, k]


@njit(cache=True, nogil=True)
def _relu_mask(dy, post):
    n, d = dy.shape
    for i in range(n):
        for j in range(d):
            if post[i, j] <= 0.0:
                dy[i, j] = 0.0


@njit(cache=True, nogil=True)
def _back_params(dy, a, dw, db):
    # dw[i, k] = sum_n dy[n, i] * a[n, k]; db[i] = sum_n dy[n, i]
    n, dout = dy.shape
    din = a.shape[1]
    for i in range(dout):
        db[i] = 0.0
        for k in range(din):
            dw[i, k] = 0.0
    for nn in range(n):
        for i in range(dout):
            s = dy[nn, i]
            db[i] += s
            for k in range(din):
                dw[i, k] += s * a[nn, k]


# ---------------------------------------------------------------------------
# Model


@dataclass
class Mlp:
    """Weights are (out, in) matrices; hidden activations ReLU, output tanh.
    Input rows are (q, z) with q first; output is a single distance."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def dtype(self):
        return self.weights[0].dtype

    @property
    def layer_dims(self) -> list[int]:
        return [self.weights[0].shape[1]] + [w.shape[0] for w in self.weights]

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def code_dim(self) -> int:
        return self.input_dim - 3

    def num_params(self) -> int:
        return sum(w.size for w in self.weights) + sum(b.size for b in self.biases)

    def astype(self, dtype) -> "Mlp":
        return Mlp([w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases])


# The clamped loss has zero gradient wherever |prediction| >= delta, so the
# output layer must start small enough that predictions open inside the
# active band; at plain Xavier scale the tanh saturates past delta=0.1 for
# essentially every input and training never moves.
_OUTPUT_INIT_SCALE = 0.1


def mlp_init(input_dim: int, hidden: int = 128, layers: int = 8, seed: int = 0,
             dtype=np.float32) -> Mlp:
    """He-scaled normal weights for the ReLU layers, damped Xavier-uniform
    for the tanh output layer, zero biases; deterministic for a fixed seed."""
    if input_dim < 1 or hidden < 1 or layers < 1:
        raise ValueError("dims must be >= 1")
    dims = [input_dim] + [hidden] * layers + [1]
    rng = np.random.Generator(np.random.PCG64(seed))
    weights, biases = [], []
    for l in range(len(dims) - 1):
        fan_in, fan_out = dims[l], dims[l + 1]
        if l < len(dims) - 2:
            w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        else:
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            w = rng.uniform(-limit, limit, size=(fan_out, fan_in)) * _OUTPUT_INIT_SCALE
        weights.append(w.astype(dtype))
        biases.append(np.zeros(fan_out, dtype))
    return Mlp(weights, biases)


def _as_rows(net: Mlp, batch: np.ndarray) -> np.ndarray:
    """Eq-style column batch (3+m, N) -> contiguous rows (N, 3+m)."""
    batch = np.asarray(batch)
    if batch.ndim != 2 or batch.shape[0] != net.input_dim:
        raise ValueError(f"batch must be ({net.input_dim}, N), got {batch.shape}")
    return np.ascontiguousarray(batch.T, dtype=net.dtype)


def _forward_rows(net: Mlp, rows: np.ndarray, keep: bool):
    """Forward over row-layout inputs; returns (outputs (N,), activations)."""
    acts = [rows]
    a = rows
    n = len(rows)
    last = len(net.weights) - 1
    for l, (w, b) in enumerate(zip(net.weights, net.biases)):
        out = np.empty((n, w.shape[0]), net.dtype)
        _affine(a, np.ascontiguousarray(w.T), b, out)
        if l < last:
            _relu_inplace(out)
        else:
            _tanh_inplace(out)
        if keep:
            acts.append(out)
        a = out
    return a[:, 0].copy(), acts if keep else None


def forward_batch(net: Mlp, batch: np.ndarray) -> np.ndarray:
    """Evaluate a column batch (one (q; z) column per query point).

    Each column's output is bitwise identical to evaluating that column
    alone: every row is an independent accumulation chain in the kernels.
    """
    rows = _as_rows(net, batch)
    if rows.shape[0] == 0:
        return np.empty(0, net.dtype)
    return _forward_rows(net, rows, keep=False)[0]


def forward_point(net: Mlp, q: np.ndarray, z: np.ndarray) -> float:
    col = np.concatenate([np.asarray(q, np.float64), np.asarray(z, np.float64)])
    return float(forward_batch(net, col[:, None])[0])


def clamped_l1_loss(pred: np.ndarray, target: np.ndarray, delta: float) -> float:
    """Mean |clamp(pred, +-delta) - clamp(target, +-delta)|."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    pred = np.asarray(pred)
    target = np.asarray(target)
    if pred.shape != target.shape:
        raise ValueError("pred and target must have equal lengths")
    cp = np.clip(pred, -delta, delta)
    ct = np.clip(target, -delta, delta)
    return float(np.mean(np.abs(cp - ct), dtype=np.float64))


def _loss_grad(pred: np.ndarray, target: np.ndarray, delta) -> np.ndarray:
    """d(mean clamped L1)/d(pred); zero where pred sits on or past a clamp
    bound (subgradient-0 convention at the kinks)."""
    cp = np.clip(pred, -delta, delta)
    ct = np.clip(target, -delta, delta)
    g = np.sign(cp - ct) * (np.abs(pred) < delta)
    return (g / len(pred)).astype(pred.dtype)


def _backward_rows(net: Mlp, acts: list[np.ndarray], dy_out: np.ndarray):
    """Backprop from d(loss)/d(output) through the tanh and ReLU stack.
    Returns (weight grads, bias grads, d(loss)/d(input rows))."""
    y = acts[-1]
    delta = (dy_out[:, None] * (1.0 - y * y)).astype(net.dtype)
    dws = [np.empty_like(w) for w in net.weights]
    dbs = [np.empty_like(b) for b in net.biases]
    for l in range(len(net.weights) - 1, -1, -1):
        _back_params(delta, acts[l], dws[l], dbs[l])
        prev = np.empty((len(delta), net.weights[l].shape[1]), net.dtype)
        _back_data(delta, net.weights[l], prev)
        if l > 0:
            _relu_mask(prev, acts[l])
        delta = prev
    return dws, dbs, delta


def backward_params(net: Mlp, batch: np.ndarray, targets: np.ndarray, delta: float):
    """Gradients of the mean clamped-L1 loss w.r.t. all weights and biases."""
    rows = _as_rows(net, batch)
    targets = np.asarray(targets, net.dtype)
    pred, acts = _forward_rows(net, rows, keep=True)
    g = _loss_grad(pred, targets, net.dtype.type(delta))
    dws, dbs, _ = _backward_rows(net, acts, g)
    return dws, dbs


def input_gradient_batch(net: Mlp, batch: np.ndarray) -> np.ndarray:
    """d(output)/d(q) per column, (N, 3); exact reverse-mode, row-chunked
    internally without affecting per-row results."""
    rows = _as_rows(net, batch)
    out = np.empty((len(rows), 3), net.dtype)
    for s in range(0, max(len(rows), 1), _EVAL_CHUNK):
        part = rows[s : s + _EVAL_CHUNK]
        if len(part) == 0:
            break
        _, acts = _forward_rows(net, np.ascontiguousarray(part), keep=True)
        ones = np.ones(len(part), net.dtype)
        _, _, din = _backward_rows(net, acts, ones)
        out[s : s + len(part)] = din[:, :3]
    return out


def input_gradient(net: Mlp, q: np.ndarray, z: np.ndarray) -> np.ndarray:
    """d(distance)/d(query point) for a single (q, z) input."""
    col = np.concatenate([np.asarray(q, np.float64), np.asarray(z, np.float64)])
    return input_gradient_batch(net, col[:, None])[0]


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    learning_rate: float = 1e-4
    clamp_delta: float = 0.1
    epochs: int = 200
    batch_size: int = 1024
    seed: int = 0
    val_fraction: float = 0.1

    def __post_init__(self):
        if self.learning_rate <= 0 or self.clamp_delta <= 0:
            raise ValueError("learning_rate and clamp_delta must be positive")
        if not 0.0 <= self.val_fraction < 1.0:
            raise ValueError("val_fraction must lie in [0, 1)")


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])

    def update(self, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> None:
        self.step += 1
        c1 = 1.0 - self.beta1 ** self.step
        c2 = 1.0 - self.beta2 ** self.step
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            p -= (lr / c1) * m / (np.sqrt(v / c2) + self.eps)


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)


def train(dataset, config: TrainConfig, net: Mlp | None = None,
          log_every: int = 0) -> tuple[Mlp, TrainHistory]:
    """Minibatch Adam on the clamped-L1 loss.

    ``dataset`` is either a Dataset or an (inputs, targets) pair of arrays:
    sample rows (N, 3+m) in normalized units and normalized signed distances
    (N,). If no net is given, the default architecture (8 hidden layers of
    128) is created for the input width. Deterministic for fixed seed: fixed
    shuffle and reduction orders.
    """
    if hasattr(dataset, "model_inputs"):
        inputs, targets = dataset.model_inputs(), dataset.distances
    else:
        inputs, targets = dataset
    inputs = np.asarray(inputs)
    targets = np.asarray(targets)
    if inputs.ndim != 2 or len(inputs) != len(targets) or len(inputs) == 0:
        raise ValueError("need matching, non-empty inputs and targets")
    if net is None:
        net = mlp_init(inputs.shape[1], seed=config.seed)
    if net.input_dim != inputs.shape[1]:
        raise ValueError(f"net expects {net.input_dim} input dims, data has {inputs.shape[1]}")
    inputs = np.ascontiguousarray(inputs, net.dtype)
    targets = np.ascontiguousarray(targets, net.dtype)

    ss = np.random.SeedSequence(config.seed)
    split_rng, shuffle_rng = (np.random.Generator(np.random.PCG64(s)) for s in ss.spawn(2))
    perm = split_rng.permutation(len(inputs))
    n_val = int(len(inputs) * config.val_fraction)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    if len(train_idx) == 0:
        raise ValueError("validation split leaves no training samples")

    params = net.weights + net.biases
    adam = AdamState.for_params(params)
    history = TrainHistory()
    delta = net.dtype.type(config.clamp_delta)

    for epoch in range(config.epochs):
        order = train_idx[shuffle_rng.permutation(len(train_idx))]
        total = 0.0
        for start in range(0, len(order), config.batch_size):
            idx = order[start : start + config.batch_size]
            rows = np.ascontiguousarray(inputs[idx])
            tgt = targets[idx]
            pred, acts = _forward_rows(net, rows, keep=True)
            loss = clamped_l1_loss(pred, tgt, config.clamp_delta)
            if not np.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch {start // config.batch_size}"
                )
            g = _loss_grad(pred, tgt, delta)
            dws, dbs, _ = _backward_rows(net, acts, g)
            adam.update(params, dws + dbs, config.learning_rate)
            total += loss * len(idx)
        history.train_loss.append(total / len(order))

        if n_val:
            val_pred = _forward_rows(net, np.ascontiguousarray(inputs[val_idx]), keep=False)[0]
            history.val_loss.append(clamped_l1_loss(val_pred, targets[val_idx], config.clamp_delta))
        if log_every and (epoch + 1) % log_every == 0:
            v = f" val {history.val_loss[-1]:.5f}" if n_val else ""
            print(f"epoch {epoch + 1}/{config.epochs} train {history.train_loss[-1]:.5f}{v}")
    return net, history


# ---------------------------------------------------------------------------
# Checkpointing


def save_checkpoint(path, net: Mlp, normalization, encoder_meta: dict) -> None:
    """Framed binary: architecture header, normalization block, JSON encoder
    metadata, then the parameter payload (see binio for the framing)."""
    p = Packer()
    dims = net.layer_dims
    p.u8(4 if net.dtype == np.float32 else 8)
    p.u32(len(dims))
    for d in dims:
        p.i64(d)
    normalization.pack(p)
    p.text(json.dumps(encoder_meta, sort_keys=True))
    for w, b in zip(net.weights, net.biases):
        p.array(w)
        p.array(b)
    write_framed(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION, p.payload())


@dataclass(frozen=True)
class CheckpointBundle:
    net: Mlp
    normalization: object
    encoder_meta: dict


def load_checkpoint(path) -> CheckpointBundle:
    from .dataset import Normalization

    payload = read_framed(path, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)
    u = Unpacker(payload, str(path))
    itemsize = u.u8()
    if itemsize not in (4, 8):
        raise FormatError(f"{path}: bad parameter width {itemsize}")
    n_dims = u.u32()
    dims = [u.i64() for _ in range(n_dims)]
    norm = Normalization.unpack(u)
    meta = json.loads(u.text())
    weights, biases = [], []
    for l in range(n_dims - 1):
        w = u.array()
        b = u.array()
        if w.shape != (dims[l + 1], dims[l]) or b.shape != (dims[l + 1],):
            raise FormatError(f"{path}: layer {l} shape mismatch against header")
        weights.append(w)
        biases.append(b)
    u.done()
    return CheckpointBundle(Mlp(weights, biases), norm, meta)
