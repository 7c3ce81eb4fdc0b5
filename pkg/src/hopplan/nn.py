"""Small numpy neural substrate: dense, 1-D conv and LSTM layers with hand-written
backward passes, softmax cross-entropy, Adam and a finite-difference checker.

Every layer keeps its parameters in a shared :class:`Params` dict under a
prefix. ``forward`` returns the output together with a cache; ``backward``
consumes that cache, accumulates into ``grads`` and returns the input
gradient.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

WEIGHT_FORMAT = 1


class StaleTapeError(RuntimeError):
    pass


class Params(dict):
    """name -> ndarray, with a version bumped whenever the values change."""

    version = 0

    def bump(self):
        self.version += 1

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.items()}


@dataclass
class Tape:
    caches: list
    version: int
    params: Params
    extra: dict = field(default_factory=dict)

    def check(self, params: Params):
        if params is not self.params or params.version != self.version:
            raise StaleTapeError("tape was recorded against different parameter values")


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


# --------------------------------------------------------------------------
# layers


class Dense:
    def __init__(self, params: Params, name: str, n_in: int, n_out: int, rng=None, scale=None):
        self.params, self.name = params, name
        self.n_in, self.n_out = n_in, n_out
        self.kw, self.kb = f"{name}.W", f"{name}.b"
        if scale is None:
            scale = 1.0 / np.sqrt(n_in)
        rng = rng if rng is not None else np.random.default_rng(0)
        params[self.kw] = rng.uniform(-scale, scale, size=(n_in, n_out))
        params[self.kb] = np.zeros(n_out)

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"{self.name}: expected last dim {self.n_in}, got {x.shape}")
        return x @ self.params[self.kw] + self.params[self.kb], x

    def backward(self, dy, x, grads):
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        grads[self.kw] += x2.T @ dy2
        grads[self.kb] += dy2.sum(axis=0)
        return dy @ self.params[self.kw].T


class Conv1d:
    """Same-length 1-D convolution over (batch, channels, width)."""

    def __init__(self, params: Params, name: str, c_in: int, c_out: int, kernel: int = 7, rng=None):
        if kernel % 2 != 1:
            raise ValueError("kernel width must be odd for same padding")
        self.params, self.name = params, name
        self.c_in, self.c_out, self.k = c_in, c_out, kernel
        self.kw, self.kb = f"{name}.W", f"{name}.b"
        rng = rng if rng is not None else np.random.default_rng(0)
        scale = 1.0 / np.sqrt(c_in * kernel)
        params[self.kw] = rng.uniform(-scale, scale, size=(c_out, c_in, kernel))
        params[self.kb] = np.zeros(c_out)
        self._idx = {}

    def _windows(self, W: int):
        # gather index into the zero-padded row: (W, k)
        if W not in self._idx:
            self._idx[W] = np.arange(W)[:, None] + np.arange(self.k)[None, :]
        return self._idx[W]

    def _patches(self, x):
        B, C, W = x.shape
        pad = self.k // 2
        xp = np.zeros((B, C, W + 2 * pad))
        xp[:, :, pad : pad + W] = x
        # (B, C, W, k) -> (B, W, C*k)
        win = xp[:, :, self._windows(W)]
        return win.transpose(0, 2, 1, 3).reshape(B, W, C * self.k)

    def forward(self, x):
        if x.ndim != 3 or x.shape[1] != self.c_in:
            raise ValueError(f"{self.name}: expected (B, {self.c_in}, W), got {x.shape}")
        cols = self._patches(x)
        w = self.params[self.kw].reshape(self.c_out, -1)
        y = cols @ w.T + self.params[self.kb]
        return y.transpose(0, 2, 1), (cols, x.shape)

    def backward(self, dy, cache, grads, need_dx: bool = True):
        cols, shape = cache
        B, C, W = shape
        dyt = np.ascontiguousarray(dy.transpose(0, 2, 1)).reshape(-1, self.c_out)
        grads[self.kw] += (dyt.T @ cols.reshape(-1, C * self.k)).reshape(self.params[self.kw].shape)
        grads[self.kb] += dyt.sum(axis=0)
        if not need_dx:
            return None
        # input gradient: correlate dy with the flipped kernel
        pad = self.k // 2
        dyp = np.zeros((B, self.c_out, W + 2 * pad))
        dyp[:, :, pad : pad + W] = dy
        cols_dy = dyp[:, :, self._windows(W)].transpose(0, 2, 1, 3).reshape(B * W, self.c_out * self.k)
        wf = self.params[self.kw][:, :, ::-1].transpose(0, 2, 1).reshape(self.c_out * self.k, C)
        return (cols_dy @ wf).reshape(B, W, C).transpose(0, 2, 1)


class Tanh:
    @staticmethod
    def forward(x):
        y = np.tanh(x)
        return y, y

    @staticmethod
    def backward(dy, y, grads=None):
        return dy * (1.0 - y * y)


class LSTMStack:
    """Stacked LSTM; gates ordered (input, forget, cell, output)."""

    def __init__(self, params: Params, name: str, n_in: int, hidden: int, layers: int = 2, rng=None):
        self.params, self.name = params, name
        self.n_in, self.hidden, self.layers = n_in, hidden, layers
        rng = rng if rng is not None else np.random.default_rng(0)
        s = 1.0 / np.sqrt(hidden)
        for k in range(layers):
            d_in = n_in if k == 0 else hidden
            params[f"{name}.{k}.W"] = rng.uniform(-s, s, size=(d_in + hidden, 4 * hidden))
            b = np.zeros(4 * hidden)
            b[hidden : 2 * hidden] = 1.0
            params[f"{name}.{k}.b"] = b

    def zero_state(self, batch: int):
        return [(np.zeros((batch, self.hidden)), np.zeros((batch, self.hidden))) for _ in range(self.layers)]

    def step(self, x, state):
        if x.shape[-1] != self.n_in:
            raise ValueError(f"{self.name}: expected input dim {self.n_in}, got {x.shape}")
        H = self.hidden
        new_state, caches = [], []
        inp = x
        for k, (h, c) in enumerate(state):
            xh = np.concatenate([inp, h], axis=1)
            z = xh @ self.params[f"{self.name}.{k}.W"] + self.params[f"{self.name}.{k}.b"]
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H : 2 * H])
            g = np.tanh(z[:, 2 * H : 3 * H])
            o = sigmoid(z[:, 3 * H :])
            c2 = f * c + i * g
            tc = np.tanh(c2)
            h2 = o * tc
            caches.append((xh, c, i, f, g, o, tc))
            new_state.append((h2, c2))
            inp = h2
        return inp, new_state, caches

    def step_backward(self, dh_top, dstate, caches, grads):
        """Backprop one time step.

        ``dstate`` holds the (dh, dc) flowing back from the next time step for
        each layer; returns (dx, dstate for the previous time step).
        """
        H = self.hidden
        prev = [None] * self.layers
        dh_from_above = dh_top
        for k in reversed(range(self.layers)):
            xh, c, i, f, g, o, tc = caches[k]
            dh = dstate[k][0] + dh_from_above
            dc = dstate[k][1] + dh * o * (1.0 - tc * tc)
            dz = np.concatenate(
                [
                    dc * g * i * (1.0 - i),
                    dc * c * f * (1.0 - f),
                    dc * i * (1.0 - g * g),
                    dh * tc * o * (1.0 - o),
                ],
                axis=1,
            )
            W = self.params[f"{self.name}.{k}.W"]
            grads[f"{self.name}.{k}.W"] += xh.T @ dz
            grads[f"{self.name}.{k}.b"] += dz.sum(axis=0)
            dxh = dz @ W.T
            d_in = xh.shape[1] - H
            prev[k] = (dxh[:, d_in:], dc * f)
            dh_from_above = dxh[:, :d_in]
        return dh_from_above, prev


# --------------------------------------------------------------------------
# losses


def log_softmax(logits):
    m = logits.max(axis=-1, keepdims=True)
    z = logits - m
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(logits):
    return np.exp(log_softmax(logits))


def softmax_ce(logits, target):
    """Cross-entropy of one row of logits against a class index.

    Batched use: ``logits`` (N, C) and ``target`` (N,) gives the summed loss.
    Returns (loss, d loss / d logits).
    """
    logits = np.asarray(logits, dtype=float)
    if not np.all(np.isfinite(logits)):
        raise ValueError("logits must be finite")
    single = logits.ndim == 1
    lg = logits[None] if single else logits
    tgt = np.atleast_1d(np.asarray(target))
    C = lg.shape[-1]
    if tgt.shape[0] != lg.shape[0] or np.any(tgt < 0) or np.any(tgt >= C):
        raise IndexError(f"target out of range for {C} classes")
    ls = log_softmax(lg)
    rows = np.arange(lg.shape[0])
    loss = -ls[rows, tgt].sum()
    grad = np.exp(ls)
    grad[rows, tgt] -= 1.0
    return float(loss), (grad[0] if single else grad)


def mse(pred, target):
    d = pred - target
    return float(np.mean(d * d)), 2.0 * d / d.size


# --------------------------------------------------------------------------
# optimisation


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: Params, grads: dict, state: AdamState) -> None:
    """In-place Adam update with bias correction."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for k, g in grads.items():
        p = params[k]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} does not match {k} {p.shape}")
        m = state.m.get(k)
        if m is None:
            m = state.m[k] = np.zeros_like(p)
            state.v[k] = np.zeros_like(p)
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    if isinstance(params, Params):
        params.bump()


def clip_grads(grads: dict, max_norm: float) -> float:
    norm = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if norm > max_norm:
        s = max_norm / norm
        for g in grads.values():
            g *= s
    return norm


def grad_check(params: Params, loss_and_grads, eps: float = 1e-4, max_per_tensor: int | None = None, rng=None):
    """Largest relative error between analytic and central-difference gradients.

    ``loss_and_grads()`` must return (loss, grads) for the current values of
    ``params``. ``max_per_tensor`` limits the probed entries per tensor.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    _, analytic = loss_and_grads()
    analytic = {k: v.copy() for k, v in analytic.items()}
    rng = rng if rng is not None else np.random.default_rng(0)
    worst = 0.0
    for k, p in params.items():
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_tensor is not None and flat.size > max_per_tensor:
            idx = rng.choice(flat.size, size=max_per_tensor, replace=False)
        for j in idx:
            old = flat[j]
            flat[j] = old + eps
            params.bump()
            lp, _ = loss_and_grads()
            flat[j] = old - eps
            params.bump()
            lm, _ = loss_and_grads()
            flat[j] = old
            params.bump()
            num = (lp - lm) / (2.0 * eps)
            a = analytic[k].reshape(-1)[j]
            err = abs(a - num) / max(abs(a), abs(num), 1e-6)
            worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------
# models


class MLP:
    """Dense stack with tanh hidden layers and a linear output."""

    def __init__(self, sizes, rng=None, params: Params | None = None):
        self.sizes = list(sizes)
        self.params = params if params is not None else Params()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.layers = [
            Dense(self.params, f"d{i}", a, b, rng) for i, (a, b) in enumerate(zip(self.sizes, self.sizes[1:]))
        ]

    def forward(self, x):
        caches = []
        for i, layer in enumerate(self.layers):
            x, c = layer.forward(x)
            caches.append(c)
            if i < len(self.layers) - 1:
                x, c = Tanh.forward(x)
                caches.append(c)
        return x, Tape(caches, self.params.version, self.params)

    def __call__(self, x):
        return self.forward(x)[0]

    def backward(self, tape: Tape, dy):
        tape.check(self.params)
        grads = self.params.zeros_like()
        caches = list(tape.caches)
        for i in reversed(range(len(self.layers))):
            if i < len(self.layers) - 1:
                dy = Tanh.backward(dy, caches.pop())
            dy = self.layers[i].backward(dy, caches.pop(), grads)
        return grads, dy


# --------------------------------------------------------------------------
# weight files


def save_weights(path, params: dict, meta: dict | None = None) -> None:
    doc = {
        "format": WEIGHT_FORMAT,
        "tensors": {k: {"shape": list(v.shape), "data": v.reshape(-1).tolist()} for k, v in sorted(params.items())},
    }
    if meta is not None:
        doc["meta"] = meta
    Path(path).write_text(json.dumps(doc) + "\n")


def load_weights(path) -> tuple[Params, dict]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != WEIGHT_FORMAT:
        raise ValueError(f"unsupported weight format {doc.get('format')!r}")
    params = Params()
    for k, t in doc["tensors"].items():
        params[k] = np.asarray(t["data"], dtype=float).reshape(t["shape"])
    return params, doc.get("meta", {})
