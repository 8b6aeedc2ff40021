"""Differentiable layers with hand-written forward/backward passes (float64 numpy)."""

from __future__ import annotations

import numpy as np

from salience.errors import DataError, NumericalError


def sigmoid(x):
    # tanh form cannot overflow and is a single ufunc pass
    return 0.5 * np.tanh(0.5 * np.asarray(x, dtype=float)) + 0.5


def softplus(x):
    return np.logaddexp(0.0, x)


ACTIVATIONS = ("linear", "relu", "softplus", "tanh")


def activate(z, kind: str):
    if kind == "linear":
        return z
    if kind == "relu":
        return np.maximum(z, 0.0)
    if kind == "softplus":
        return softplus(z)
    if kind == "tanh":
        return np.tanh(z)
    raise ValueError(f"unknown activation {kind!r}")


def activation_grad(z, a, kind: str):
    """Derivative of the activation given pre-activation z and output a."""
    if kind == "linear":
        return np.ones_like(z)
    if kind == "relu":
        return (z > 0).astype(z.dtype)
    if kind == "softplus":
        return sigmoid(z)
    if kind == "tanh":
        return 1.0 - a * a
    raise ValueError(f"unknown activation {kind!r}")


class Layer:
    """A parameterised op. ``params`` and ``grads`` share keys and shapes."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params.values())

    def zero_grad(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def _pop_cache(self):
        if self._cache is None:
            raise NumericalError(f"{type(self).__name__}.backward called without a forward cache")
        cache, self._cache = self._cache, None
        return cache

    def config(self) -> dict:
        raise NotImplementedError


class Dense(Layer):
    """activation(x @ W + b) over the last axis of x."""

    def __init__(self, n_in: int, n_out: int, activation: str = "linear", rng=None):
        super().__init__()
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        rng = rng if rng is not None else np.random.default_rng(0)
        limit = np.sqrt(6.0 / n_in) if activation == "relu" else np.sqrt(3.0 / n_in)
        self.n_in, self.n_out, self.activation = n_in, n_out, activation
        self.params = {"W": rng.uniform(-limit, limit, (n_in, n_out)), "b": np.zeros(n_out)}
        self.zero_grad()

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise DataError(f"Dense expects last dim {self.n_in}, got {x.shape}")
        z = x @ self.params["W"] + self.params["b"]
        a = activate(z, self.activation)
        self._cache = (x, z, a)
        return a

    def backward(self, grad_out):
        x, z, a = self._pop_cache()
        dz = grad_out * activation_grad(z, a, self.activation)
        x2 = x.reshape(-1, self.n_in)
        dz2 = dz.reshape(-1, self.n_out)
        self.grads["W"] += x2.T @ dz2
        self.grads["b"] += dz2.sum(axis=0)
        return dz @ self.params["W"].T

    def config(self):
        return {"type": "dense", "n_in": self.n_in, "n_out": self.n_out, "activation": self.activation}


class Embedding(Layer):
    """Row lookup for categorical ids; backward scatters into the touched rows only."""

    def __init__(self, vocab_size: int, dim: int, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.vocab_size, self.dim = vocab_size, dim
        self.params = {"E": rng.uniform(-0.05, 0.05, (vocab_size, dim))}
        self.zero_grad()

    def forward(self, ids):
        ids = np.asarray(ids)
        if not np.issubdtype(ids.dtype, np.integer):
            raise DataError("embedding ids must be integers")
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise DataError(f"embedding id out of vocabulary (size {self.vocab_size})")
        self._cache = ids
        return self.params["E"][ids]

    def backward(self, grad_out):
        ids = self._pop_cache()
        np.add.at(self.grads["E"], ids.reshape(-1), grad_out.reshape(-1, self.dim))
        return None

    def config(self):
        return {"type": "embedding", "vocab_size": self.vocab_size, "dim": self.dim}


class LSTM(Layer):
    """Forget-gate LSTM without peepholes over (batch, T, d) inputs.

    Gate layout along the 4h axis is [input, forget, candidate, output]. The input
    projection of the whole sequence is one matmul; only the recurrent product runs
    inside the time loop.
    """

    def __init__(self, n_in: int, hidden: int, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        h = hidden
        self.n_in, self.hidden = n_in, hidden
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0
        self.params = {
            "Wx": rng.uniform(-1, 1, (n_in, 4 * h)) * np.sqrt(1.0 / n_in),
            "Wh": rng.uniform(-1, 1, (h, 4 * h)) * np.sqrt(1.0 / h),
            "b": b,
        }
        self.zero_grad()

    def _gate_affine(self):
        # sigmoid(z) = 0.5 * tanh(z / 2) + 0.5, so all four gates share one tanh call
        h = self.hidden
        scale = np.full(4 * h, 0.5)
        scale[2 * h:3 * h] = 1.0
        shift = np.where(scale == 0.5, 0.5, 0.0)
        return scale, shift

    def forward(self, x, state0=None):
        B, T, d = x.shape
        if d != self.n_in:
            raise DataError(f"LSTM expects input dim {self.n_in}, got {x.shape}")
        h = self.hidden
        h0, c0 = state0 if state0 is not None else (np.zeros((B, h)), np.zeros((B, h)))
        Wh = self.params["Wh"]
        scale, shift = self._gate_affine()
        xt = np.ascontiguousarray(x.transpose(1, 0, 2))  # time-major
        Z = (xt.reshape(T * B, d) @ self.params["Wx"]).reshape(T, B, 4 * h) + self.params["b"]
        gates = np.empty((T, B, 4 * h))
        H = np.empty((T + 1, B, h))
        C = np.empty((T + 1, B, h))
        H[0], C[0] = h0, c0
        for t in range(T):
            z = Z[t]
            z += H[t] @ Wh
            z *= scale
            g = gates[t]
            np.tanh(z, out=g)
            g *= scale
            g += shift
            np.multiply(g[:, h:2 * h], C[t], out=C[t + 1])
            C[t + 1] += g[:, :h] * g[:, 2 * h:3 * h]
            np.multiply(g[:, 3 * h:], np.tanh(C[t + 1]), out=H[t + 1])
        self._cache = (xt, gates, H, C)
        return np.ascontiguousarray(H[1:].transpose(1, 0, 2)), (H[T].copy(), C[T].copy())

    def backward(self, grad_hseq, grad_state=None):
        """BPTT over all steps; returns (grad_x, (grad_h0, grad_c0))."""
        xt, gates, H, C = self._pop_cache()
        T, B, d = xt.shape
        h = self.hidden
        Wh = self.params["Wh"]
        WhT = np.ascontiguousarray(Wh.T)
        sig = self._gate_affine()[0] == 0.5
        deriv = np.where(sig, gates * (1.0 - gates), 1.0 - gates * gates)
        tanh_c = np.tanh(C[1:])
        gh = np.ascontiguousarray(grad_hseq.transpose(1, 0, 2))
        dZ = np.empty((T, B, 4 * h))
        if grad_state is None:
            dh_next, dc_next = np.zeros((B, h)), np.zeros((B, h))
        else:
            dh_next, dc_next = (g.copy() for g in grad_state)
        for t in range(T - 1, -1, -1):
            g = gates[t]
            dh = gh[t] + dh_next
            tc = tanh_c[t]
            dc = dc_next + dh * g[:, 3 * h:] * (1.0 - tc * tc)
            dz = dZ[t]
            np.multiply(dc, g[:, 2 * h:3 * h], out=dz[:, :h])
            np.multiply(dc, C[t], out=dz[:, h:2 * h])
            np.multiply(dc, g[:, :h], out=dz[:, 2 * h:3 * h])
            np.multiply(dh, tc, out=dz[:, 3 * h:])
            dz *= deriv[t]
            dc_next = dc * g[:, h:2 * h]
            dh_next = dz @ WhT
        dZ2 = dZ.reshape(T * B, 4 * h)
        self.grads["Wx"] += xt.reshape(T * B, d).T @ dZ2
        self.grads["Wh"] += H[:T].reshape(T * B, h).T @ dZ2
        self.grads["b"] += dZ2.sum(axis=0)
        grad_x = (dZ2 @ self.params["Wx"].T).reshape(T, B, d).transpose(1, 0, 2)
        return np.ascontiguousarray(grad_x), (dh_next, dc_next)

    def config(self):
        return {"type": "lstm", "n_in": self.n_in, "hidden": self.hidden}


def dense_param_count(n_in: int, n_out: int) -> int:
    return n_in * n_out + n_out


def lstm_param_count(n_in: int, hidden: int) -> int:
    return 4 * hidden * (n_in + hidden + 1)


def embedding_param_count(vocab_size: int, dim: int) -> int:
    return vocab_size * dim
