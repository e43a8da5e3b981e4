"""Small tanh MLP with hand-written reverse mode, Adam and a gradient checker.

Parameters live in one flat float64 vector; per-layer weights and biases are
views into it, so optimizers and checkpoints work on a single array.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

DEFAULT_SHAPE = (2, 32, 32, 1)


class NumericError(ArithmeticError):
    """A loss, activation or gradient became non-finite."""


def param_count(shape) -> int:
    return sum(a * b + b for a, b in zip(shape[:-1], shape[1:]))


class MlpModel:
    """Fully connected network, tanh on hidden layers, linear output."""

    def __init__(self, shape=DEFAULT_SHAPE, params: np.ndarray | None = None):
        self.shape = tuple(int(s) for s in shape)
        if len(self.shape) < 2 or min(self.shape) < 1:
            raise ValueError(f"invalid layer shape {self.shape}")
        n = param_count(self.shape)
        if params is None:
            params = np.zeros(n)
        params = np.asarray(params, dtype=float)
        if params.shape != (n,):
            raise ValueError(f"expected {n} parameters for shape {self.shape}, got {params.shape}")
        self.params = params.copy()

    @property
    def n_params(self) -> int:
        return self.params.size

    def layers(self, vector: np.ndarray | None = None) -> list[tuple[np.ndarray, np.ndarray]]:
        """(W, b) views into ``vector`` (default: own parameters); W is fan_in x fan_out."""
        vector = self.params if vector is None else vector
        out = []
        offset = 0
        for fan_in, fan_out in zip(self.shape[:-1], self.shape[1:]):
            W = vector[offset : offset + fan_in * fan_out].reshape(fan_in, fan_out)
            offset += fan_in * fan_out
            b = vector[offset : offset + fan_out]
            offset += fan_out
            out.append((W, b))
        return out

    def copy(self) -> "MlpModel":
        return MlpModel(self.shape, self.params)


def init_model(seed: int, shape=DEFAULT_SHAPE) -> MlpModel:
    """Glorot-uniform weights, zero biases."""
    rng = np.random.default_rng(seed)
    model = MlpModel(shape)
    for W, b in model.layers():
        limit = math.sqrt(6.0 / (W.shape[0] + W.shape[1]))
        W[...] = rng.uniform(-limit, limit, size=W.shape)
        b[...] = 0.0
    return model


@dataclass
class ForwardCache:
    inputs: np.ndarray
    hidden: list  # tanh activations per hidden layer
    output: np.ndarray


def _check_inputs(model: MlpModel, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.shape[0]:
        raise ValueError(f"inputs must have shape (batch, {model.shape[0]}), got {x.shape}")
    return x


def forward(model: MlpModel, inputs, params: np.ndarray | None = None, *, cache: bool = False):
    """Evaluate the network on a batch; returns a (batch,) array.

    With ``cache=True`` returns ``(output, ForwardCache)`` for ``backward``.
    """
    x = _check_inputs(model, inputs)
    layers = model.layers(params)
    h = x
    hidden = []
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
        hidden.append(h)
    W, b = layers[-1]
    out = h @ W + b
    if model.shape[-1] == 1:
        out = out[:, 0]
    if cache:
        return out, ForwardCache(x, hidden, out)
    return out


def forward_many(model: MlpModel, inputs, param_stack) -> np.ndarray:
    """Evaluate the network under K parameter vectors at once; returns (K, batch)."""
    x = _check_inputs(model, inputs)
    P = np.atleast_2d(np.asarray(param_stack, dtype=float))
    if P.shape[1] != model.n_params:
        raise ValueError(f"expected {model.n_params} parameters per row, got {P.shape[1]}")
    h = np.broadcast_to(x, (P.shape[0],) + x.shape)
    offset = 0
    n_layers = len(model.shape) - 1
    for idx, (fan_in, fan_out) in enumerate(zip(model.shape[:-1], model.shape[1:])):
        W = P[:, offset : offset + fan_in * fan_out].reshape(-1, fan_in, fan_out)
        offset += fan_in * fan_out
        b = P[:, offset : offset + fan_out]
        offset += fan_out
        h = np.matmul(h, W) + b[:, None, :]
        if idx < n_layers - 1:
            h = np.tanh(h)
    return h[..., 0] if model.shape[-1] == 1 else h


def backward(
    model: MlpModel, cache: ForwardCache, grad_output, params: np.ndarray | None = None
) -> np.ndarray:
    """Vector-Jacobian product: d(loss)/d(params) given d(loss)/d(output)."""
    layers = model.layers(params)
    g = np.asarray(grad_output, dtype=float)
    if g.ndim == 1:
        g = g[:, None]
    grad = np.empty(model.n_params)
    grad_layers = model.layers(grad)
    acts = [cache.inputs] + cache.hidden
    for idx in range(len(layers) - 1, -1, -1):
        W, _ = layers[idx]
        gW, gb = grad_layers[idx]
        a_in = acts[idx]
        np.matmul(a_in.T, g, out=gW)
        np.sum(g, axis=0, out=gb)
        if idx > 0:
            g = g @ W.T
            g *= 1.0 - a_in * a_in
    if not np.isfinite(grad).all():
        raise NumericError(f"non-finite gradient in {_first_bad_tensor(model, grad)}")
    return grad


def _first_bad_tensor(model: MlpModel, grad: np.ndarray) -> str:
    for i, (gW, gb) in enumerate(model.layers(grad), start=1):
        if not np.isfinite(gW).all():
            return f"W{i}"
        if not np.isfinite(gb).all():
            return f"b{i}"
    return "parameters"


class Workspace:
    """Preallocated forward/backward buffers for a fixed input batch.

    Used by training loops that evaluate the same inputs thousands of times.
    ``dtype`` sets the compute precision; parameters and gradients are
    exchanged as float64.
    """

    def __init__(self, model: MlpModel, inputs, dtype=np.float64):
        self.model = model
        self.dtype = np.dtype(dtype)
        x = _check_inputs(model, inputs)
        self.inputs = np.ascontiguousarray(x, dtype=self.dtype)
        M = x.shape[0]
        self.acts = [self.inputs] + [np.empty((M, w), self.dtype) for w in model.shape[1:-1]]
        self.out = np.empty((M, model.shape[-1]), self.dtype)
        self.deltas = [np.empty((M, w), self.dtype) for w in model.shape[1:]]
        self.scratch = [np.empty((M, w), self.dtype) for w in model.shape[1:-1]]
        self._ones = np.ones(M, self.dtype)  # column sums as a product, much faster than sum(axis=0)
        self._params = np.empty(model.n_params, self.dtype)
        self._grad = np.empty(model.n_params, self.dtype)
        self._layers = model.layers(self._params)
        self._grad_layers = model.layers(self._grad)

    def forward(self, params: np.ndarray) -> np.ndarray:
        """Network output for the stored inputs, shape (batch,), in compute dtype."""
        self._params[:] = params
        n_hidden = len(self._layers) - 1
        for idx, (W, b) in enumerate(self._layers):
            dst = self.acts[idx + 1] if idx < n_hidden else self.out
            np.matmul(self.acts[idx], W, out=dst)
            dst += b
            if idx < n_hidden:
                np.tanh(dst, out=dst)
        return self.out[:, 0] if self.out.shape[1] == 1 else self.out

    def backward(self, grad_output) -> np.ndarray:
        """Gradient w.r.t. the parameters of the last ``forward`` call (float64)."""
        g = self.deltas[-1]
        g[...] = np.reshape(grad_output, g.shape)
        for idx in range(len(self._layers) - 1, -1, -1):
            W, _ = self._layers[idx]
            gW, gb = self._grad_layers[idx]
            a_in = self.acts[idx]
            np.matmul(a_in.T, g, out=gW)
            np.matmul(self._ones, g, out=gb)
            if idx > 0:
                prev = self.deltas[idx - 1]
                np.matmul(g, W.T, out=prev)
                s = self.scratch[idx - 1]
                np.multiply(a_in, a_in, out=s)
                np.subtract(1.0, s, out=s)
                prev *= s
                g = prev
        grad = self._grad.astype(np.float64)
        if not np.isfinite(grad).all():
            raise NumericError(f"non-finite gradient in {_first_bad_tensor(self.model, grad)}")
        return grad


# ------------------------------------------------------------------ Adam


@dataclass
class AdamState:
    size: int
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: np.ndarray = field(init=False, repr=False)
    v: np.ndarray = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.m = np.zeros(self.size)
        self.v = np.zeros(self.size)


def adam_step(state: AdamState, params: np.ndarray, grads: np.ndarray) -> np.ndarray:
    """One bias-corrected Adam update; returns new parameters, advances ``state``."""
    params = np.asarray(params, dtype=float)
    grads = np.asarray(grads, dtype=float)
    if params.shape != (state.size,) or grads.shape != (state.size,):
        raise ValueError(
            f"dimension mismatch: state {state.size}, params {params.shape}, grads {grads.shape}"
        )
    state.step += 1
    state.m *= state.beta1
    state.m += (1.0 - state.beta1) * grads
    state.v *= state.beta2
    state.v += (1.0 - state.beta2) * grads * grads
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    return params - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)


# -------------------------------------------------------------- softplus


def softplus(x):
    """ln(1 + e^x), exact asymptotes beyond |x| > 30."""
    x = np.asarray(x, dtype=float)
    mid = np.log1p(np.exp(np.clip(x, -30.0, 30.0)))
    out = np.where(x > 30.0, x, np.where(x < -30.0, np.exp(np.minimum(x, -30.0)), mid))
    return out.item() if out.ndim == 0 else out


def inverse_softplus(y):
    y = np.asarray(y, dtype=float)
    if np.any(~(y > 0)):
        raise ValueError("inverse_softplus is defined for positive values only")
    small = y < math.exp(-30.0)
    big = y > 30.0
    mid = np.clip(y, math.exp(-30.0), 30.0)
    out = np.where(big, y, np.log(np.expm1(mid)))
    out = np.where(small, np.log(y), out)
    return out.item() if out.ndim == 0 else out


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    out = np.exp(-np.logaddexp(0.0, -x))
    return out.item() if out.ndim == 0 else out


@dataclass
class LearnableLineParams:
    """Line resistance and inductance as ``scale * softplus(theta)``."""

    theta_R: float
    theta_L: float
    r_scale: float = 1.0  # ohm
    l_scale: float = 1e-3  # henry

    @classmethod
    def from_values(cls, R: float = 5.0, L: float = 1e-3, r_scale: float = 1.0, l_scale: float = 1e-3):
        return cls(
            float(inverse_softplus(R / r_scale)), float(inverse_softplus(L / l_scale)), r_scale, l_scale
        )

    @property
    def R(self) -> float:
        return self.r_scale * float(softplus(self.theta_R))

    @property
    def L(self) -> float:
        return self.l_scale * float(softplus(self.theta_L))

    def chain(self) -> tuple[float, float]:
        """dR/dtheta_R and dL/dtheta_L."""
        return self.r_scale * float(sigmoid(self.theta_R)), self.l_scale * float(sigmoid(self.theta_L))


# ------------------------------------------------------- gradient check


def central_difference(fun: Callable[[np.ndarray], float], x: np.ndarray, epsilon: float = 1e-5) -> np.ndarray:
    x = np.array(x, dtype=float)
    out = np.empty_like(x)
    for i in range(x.size):
        orig = x[i]
        x[i] = orig + epsilon
        up = fun(x)
        x[i] = orig - epsilon
        down = fun(x)
        x[i] = orig
        out[i] = (up - down) / (2.0 * epsilon)
    return out


def central_difference_many(
    values: Callable[[np.ndarray], np.ndarray], x: np.ndarray, epsilon: float = 1e-5, chunk: int = 128
) -> np.ndarray:
    """Central difference where ``values`` maps a (K, size) stack of points to K losses."""
    x = np.asarray(x, dtype=float)
    out = np.empty(x.size)
    for start in range(0, x.size, chunk):
        idx = np.arange(start, min(start + chunk, x.size))
        pts = np.repeat(x[None, :], 2 * idx.size, axis=0)
        rows = np.arange(idx.size)
        pts[2 * rows, idx] += epsilon
        pts[2 * rows + 1, idx] -= epsilon
        f = np.asarray(values(pts), dtype=float)
        out[idx] = (f[0::2] - f[1::2]) / (2.0 * epsilon)
    return out


def grad_check(
    loss: Callable[[np.ndarray], float],
    grad: Callable[[np.ndarray], np.ndarray],
    x: np.ndarray,
    epsilon: float = 1e-5,
    *,
    batched: bool = False,
) -> float:
    """Max over coordinates of |a - f| / max(1e-12, |a| + |f|).

    ``a`` is ``grad(x)``, ``f`` the central difference of ``loss`` at ``x``.
    With ``batched=True`` the loss takes a (K, size) stack and returns K values.
    """
    x = np.asarray(x, dtype=float)
    analytic = np.asarray(grad(x.copy()), dtype=float)
    if batched:
        numeric = central_difference_many(loss, x, epsilon)
    else:
        numeric = central_difference(loss, x, epsilon)
    rel = np.abs(analytic - numeric) / np.maximum(1e-12, np.abs(analytic) + np.abs(numeric))
    return float(rel.max()) if rel.size else 0.0
