"""Trainable building blocks with explicit forward/backward passes.

Every layer owns its parameters, caches what its backward pass needs
during forward (unless caching is disabled for inference), and
accumulates gradients into `Param.grad`. Upstream gradients are total
derivatives; averaging over a batch belongs to the loss function.
"""

from __future__ import annotations

import numpy as np


class ModelError(RuntimeError):
    """Shape mismatch, missing forward cache, or numeric failure."""


class Param:
    """A named trainable tensor with an accumulated gradient."""

    __slots__ = ("name", "value", "grad")

    def __init__(self, name: str, value: np.ndarray):
        self.name = name
        self.value = value
        self.grad = np.zeros_like(value)


def softmax(z: np.ndarray, axis: int = -1) -> np.ndarray:
    zmax = np.max(z, axis=axis, keepdims=True)
    e = np.exp(z - zmax)
    return e / e.sum(axis=axis, keepdims=True)


def softmax_backward(probs: np.ndarray, grad: np.ndarray) -> np.ndarray:
    inner = (grad * probs).sum(axis=-1, keepdims=True)
    return probs * (grad - inner)


class Module:
    """Minimal parameter-owning base; children register params in order."""

    def __init__(self) -> None:
        self._params: list[Param] = []
        self._children: list[Module] = []

    def add_param(self, name: str, value: np.ndarray) -> Param:
        p = Param(name, value)
        self._params.append(p)
        return p

    def add_child(self, child: "Module") -> "Module":
        self._children.append(child)
        return child

    def parameters(self) -> list[Param]:
        out = list(self._params)
        for child in self._children:
            out.extend(child.parameters())
        return out

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad[...] = 0.0


def _uniform_init(rng: np.random.Generator, shape: tuple, fan_in: int,
                  dtype: np.dtype) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, rng: np.random.Generator,
                 dtype: np.dtype, name: str = "linear"):
        super().__init__()
        self.d_in, self.d_out = d_in, d_out
        self.W = self.add_param(f"{name}.W", _uniform_init(rng, (d_in, d_out), d_in, dtype))
        self.b = self.add_param(f"{name}.b", np.zeros(d_out, dtype=dtype))
        self._x: np.ndarray | None = None

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if x.shape[-1] != self.d_in:
            raise ModelError(f"expected last dim {self.d_in}, got {x.shape}")
        self._x = x if cache else None
        return x @ self.W.value + self.b.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise ModelError("backward called without a cached forward")
        x2 = self._x.reshape(-1, self.d_in)
        g2 = grad.reshape(-1, self.d_out)
        self.W.grad += x2.T @ g2
        self.b.grad += g2.sum(axis=0)
        return grad @ self.W.value.T


class Conv1d(Module):
    """Same-length 1-d convolution over (B, L, C_in) with kernel 3/stride 1."""

    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator,
                 dtype: np.dtype, kernel: int = 3, name: str = "conv"):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, kernel
        self.pad = kernel // 2
        self.W = self.add_param(
            f"{name}.W", _uniform_init(rng, (kernel * c_in, c_out), kernel * c_in, dtype))
        self.b = self.add_param(f"{name}.b", np.zeros(c_out, dtype=dtype))
        self._x: np.ndarray | None = None

    def _cols(self, x: np.ndarray) -> np.ndarray:
        xp = np.pad(x, ((0, 0), (self.pad, self.pad), (0, 0)))
        win = np.lib.stride_tricks.sliding_window_view(xp, self.k, axis=1)
        # (B, L, C, k) -> (B, L, k*C) matching W's (k*C, out) layout
        return np.ascontiguousarray(win.transpose(0, 1, 3, 2)).reshape(
            x.shape[0], x.shape[1], self.k * self.c_in)

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        if x.ndim != 3 or x.shape[2] != self.c_in:
            raise ModelError(f"expected (B, L, {self.c_in}), got {x.shape}")
        self._x = x if cache else None
        return self._cols(x) @ self.W.value + self.b.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._x is None:
            raise ModelError("backward called without a cached forward")
        x = self._x
        B, L, _ = x.shape
        cols = self._cols(x).reshape(B * L, -1)
        g2 = grad.reshape(B * L, self.c_out)
        self.W.grad += cols.T @ g2
        self.b.grad += g2.sum(axis=0)
        gcols = (g2 @ self.W.value.T).reshape(B, L, self.k, self.c_in)
        dxp = np.zeros((B, L + 2 * self.pad, self.c_in), dtype=x.dtype)
        for i in range(self.k):
            dxp[:, i:i + L, :] += gcols[:, :, i, :]
        return dxp[:, self.pad:self.pad + L, :]


class MaxPool1d(Module):
    """Kernel-2 / stride-2 max pooling over (B, L, C); odd tails drop."""

    def __init__(self) -> None:
        super().__init__()
        self._idx: np.ndarray | None = None
        self._shape: tuple | None = None

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        B, L, C = x.shape
        L2 = L // 2
        xt = x[:, :2 * L2, :].reshape(B, L2, 2, C)
        idx = xt.argmax(axis=2)
        if cache:
            self._idx = idx
            self._shape = x.shape
        return np.take_along_axis(xt, idx[:, :, None, :], axis=2)[:, :, 0, :]

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._idx is None:
            raise ModelError("backward called without a cached forward")
        B, L, C = self._shape
        L2 = L // 2
        dxt = np.zeros((B, L2, 2, C), dtype=grad.dtype)
        np.put_along_axis(dxt, self._idx[:, :, None, :], grad[:, :, None, :], axis=2)
        dx = np.zeros((B, L, C), dtype=grad.dtype)
        dx[:, :2 * L2, :] = dxt.reshape(B, 2 * L2, C)
        return dx


class LeakyReLU(Module):
    def __init__(self, alpha: float = 0.01):
        super().__init__()
        self.alpha = alpha
        self._slope: np.ndarray | None = None

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        slope = np.where(x > 0, 1.0, self.alpha).astype(x.dtype)
        self._slope = slope if cache else None
        return x * slope

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._slope is None:
            raise ModelError("backward called without a cached forward")
        return grad * self._slope


class ReLU(Module):
    def __init__(self) -> None:
        super().__init__()
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        mask = x > 0
        self._mask = mask if cache else None
        return x * mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._mask is None:
            raise ModelError("backward called without a cached forward")
        return grad * self._mask


class Dropout(Module):
    """Inverted dropout; identity at eval time."""

    def __init__(self, p: float):
        super().__init__()
        self.p = p
        self._mask: np.ndarray | None = None

    def forward(self, x: np.ndarray, train: bool, rng: np.random.Generator | None,
                cache: bool = True) -> np.ndarray:
        if not train or self.p <= 0.0:
            self._mask = None
            return x
        if rng is None:
            raise ModelError("training dropout needs an RNG")
        mask = (rng.random(x.shape) >= self.p).astype(x.dtype) / (1.0 - self.p)
        self._mask = mask if cache else None
        return x * mask

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return grad if self._mask is None else grad * self._mask


class LayerNorm(Module):
    def __init__(self, d: int, dtype: np.dtype, name: str = "ln", eps: float = 1e-5):
        super().__init__()
        self.d, self.eps = d, eps
        self.gamma = self.add_param(f"{name}.gamma", np.ones(d, dtype=dtype))
        self.beta = self.add_param(f"{name}.beta", np.zeros(d, dtype=dtype))
        self._xhat: np.ndarray | None = None
        self._inv_std: np.ndarray | None = None

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        mu = x.mean(axis=-1, keepdims=True)
        var = x.var(axis=-1, keepdims=True)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - mu) * inv_std
        if cache:
            self._xhat, self._inv_std = xhat, inv_std
        return xhat * self.gamma.value + self.beta.value

    def backward(self, grad: np.ndarray) -> np.ndarray:
        if self._xhat is None:
            raise ModelError("backward called without a cached forward")
        xhat, inv_std = self._xhat, self._inv_std
        flat = grad.reshape(-1, self.d)
        self.gamma.grad += (grad * xhat).reshape(-1, self.d).sum(axis=0)
        self.beta.grad += flat.sum(axis=0)
        dxhat = grad * self.gamma.value
        mean_dxhat = dxhat.mean(axis=-1, keepdims=True)
        mean_dxhat_x = (dxhat * xhat).mean(axis=-1, keepdims=True)
        return inv_std * (dxhat - mean_dxhat - xhat * mean_dxhat_x)


def sinusoidal_encoding(max_len: int, d_model: int, dtype: np.dtype) -> np.ndarray:
    """Fixed sin/cos positional table, (max_len, d_model)."""
    pos = np.arange(max_len)[:, None].astype(np.float64)
    i = np.arange(d_model)[None, :]
    angle = pos / np.power(10000.0, (2 * (i // 2)) / d_model)
    pe = np.where(i % 2 == 0, np.sin(angle), np.cos(angle))
    return pe.astype(dtype)


class MultiHeadAttention(Module):
    """Scaled dot-product attention with per-head projections.

    head_h = softmax(Q Wq (K Wk)^T / sqrt(d_k)) V Wv, heads concatenated
    and output-projected. An optional additive mask (-inf = disallowed)
    enables causal decoding.
    """

    def __init__(self, d_model: int, n_head: int, rng: np.random.Generator,
                 dtype: np.dtype, name: str = "attn"):
        super().__init__()
        if d_model % n_head:
            raise ModelError("d_model must be divisible by n_head")
        self.d_model, self.n_head = d_model, n_head
        self.d_k = d_model // n_head
        self.Wq = self.add_child(Linear(d_model, d_model, rng, dtype, f"{name}.Wq"))
        self.Wk = self.add_child(Linear(d_model, d_model, rng, dtype, f"{name}.Wk"))
        self.Wv = self.add_child(Linear(d_model, d_model, rng, dtype, f"{name}.Wv"))
        self.Wo = self.add_child(Linear(d_model, d_model, rng, dtype, f"{name}.Wo"))
        self._cache = None

    def _split(self, x: np.ndarray) -> np.ndarray:
        B, T, _ = x.shape
        return x.reshape(B, T, self.n_head, self.d_k).transpose(0, 2, 1, 3)

    def _merge(self, x: np.ndarray) -> np.ndarray:
        B, H, T, dk = x.shape
        return np.ascontiguousarray(x.transpose(0, 2, 1, 3)).reshape(B, T, H * dk)

    def forward(self, q_in: np.ndarray, kv_in: np.ndarray,
                mask: np.ndarray | None = None, cache: bool = True) -> np.ndarray:
        q = self._split(self.Wq.forward(q_in, cache))
        k = self._split(self.Wk.forward(kv_in, cache))
        v = self._split(self.Wv.forward(kv_in, cache))
        scores = q @ k.transpose(0, 1, 3, 2) / np.sqrt(self.d_k)
        if np.isnan(scores).any():
            raise ModelError("NaN in attention logits")
        if mask is not None:
            scores = scores + mask
        probs = softmax(scores)
        ctx = probs @ v
        out = self.Wo.forward(self._merge(ctx), cache)
        if cache:
            self._cache = (q, k, v, probs)
        return out

    def backward(self, grad: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        if self._cache is None:
            raise ModelError("backward called without a cached forward")
        q, k, v, probs = self._cache
        gctx = self._split(self.Wo.backward(grad))
        dprobs = gctx @ v.transpose(0, 1, 3, 2)
        dv = probs.transpose(0, 1, 3, 2) @ gctx
        dscores = softmax_backward(probs, dprobs) / np.sqrt(self.d_k)
        dq = dscores @ k
        dk = dscores.transpose(0, 1, 3, 2) @ q
        dq_in = self.Wq.backward(self._merge(dq))
        dkv_in = self.Wk.backward(self._merge(dk)) + self.Wv.backward(self._merge(dv))
        return dq_in, dkv_in


class FeedForward(Module):
    def __init__(self, d_model: int, d_ff: int, rng: np.random.Generator,
                 dtype: np.dtype, name: str = "ff"):
        super().__init__()
        self.lin1 = self.add_child(Linear(d_model, d_ff, rng, dtype, f"{name}.lin1"))
        self.act = ReLU()
        self.lin2 = self.add_child(Linear(d_ff, d_model, rng, dtype, f"{name}.lin2"))

    def forward(self, x: np.ndarray, cache: bool = True) -> np.ndarray:
        return self.lin2.forward(self.act.forward(self.lin1.forward(x, cache), cache), cache)

    def backward(self, grad: np.ndarray) -> np.ndarray:
        return self.lin1.backward(self.act.backward(self.lin2.backward(grad)))


def causal_mask(t: int, dtype: np.dtype) -> np.ndarray:
    """Additive (t, t) mask forbidding attention to later positions."""
    mask = np.zeros((t, t), dtype=dtype)
    mask[np.triu_indices(t, k=1)] = -np.inf
    return mask
