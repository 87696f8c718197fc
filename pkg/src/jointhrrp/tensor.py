"""Reverse-mode autodiff on numpy arrays.

A ``Tensor`` wraps an ndarray plus an optional backward closure. Ops build a
DAG; ``backward()`` on a scalar root runs a topological sweep and accumulates
gradients into every reachable tensor with ``requires_grad=True``. The graph
is released afterwards; calling backward twice on the same root raises.

Convolutions run on one of two routes with identical semantics: an
im2col + BLAS matmul route for short kernels, and an FFT route (scipy.fft,
float32-preserving) for long ones. ``JHN_THREADS`` caps FFT worker threads.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

import numpy as np
from scipy import fft as sfft
from scipy import special as ssp

DEFAULT_DTYPE = np.float32

# kernels at least this long take the FFT route in conv1d
FFT_KERNEL_MIN = 24

_GRAD_ENABLED = True


def num_workers() -> int:
    try:
        return max(1, int(os.environ.get("JHN_THREADS", "1")))
    except ValueError:
        return 1


@contextmanager
def no_grad():
    """Disable graph construction inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_bwd", "_parents", "_released")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        arr = np.asarray(data, dtype=dtype if dtype is not None else None)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._bwd = None
        self._parents = ()
        self._released = False

    # -- construction ------------------------------------------------------

    @staticmethod
    def _make(data: np.ndarray, parents, bwd) -> "Tensor":
        """Internal node constructor; ``bwd(g)`` pushes grad to parents."""
        out = Tensor.__new__(Tensor)
        out.data = data
        out.grad = None
        out._released = False
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._bwd = bwd
        else:
            out.requires_grad = False
            out._parents = ()
            out._bwd = None
        return out

    # -- bookkeeping -------------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def _accum(self, g: np.ndarray):
        if self.grad is None:
            self.grad = g.copy() if not g.flags.owndata else g
        else:
            self.grad = self.grad + g

    def backward(self):
        if self._released:
            raise RuntimeError("backward already ran on this graph")
        if self.data.size != 1:
            raise ValueError("backward requires a scalar root")
        topo: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._bwd is not None and node.grad is not None:
                node._bwd(node.grad)
        # release the graph; keep grads only on grad-requiring leaves
        for node in topo:
            interior = node._bwd is not None
            node._bwd = None
            node._parents = ()
            if interior:
                node._released = True
                node.grad = None
            elif not node.requires_grad:
                node.grad = None

    # -- operators ---------------------------------------------------------

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return tslice(self, idx)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, *axes):
        return transpose(self, axes if axes else None)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, grad={self.requires_grad})"


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dt = like.data.dtype if like is not None else DEFAULT_DTYPE
    return Tensor(np.asarray(x, dtype=dt))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum g down to ``shape`` (reverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- elementwise arithmetic -------------------------------------------------


def add(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out_data = a.data + b.data

    def bwd(g):
        if a.requires_grad or a._parents:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._parents:
            b._accum(_unbroadcast(g, b.data.shape))

    return Tensor._make(out_data, (a, b), bwd)


def sub(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out_data = a.data - b.data

    def bwd(g):
        if a.requires_grad or a._parents:
            a._accum(_unbroadcast(g, a.data.shape))
        if b.requires_grad or b._parents:
            b._accum(_unbroadcast(-g, b.data.shape))

    return Tensor._make(out_data, (a, b), bwd)


def mul(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out_data = a.data * b.data

    def bwd(g):
        if a.requires_grad or a._parents:
            a._accum(_unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad or b._parents:
            b._accum(_unbroadcast(g * a.data, b.data.shape))

    return Tensor._make(out_data, (a, b), bwd)


def div(a, b):
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out_data = a.data / b.data

    def bwd(g):
        if a.requires_grad or a._parents:
            a._accum(_unbroadcast(g / b.data, a.data.shape))
        if b.requires_grad or b._parents:
            b._accum(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return Tensor._make(out_data, (a, b), bwd)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        a._accum(g * out_data)

    return Tensor._make(out_data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def bwd(g):
        a._accum(g / a.data)

    return Tensor._make(out_data, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bwd(g):
        a._accum(g * (0.5 / out_data))

    return Tensor._make(out_data, (a,), bwd)


# -- shape ops ---------------------------------------------------------------


def reshape(a: Tensor, shape) -> Tensor:
    old = a.data.shape
    out_data = a.data.reshape(shape)

    def bwd(g):
        a._accum(g.reshape(old))

    return Tensor._make(out_data, (a,), bwd)


def transpose(a: Tensor, axes=None) -> Tensor:
    out_data = np.transpose(a.data, axes)
    if axes is None:
        inv = None
    else:
        inv = np.argsort(axes)

    def bwd(g):
        a._accum(np.transpose(g, inv))

    return Tensor._make(out_data, (a,), bwd)


def tslice(a: Tensor, idx) -> Tensor:
    out_data = a.data[idx]

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        a._accum(full)

    return Tensor._make(out_data, (a,), bwd)


def concat(parts: list, axis: int = 0) -> Tensor:
    parts = [p if isinstance(p, Tensor) else Tensor(p) for p in parts]
    out_data = np.concatenate([p.data for p in parts], axis=axis)
    sizes = [p.data.shape[axis] for p in parts]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for p, piece in zip(parts, np.split(g, splits, axis=axis)):
            if p.requires_grad or p._parents:
                p._accum(piece)

    return Tensor._make(out_data, tuple(parts), bwd)


def pad_last(a: Tensor, left: int, right: int) -> Tensor:
    """Zero-pad the last axis."""
    width = [(0, 0)] * (a.data.ndim - 1) + [(left, right)]
    out_data = np.pad(a.data, width)
    T = a.data.shape[-1]

    def bwd(g):
        a._accum(g[..., left:left + T])

    return Tensor._make(out_data, (a,), bwd)


# -- reductions --------------------------------------------------------------


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.data.shape))

    return Tensor._make(np.asarray(out_data), (a,), bwd)


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.mean(axis=axis, keepdims=keepdims)
    n = a.data.size if axis is None else np.prod(
        [a.data.shape[ax] for ax in (axis if isinstance(axis, tuple) else (axis,))])

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(np.broadcast_to(g, a.data.shape) / n)

    return Tensor._make(np.asarray(out_data), (a,), bwd)


def tmax(a: Tensor, axis: int, keepdims: bool = False) -> Tensor:
    """Max along one axis; gradient goes to the first argmax (ties: lowest index)."""
    idx = np.argmax(a.data, axis=axis)
    out_data = np.take_along_axis(a.data, np.expand_dims(idx, axis), axis=axis)
    if not keepdims:
        out_data = np.squeeze(out_data, axis=axis)

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(idx, axis), g, axis=axis)
        a._accum(full)

    return Tensor._make(out_data, (a,), bwd)


def tstd(a: Tensor, axis: int, keepdims: bool = False, eps: float = 1e-8) -> Tensor:
    """Population std along one axis, eps inside the sqrt."""
    mu = a.data.mean(axis=axis, keepdims=True)
    centered = a.data - mu
    var = np.mean(centered * centered, axis=axis, keepdims=True)
    s = np.sqrt(var + np.asarray(eps, dtype=a.data.dtype))
    out_data = s if keepdims else np.squeeze(s, axis=axis)
    n = a.data.shape[axis]

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accum(g * centered / (n * s))

    return Tensor._make(out_data, (a,), bwd)


# -- nonlinearities -----------------------------------------------------------


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out_data = np.where(mask, a.data, 0)

    def bwd(g):
        a._accum(g * mask)

    return Tensor._make(out_data, (a,), bwd)


def gelu(a: Tensor) -> Tensor:
    """Exact erf form: x * Phi(x)."""
    x = a.data
    phi_cdf = 0.5 * (1.0 + ssp.erf(x / np.sqrt(2.0, dtype=x.dtype)))
    out_data = (x * phi_cdf).astype(x.dtype)

    def bwd(g):
        pdf = np.exp(-0.5 * x * x) / np.sqrt(2.0 * np.pi)
        a._accum(g * (phi_cdf + x * pdf).astype(x.dtype))

    return Tensor._make(out_data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    out_data = ssp.expit(a.data)

    def bwd(g):
        a._accum(g * out_data * (1.0 - out_data))

    return Tensor._make(out_data, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a._accum(out_data * (g - dot))

    return Tensor._make(out_data, (a,), bwd)


def clamp01(a: Tensor) -> Tensor:
    """Clip to [0, 1]; zero gradient outside the open interval."""
    out_data = np.clip(a.data, 0.0, 1.0)
    interior = (a.data > 0.0) & (a.data < 1.0)

    def bwd(g):
        a._accum(g * interior)

    return Tensor._make(out_data, (a,), bwd)


def dropout(a: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    """Inverted dropout; identity when not training or p == 0."""
    if not training or p <= 0.0:
        return a
    keep = (rng.random(a.data.shape) >= p).astype(a.data.dtype) / (1.0 - p)

    def bwd(g):
        a._accum(g * keep)

    return Tensor._make(a.data * keep, (a,), bwd)


# -- linear algebra -----------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out_data = a.data @ b.data

    def bwd(g):
        if a.requires_grad or a._parents:
            ga = g @ np.swapaxes(b.data, -1, -2)
            a._accum(_unbroadcast(ga, a.data.shape))
        if b.requires_grad or b._parents:
            gb = np.swapaxes(a.data, -1, -2) @ g
            b._accum(_unbroadcast(gb, b.data.shape))

    return Tensor._make(out_data, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """x [..., in] @ w[out, in].T + b[out]."""
    out_data = x.data @ w.data.T
    if b is not None:
        out_data = out_data + b.data

    def bwd(g):
        if x.requires_grad or x._parents:
            x._accum(g @ w.data)
        g2 = g.reshape(-1, g.shape[-1])
        x2 = x.data.reshape(-1, x.data.shape[-1])
        w._accum(g2.T @ x2)
        if b is not None:
            b._accum(g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(out_data, parents, bwd)


# -- convolution --------------------------------------------------------------


def _resolve_pad(T: int, K: int, stride: int, padding) -> tuple[int, int]:
    if padding == "same":
        out = -(-T // stride)
        total = max(0, (out - 1) * stride + K - T)
        return total // 2, total - total // 2
    if isinstance(padding, tuple):
        return padding
    return int(padding), int(padding)


def _im2col(xp: np.ndarray, K: int, stride: int, t_out: int) -> np.ndarray:
    """[B, C, Tp] -> [B, t_out, C*K] (copy)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, K, axis=2)
    win = win[:, :, ::stride][:, :, :t_out]
    B, C = xp.shape[0], xp.shape[1]
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(B, t_out, C * K)


def _conv_fft_fwd(xp, w, stride, t_out):
    B, Cin, Tp = xp.shape
    Cout, _, K = w.shape
    L = sfft.next_fast_len(Tp)
    X = sfft.rfft(xp, L, axis=2, workers=num_workers())
    W = sfft.rfft(w, L, axis=2, workers=num_workers())
    # per-frequency channel mixing via batched gemm
    Xf = np.ascontiguousarray(X.transpose(2, 0, 1))            # [F,B,Cin]
    Wf = np.ascontiguousarray(np.conj(W).transpose(2, 1, 0))   # [F,Cin,Cout]
    Yf = Xf @ Wf                                               # [F,B,Cout]
    y_full = sfft.irfft(Yf.transpose(1, 2, 0), L, axis=2, workers=num_workers())
    y = y_full[:, :, :Tp - K + 1][:, :, ::stride][:, :, :t_out]
    return np.ascontiguousarray(y.astype(xp.dtype)), L


def conv1d(x: Tensor, w: Tensor, b: Tensor | None = None,
           stride: int = 1, padding="same") -> Tensor:
    """Cross-correlation conv: x [B,Cin,T], w [Cout,Cin,K] -> [B,Cout,T_out].

    padding 'same' keeps T_out == ceil(T/stride); an int or (left, right)
    tuple pads explicitly. Long kernels run through an FFT route that is
    numerically equivalent to the im2col route.
    """
    B, Cin, T = x.data.shape
    Cout, Cin2, K = w.data.shape
    if Cin != Cin2:
        raise ValueError(f"conv1d channel mismatch: {Cin} vs {Cin2}")
    pl, pr = _resolve_pad(T, K, stride, padding)
    xp = np.pad(x.data, ((0, 0), (0, 0), (pl, pr)))
    Tp = xp.shape[2]
    t_out = (Tp - K) // stride + 1
    use_fft = K >= FFT_KERNEL_MIN
    if use_fft:
        y, L = _conv_fft_fwd(xp, w.data, stride, t_out)
    else:
        cols = _im2col(xp, K, stride, t_out)
        y = (cols @ w.data.reshape(Cout, Cin * K).T).transpose(0, 2, 1)
    if b is not None:
        y = y + b.data[None, :, None]

    def bwd(g):
        g = np.ascontiguousarray(g)
        if use_fft:
            L2 = sfft.next_fast_len(Tp)
            gs = np.zeros((B, Cout, Tp), dtype=g.dtype)
            gs[:, :, :(t_out - 1) * stride + 1:stride] = g
            GS = sfft.rfft(gs, L2, axis=2, workers=num_workers())
            W = sfft.rfft(w.data, L2, axis=2, workers=num_workers())
            if x.requires_grad or x._parents:
                # dxp[m] = sum_o (gs_o conv w_oc)[m]
                GSf = np.ascontiguousarray(GS.transpose(2, 0, 1))       # [F,B,Cout]
                Wf = np.ascontiguousarray(W.transpose(2, 0, 1))         # [F,Cout,Cin]
                dXf = GSf @ Wf                                          # [F,B,Cin]
                dxp = sfft.irfft(dXf.transpose(1, 2, 0), L2, axis=2,
                                 workers=num_workers())[:, :, :Tp]
                x._accum(dxp[:, :, pl:Tp - pr].astype(x.data.dtype))
            # dW[o,c,k] = sum_b corr(xp_c, gs_o)[k]
            X = sfft.rfft(xp, L2, axis=2, workers=num_workers())
            Xf = np.ascontiguousarray(X.transpose(2, 1, 0))             # [F,Cin,B]
            Gc = np.ascontiguousarray(np.conj(GS).transpose(2, 0, 1))   # [F,B,Cout]
            dWf = Xf @ Gc                                               # [F,Cin,Cout]
            dW = sfft.irfft(dWf.transpose(2, 1, 0), L2, axis=2,
                            workers=num_workers())[:, :, :K]
            w._accum(dW.astype(w.data.dtype))
        else:
            cols_b = _im2col(xp, K, stride, t_out)
            gT = np.ascontiguousarray(g.transpose(0, 2, 1))             # [B,t_out,Cout]
            dW2 = gT.reshape(-1, Cout).T @ cols_b.reshape(-1, Cin * K)
            w._accum(dW2.reshape(Cout, Cin, K))
            if x.requires_grad or x._parents:
                dcols = (gT @ w.data.reshape(Cout, Cin * K)).reshape(B, t_out, Cin, K)
                dcols = dcols.transpose(0, 2, 1, 3)                     # [B,Cin,t_out,K]
                dxp = np.zeros_like(xp)
                for k in range(K):
                    dxp[:, :, k:k + stride * t_out:stride] += dcols[:, :, :, k]
                x._accum(dxp[:, :, pl:Tp - pr])
        if b is not None:
            b._accum(g.sum(axis=(0, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(np.ascontiguousarray(y), parents, bwd)


def conv_transpose1d(x: Tensor, w: Tensor, b: Tensor | None = None,
                     stride: int = 2, padding: int = 1) -> Tensor:
    """Transposed conv (gradient of conv1d w.r.t. its input).

    x [B,Cin,T], w [Cin,Cout,K] -> [B,Cout,(T-1)*stride - 2*padding + K].
    With K - stride == 2*padding the output length is exactly stride*T.
    """
    B, Cin, T = x.data.shape
    Cin2, Cout, K = w.data.shape
    if Cin != Cin2:
        raise ValueError(f"conv_transpose1d channel mismatch: {Cin} vs {Cin2}")
    out_len = (T - 1) * stride - 2 * padding + K
    full = (T - 1) * stride + K
    tmp = (x.data.transpose(0, 2, 1) @ w.data.reshape(Cin, Cout * K))
    tmp = tmp.reshape(B, T, Cout, K).transpose(0, 2, 1, 3)      # [B,Cout,T,K]
    buf = np.zeros((B, Cout, full), dtype=x.data.dtype)
    for k in range(K):
        buf[:, :, k:k + stride * T:stride] += tmp[:, :, :, k]
    y = buf[:, :, padding:padding + out_len]
    if b is not None:
        y = y + b.data[None, :, None]

    def bwd(g):
        gp = np.zeros((B, Cout, full), dtype=g.dtype)
        gp[:, :, padding:padding + out_len] = g
        win = np.lib.stride_tricks.sliding_window_view(gp, K, axis=2)[:, :, ::stride]
        win = np.ascontiguousarray(win[:, :, :T].transpose(0, 2, 1, 3))  # [B,T,Cout,K]
        win2 = win.reshape(B, T, Cout * K)
        if x.requires_grad or x._parents:
            dx = win2 @ w.data.reshape(Cin, Cout * K).T                  # [B,T,Cin]
            x._accum(np.ascontiguousarray(dx.transpose(0, 2, 1)))
        xt = np.ascontiguousarray(x.data.transpose(1, 0, 2)).reshape(Cin, B * T)
        dW = xt @ win2.reshape(B * T, Cout * K)
        w._accum(dW.reshape(Cin, Cout, K))
        if b is not None:
            b._accum(g.sum(axis=(0, 2)))

    parents = (x, w) if b is None else (x, w, b)
    return Tensor._make(np.ascontiguousarray(y), parents, bwd)


def fft_long_conv(u: Tensor, k: Tensor) -> Tensor:
    """Causal convolution y[t] = sum_{l<=t} k[l] * u[t-l], per feature.

    u [B,T,H], k [T,H] -> [B,T,H]. FFT length >= 2T avoids circular wrap.
    """
    B, T, H = u.data.shape
    if k.data.shape != (T, H):
        raise ValueError(f"kernel shape {k.data.shape} != {(T, H)}")
    L = sfft.next_fast_len(2 * T)
    U = sfft.rfft(u.data, L, axis=1, workers=num_workers())
    Kf = sfft.rfft(k.data, L, axis=0, workers=num_workers())
    y = sfft.irfft(U * Kf[None], L, axis=1, workers=num_workers())[:, :T]

    def bwd(g):
        G = sfft.rfft(g, L, axis=1, workers=num_workers())
        if u.requires_grad or u._parents:
            du = sfft.irfft(G * np.conj(Kf)[None], L, axis=1,
                            workers=num_workers())[:, :T]
            u._accum(du.astype(u.data.dtype))
        dk = sfft.irfft((G * np.conj(U)).sum(axis=0), L, axis=0,
                        workers=num_workers())[:T]
        k._accum(dk.astype(k.data.dtype))

    return Tensor._make(np.ascontiguousarray(y.astype(u.data.dtype)), (u, k), bwd)


# -- normalization ------------------------------------------------------------


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor,
               running_mean: np.ndarray, running_var: np.ndarray,
               training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """BatchNorm over (batch, length) per channel; x [B,C,T] or [B,C].

    Running buffers are updated in place in training mode (population
    variance). Eval mode normalizes with the buffers.
    """
    is_3d = x.data.ndim == 3
    axes = (0, 2) if is_3d else (0,)
    shape = (1, -1, 1) if is_3d else (1, -1)
    if training:
        mu = x.data.mean(axis=axes)
        centered = x.data - mu.reshape(shape)
        var = np.mean(centered * centered, axis=axes)
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean.astype(x.data.dtype)
        var = running_var.astype(x.data.dtype)
        centered = x.data - mu.reshape(shape)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv.reshape(shape)
    out_data = gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)

    def bwd(g):
        gamma._accum((g * xhat).sum(axis=axes))
        beta._accum(g.sum(axis=axes))
        if x.requires_grad or x._parents:
            gi = g * gamma.data.reshape(shape)
            if training:
                m1 = gi.mean(axis=axes, keepdims=True)
                m2 = (gi * xhat).mean(axis=axes, keepdims=True)
                dx = inv.reshape(shape) * (gi - m1 - xhat * m2)
            else:
                dx = gi * inv.reshape(shape)
            x._accum(dx.astype(x.data.dtype))

    return Tensor._make(out_data.astype(x.data.dtype), (x, gamma, beta), bwd)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis; x [..., H], gamma/beta [H]."""
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = np.mean(centered * centered, axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv
    out_data = gamma.data * xhat + beta.data

    def bwd(g):
        red = tuple(range(g.ndim - 1))
        gamma._accum((g * xhat).sum(axis=red))
        beta._accum(g.sum(axis=red))
        if x.requires_grad or x._parents:
            gi = g * gamma.data
            m1 = gi.mean(axis=-1, keepdims=True)
            m2 = (gi * xhat).mean(axis=-1, keepdims=True)
            x._accum((inv * (gi - m1 - xhat * m2)).astype(x.data.dtype))

    return Tensor._make(out_data.astype(x.data.dtype), (x, gamma, beta), bwd)


# -- losses -------------------------------------------------------------------


def ce_with_logits(logits: Tensor, y: np.ndarray) -> Tensor:
    """Mean categorical cross-entropy from raw logits (stable log-sum-exp).

    logits [B,C], y int array [B].
    """
    z = logits.data
    m = z.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=1, keepdims=True))
    logp = z - lse
    B = z.shape[0]
    rows = np.arange(B)
    out_data = np.asarray(-logp[rows, y].mean(), dtype=z.dtype)

    def bwd(g):
        p = np.exp(logp)
        p[rows, y] -= 1.0
        logits._accum(g * p / B)

    return Tensor._make(out_data, (logits,), bwd)


def bce_with_logits(logits: Tensor, y: np.ndarray) -> Tensor:
    """Mean binary cross-entropy from raw logits, elementwise over all labels.

    Stable form: max(z,0) - z*y + log(1 + exp(-|z|)).
    """
    z = logits.data
    loss = np.maximum(z, 0) - z * y + np.log1p(np.exp(-np.abs(z)))
    out_data = np.asarray(loss.mean(), dtype=z.dtype)

    def bwd(g):
        logits._accum(g * (ssp.expit(z) - y) / z.size)

    return Tensor._make(out_data, (logits,), bwd)


# -- finite-difference gradient checking -------------------------------------


def grad_check(fn, inputs: list, h: float = 1e-5, rtol: float = 1e-3):
    """Central-difference check of fn's gradients w.r.t. f64 input tensors.

    fn() must close over ``inputs`` and return a scalar Tensor. Coordinates
    whose probe crosses a kink are skipped and reported; crossings are
    detected two ways: full-step and half-step estimates that disagree
    (Richardson mismatch), and a second difference far above the O(h^2)
    smooth scale. Returns (max_rel_err, n_checked, skipped) where skipped
    is a list of (input_index, flat_coordinate).
    """
    for t in inputs:
        if t.data.dtype != np.float64:
            raise ValueError("grad_check expects float64 inputs")
        t.zero_grad()
    out = fn()
    f0 = float(out.data)
    out.backward()
    grads = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data)
             for t in inputs]
    max_rel = 0.0
    n_checked = 0
    skipped = []
    with no_grad():
        for ti, t in enumerate(inputs):
            flat = t.data.reshape(-1)
            gflat = grads[ti].reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                fp = float(fn().data)
                flat[i] = orig - h
                fm = float(fn().data)
                flat[i] = orig + 0.5 * h
                fp2 = float(fn().data)
                flat[i] = orig - 0.5 * h
                fm2 = float(fn().data)
                flat[i] = orig
                num = (fp - fm) / (2 * h)
                num2 = (fp2 - fm2) / h
                curve = abs(fp + fm - 2 * f0)
                kinked = (abs(num - num2) > 1e-4 * (abs(num2) + 1.0)
                          or curve > 10.0 * h * (abs(num) + 1.0))
                if kinked:
                    skipped.append((ti, i))
                    continue
                # floor scales with the FD roundoff noise ~ eps*|f|/h so that
                # structurally-zero gradients (e.g. conv bias under BN) are
                # compared against noise, not an arbitrary constant; deep
                # forwards accumulate rounding well above a single ulp
                floor = max(1e-8, 1e-11 * (abs(f0) + 1.0) / h)
                denom = max(abs(num2), abs(gflat[i]), floor)
                rel = abs(num2 - gflat[i]) / denom
                max_rel = max(max_rel, rel)
                n_checked += 1
    return max_rel, n_checked, skipped
