"""Module system and the shared network blocks.

``Module`` gives pytorch-flavoured parameter registration with dotted names,
train/eval mode flags, and state dicts of plain numpy arrays. Layers take an
explicit ``np.random.Generator`` at construction so two builds from the same
seed are bit-identical.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .tensor import Tensor


class Param(Tensor):
    """A trainable leaf tensor."""

    def __init__(self, data, dtype=None):
        super().__init__(data, requires_grad=True, dtype=dtype)


class Module:
    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_mods", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Param):
            self._params[name] = value
        elif isinstance(value, Module):
            self._mods[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, arr: np.ndarray):
        self._buffers[name] = arr
        object.__setattr__(self, name, arr)

    def named_parameters(self, prefix: str = ""):
        for n, p in self._params.items():
            yield prefix + n, p
        for n, m in self._mods.items():
            yield from m.named_parameters(prefix + n + ".")

    def named_buffers(self, prefix: str = ""):
        for n, b in self._buffers.items():
            yield prefix + n, b
        for n, m in self._mods.items():
            yield from m.named_buffers(prefix + n + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def modules(self):
        yield self
        for m in self._mods.values():
            yield from m.modules()

    def train(self, mode: bool = True):
        for m in self.modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self):
        return self.train(False)

    def set_requires_grad(self, flag: bool):
        for p in self.parameters():
            p.requires_grad = flag
        return self

    def zero_grad(self):
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict:
        out = {}
        for n, p in self.named_parameters():
            out[n] = p.data.copy()
        for n, b in self.named_buffers():
            out[n] = b.copy()
        return out

    def load_state_dict(self, state: dict):
        own = dict(self.named_parameters())
        bufs = dict(self.named_buffers())
        missing = (set(own) | set(bufs)) - set(state)
        extra = set(state) - (set(own) | set(bufs))
        if missing or extra:
            raise KeyError(f"state mismatch: missing={sorted(missing)} extra={sorted(extra)}")
        for n, p in own.items():
            if p.data.shape != state[n].shape:
                raise ValueError(f"shape mismatch for {n}: {p.data.shape} vs {state[n].shape}")
            p.data = state[n].astype(p.data.dtype).copy()
        for n, b in bufs.items():
            b[...] = state[n].astype(b.dtype)

    def to_dtype(self, dtype):
        """Convert parameters and buffers in place (oracle tests run in f64)."""
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for m in self.modules():
            for n, b in m._buffers.items():
                m.register_buffer(n, b.astype(dtype))
        return self


def _kaiming_uniform(rng: np.random.Generator, shape, fan_in: int):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(T.DEFAULT_DTYPE)


class Conv1d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding="same", bias: bool = True):
        super().__init__()
        self.stride = stride
        self.padding = padding
        self.w = Param(_kaiming_uniform(rng, (cout, cin, k), cin * k))
        self.b = Param(_kaiming_uniform(rng, (cout,), cin * k)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv1d(x, self.w, self.b, self.stride, self.padding)


class ConvTranspose1d(Module):
    def __init__(self, cin: int, cout: int, k: int, rng: np.random.Generator,
                 stride: int = 2, padding: int = 1, bias: bool = True):
        super().__init__()
        if (k - stride) != 2 * padding:
            raise ValueError("need k - stride == 2*padding for exact stride-x upsampling")
        self.stride = stride
        self.padding = padding
        self.w = Param(_kaiming_uniform(rng, (cin, cout, k), cin * k))
        self.b = Param(_kaiming_uniform(rng, (cout,), cin * k)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.conv_transpose1d(x, self.w, self.b, self.stride, self.padding)


class BatchNorm1d(Module):
    def __init__(self, ch: int, momentum: float = 0.1, eps: float = 1e-5):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.gamma = Param(np.ones(ch, dtype=T.DEFAULT_DTYPE))
        self.beta = Param(np.zeros(ch, dtype=T.DEFAULT_DTYPE))
        self.register_buffer("running_mean", np.zeros(ch, dtype=T.DEFAULT_DTYPE))
        self.register_buffer("running_var", np.ones(ch, dtype=T.DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return T.batch_norm(x, self.gamma, self.beta, self.running_mean,
                            self.running_var, self.training, self.momentum, self.eps)


class LayerNorm(Module):
    def __init__(self, h: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Param(np.ones(h, dtype=T.DEFAULT_DTYPE))
        self.beta = Param(np.zeros(h, dtype=T.DEFAULT_DTYPE))

    def forward(self, x: Tensor) -> Tensor:
        return T.layer_norm(x, self.gamma, self.beta, self.eps)


class Linear(Module):
    def __init__(self, fin: int, fout: int, rng: np.random.Generator, bias: bool = True):
        super().__init__()
        self.w = Param(_kaiming_uniform(rng, (fout, fin), fin))
        self.b = Param(_kaiming_uniform(rng, (fout,), fin)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return T.linear(x, self.w, self.b)


class ConvBNReLU(Module):
    """conv -> BN -> ReLU, the recurring building block."""

    def __init__(self, cin: int, cout: int, k: int, rng, stride: int = 1, padding="same"):
        super().__init__()
        self.conv = Conv1d(cin, cout, k, rng, stride, padding)
        self.bn = BatchNorm1d(cout)

    def forward(self, x: Tensor) -> Tensor:
        return T.relu(self.bn.forward(self.conv.forward(x)))


class SEGate(Module):
    """Squeeze-and-excitation channel gate: GAP -> FC -> ReLU -> FC -> sigmoid."""

    def __init__(self, ch: int, rng, reduction: int = 4):
        super().__init__()
        hidden = max(1, ch // reduction)
        self.fc1 = Linear(ch, hidden, rng)
        self.fc2 = Linear(hidden, ch, rng)

    def forward(self, x: Tensor) -> Tensor:
        # x [B,C,T] -> gate [B,C,1], applied multiplicatively
        s = x.mean(axis=2)
        s = T.relu(self.fc1.forward(s))
        g = T.sigmoid(self.fc2.forward(s))
        return x * T.reshape(g, (x.shape[0], x.shape[1], 1))


class ResSEBlock(Module):
    """Three stacked convs, SE channel recalibration, residual add.

    No activation after the residual sum. The shortcut is identity when
    channels match, else a 1x1 projection.
    """

    def __init__(self, cin: int, cout: int, k: int, rng, reduction: int = 4):
        super().__init__()
        self.c1 = ConvBNReLU(cin, cout, k, rng)
        self.c2 = ConvBNReLU(cout, cout, k, rng)
        self.c3 = Conv1d(cout, cout, k, rng)
        self.bn3 = BatchNorm1d(cout)
        self.se = SEGate(cout, rng, reduction)
        self.proj = None if cin == cout else Conv1d(cin, cout, 1, rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.c1.forward(x)
        h = self.c2.forward(h)
        h = self.bn3.forward(self.c3.forward(h))
        h = self.se.forward(h)
        shortcut = x if self.proj is None else self.proj.forward(x)
        return h + shortcut
