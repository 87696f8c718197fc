"""Multi-scale temporal encoder: short- and long-window convolutional stems,
fusion, a diagonal state-space sequence layer with equivalent recurrent and
convolutional forms, and statistical pooling.

Kernel convention: K_l = sum over stored modes of Re(c * Bbar * Abar^l),
l = 0..L-1, with update-then-read alignment (the state absorbs u_t before the
readout, so K_0 = c*Bbar). Discretization is zero-order hold per mode:
Abar = exp(dt*A), Bbar = b*dt*phi1(dt*A) where phi1(z) = (e^z - 1)/z; the
phi1 form stays finite as A -> 0 (series limit dt*b). Stability comes from
parameterizing Re(A) = -exp(rho).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor

# Below this the direct forms lose precision to cancellation (phi1' goes as
# eps/|z|^2), while a 6-term series is exact to machine precision.
_SERIES_CUT = 1e-2


@dataclass
class S4dParams:
    """Plain-value container for the state-space coefficients (oracle API)."""
    a_re: np.ndarray   # [H,M], strictly negative
    a_im: np.ndarray   # [H,M]
    b: np.ndarray      # complex [H,M]
    c_out: np.ndarray  # complex [H,M]
    log_dt: np.ndarray  # [H]
    d: np.ndarray      # [H]

    def __post_init__(self):
        if np.any(self.a_re >= 0):
            raise ValueError("a_re must be strictly negative (stability)")
        if not np.all(np.isfinite(self.log_dt)):
            raise ValueError("log_dt must be finite")

    @property
    def h(self) -> int:
        return self.a_re.shape[0]

    @property
    def n_modes(self) -> int:
        return self.a_re.shape[1]


def _phi1(z: np.ndarray) -> np.ndarray:
    """(e^z - 1)/z with a series switch near zero."""
    out = np.empty_like(z)
    small = np.abs(z) < _SERIES_CUT
    zs = z[small]
    out[small] = (1.0 + zs / 2.0 + zs**2 / 6.0 + zs**3 / 24.0
                  + zs**4 / 120.0 + zs**5 / 720.0)
    zb = z[~small]
    out[~small] = np.expm1(zb) / zb if np.isrealobj(z) else (np.exp(zb) - 1.0) / zb
    return out


def _dphi1(z: np.ndarray) -> np.ndarray:
    """Derivative of phi1: (e^z (z - 1) + 1)/z^2, series near zero."""
    out = np.empty_like(z)
    small = np.abs(z) < _SERIES_CUT
    zs = z[small]
    out[small] = (0.5 + zs / 3.0 + zs**2 / 8.0 + zs**3 / 30.0
                  + zs**4 / 144.0 + zs**5 / 840.0)
    zb = z[~small]
    out[~small] = (np.exp(zb) * (zb - 1.0) + 1.0) / (zb * zb)
    return out


def s4d_discretize(p: S4dParams):
    """Zero-order hold: returns (Abar, Bbar), complex [H, M]."""
    a = p.a_re.astype(np.float64) + 1j * p.a_im.astype(np.float64)
    dt = np.exp(p.log_dt.astype(np.float64))[:, None]
    theta = dt * a
    abar = np.exp(theta)
    bbar = p.b.astype(np.complex128) * dt * _phi1(theta)
    return abar, bbar


def s4d_kernel(p: S4dParams, L: int) -> np.ndarray:
    """Convolution kernel [H, L]: K_l = sum_m Re(c Bbar Abar^l)."""
    abar, bbar = s4d_discretize(p)
    w = p.c_out.astype(np.complex128) * bbar
    powers = abar[:, :, None] ** np.arange(L)[None, None, :]
    return np.einsum("hm,hml->hl", w, powers).real


def s4d_recurrent(u: np.ndarray, p: S4dParams) -> np.ndarray:
    """Literal recurrence oracle; u [T, H] -> [T, H], zero initial state.

    Update-then-read: s_t = Abar s_{t-1} + Bbar u_t, o_t = Re(c s_t) + D u_t.
    """
    abar, bbar = s4d_discretize(p)
    Tn, H = u.shape
    s = np.zeros((H, p.n_modes), dtype=np.complex128)
    out = np.zeros((Tn, H))
    c = p.c_out.astype(np.complex128)
    for t in range(Tn):
        s = abar * s + bbar * u[t][:, None]
        out[t] = (c * s).sum(axis=1).real + p.d * u[t]
    return out


def s4d_kernel_op(rho: Tensor, a_im: Tensor, b_re: Tensor, b_im: Tensor,
                  c_re: Tensor, c_im: Tensor, log_dt: Tensor, L: int) -> Tensor:
    """Differentiable kernel generation; analytic backward in complex form.

    All inputs [H, M] except log_dt [H]; output [H, L] real. Internals run in
    complex128 regardless of parameter dtype.
    """
    rr = rho.data.astype(np.float64)
    dt = np.exp(log_dt.data.astype(np.float64))[:, None]
    a = -np.exp(rr) + 1j * a_im.data.astype(np.float64)
    theta = dt * a
    phi = _phi1(theta)
    b = b_re.data.astype(np.float64) + 1j * b_im.data.astype(np.float64)
    c = c_re.data.astype(np.float64) + 1j * c_im.data.astype(np.float64)
    bbar = b * dt * phi
    w = c * bbar
    powers = np.exp(theta[:, :, None] * np.arange(L)[None, None, :])  # [H,M,L]
    out_data = np.einsum("hm,hml->hl", w, powers).real.astype(rho.data.dtype)

    def bwd(g):
        g64 = g.astype(np.float64)
        # G_z convention: dL/dRe(z) + i dL/dIm(z); chain G_z = G_w conj(dw/dz)
        s_plain = np.einsum("hl,hml->hm", g64, powers)
        s_ramp = np.einsum("hl,hml->hm", g64 * np.arange(L), powers)
        g_w = np.conj(s_plain)
        g_c = g_w * np.conj(bbar)
        g_bbar = g_w * np.conj(c)
        g_theta = np.conj(w) * np.conj(s_ramp)
        g_theta += g_bbar * np.conj(b * dt * _dphi1(theta))
        g_b = g_bbar * np.conj(dt * phi)
        d_delta = (g_bbar * np.conj(b * phi)).real
        g_a = g_theta * dt
        d_delta += (g_theta * np.conj(a)).real
        dd = rho.data.dtype
        rho._accum((g_a.real * (-np.exp(rr))).astype(dd))
        a_im._accum(g_a.imag.astype(dd))
        b_re._accum(g_b.real.astype(dd))
        b_im._accum(g_b.imag.astype(dd))
        c_re._accum(g_c.real.astype(dd))
        c_im._accum(g_c.imag.astype(dd))
        log_dt._accum((d_delta.sum(axis=1) * dt[:, 0]).astype(dd))

    parents = (rho, a_im, b_re, b_im, c_re, c_im, log_dt)
    return Tensor._make(out_data, parents, bwd)


@dataclass(frozen=True)
class TemporalConfig:
    in_len: int = 1024
    fused_ch: int = 64
    h: int = 128
    state_size: int = 64   # stored modes = state_size // 2 (conjugate pairs)
    dropout: float = 0.1

    @property
    def t_prime(self) -> int:
        return self.in_len // 4

    def validate(self):
        if self.in_len % 4:
            raise ValueError("in_len must be divisible by 4 (two stride-4 stems)")
        if self.state_size % 2 or self.state_size < 2:
            raise ValueError("state_size must be even and >= 2")
        if self.fused_ch % 2:
            raise ValueError("fused_ch must be even (two stems contribute half each)")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        return self


class S4DLayer(nn.Module):
    """Linear projection + layer norm, causal state-space convolution with
    feedthrough, then GELU -> dropout -> 1x1-conv gated linear unit."""

    def __init__(self, in_ch: int, cfg: TemporalConfig, rng: np.random.Generator):
        super().__init__()
        h = cfg.h
        m = cfg.state_size // 2
        self.cfg = cfg
        self.in_proj = nn.Linear(in_ch, h, rng)
        self.ln = nn.LayerNorm(h)
        # S4D-Lin style: A_n = -1/2 + i pi n; dt log-uniform [1e-3, 1e-1];
        # b = 1; c complex normal scaled x2 (conjugate-pair doubling lives in
        # the init, the kernel formula itself has no factor 2)
        self.rho = nn.Param(np.full((h, m), np.log(0.5), dtype=T.DEFAULT_DTYPE))
        self.a_im = nn.Param(np.tile(np.pi * np.arange(m, dtype=T.DEFAULT_DTYPE), (h, 1)))
        self.b_re = nn.Param(np.ones((h, m), dtype=T.DEFAULT_DTYPE))
        self.b_im = nn.Param(np.zeros((h, m), dtype=T.DEFAULT_DTYPE))
        self.c_re = nn.Param((2.0 * rng.normal(0, 0.5 ** 0.5, (h, m))).astype(T.DEFAULT_DTYPE))
        self.c_im = nn.Param((2.0 * rng.normal(0, 0.5 ** 0.5, (h, m))).astype(T.DEFAULT_DTYPE))
        self.log_dt = nn.Param(rng.uniform(np.log(1e-3), np.log(1e-1), h).astype(T.DEFAULT_DTYPE))
        self.d = nn.Param(np.ones(h, dtype=T.DEFAULT_DTYPE))
        self.val = nn.Linear(h, h, rng)
        self.gate = nn.Linear(h, h, rng)

    def s4d_params(self) -> S4dParams:
        """Snapshot of the current coefficients for the numpy oracles."""
        return S4dParams(
            a_re=-np.exp(self.rho.data.astype(np.float64)),
            a_im=self.a_im.data.astype(np.float64),
            b=self.b_re.data.astype(np.float64) + 1j * self.b_im.data.astype(np.float64),
            c_out=self.c_re.data.astype(np.float64) + 1j * self.c_im.data.astype(np.float64),
            log_dt=self.log_dt.data.astype(np.float64),
            d=self.d.data.astype(np.float64))

    def pre_activation(self, x: Tensor) -> Tensor:
        """Everything up to (and including) the state-space convolution and
        feedthrough; x [B, C, T] channel-first -> [B, T, H]."""
        u = self.ln.forward(self.in_proj.forward(T.transpose(x, (0, 2, 1))))
        L = u.shape[1]
        k = s4d_kernel_op(self.rho, self.a_im, self.b_re, self.b_im,
                          self.c_re, self.c_im, self.log_dt, L)
        y = T.fft_long_conv(u, T.transpose(k, (1, 0)))
        return y + u * T.reshape(self.d, (1, 1, self.cfg.h))

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        y = T.gelu(self.pre_activation(x))
        if self.training and self.cfg.dropout > 0.0:
            if rng is None:
                raise ValueError("training-mode dropout needs an rng")
            y = T.dropout(y, self.cfg.dropout, rng, True)
        return self.val.forward(y) * T.sigmoid(self.gate.forward(y))


class TemporalEncoder(nn.Module):
    """Two stride-4 stems at different receptive fields, fusion, state-space
    sequence layer, and order-free statistical pooling to a vector."""

    def __init__(self, cfg: TemporalConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        half = cfg.fused_ch // 2
        self.micro1 = nn.ConvBNReLU(1, half, 9, rng, stride=4)
        self.micro2 = nn.ConvBNReLU(half, half, 17, rng, stride=1)
        self.macro = nn.ConvBNReLU(1, half, 127, rng, stride=4)
        self.fuse_res = nn.ResSEBlock(cfg.fused_ch, cfg.fused_ch, 7, rng)
        self.fuse_proj = nn.Conv1d(cfg.fused_ch, cfg.fused_ch, 1, rng, padding=0)
        self.s4d = S4DLayer(cfg.fused_ch, cfg, rng)

    def micro_stem(self, x: Tensor) -> Tensor:
        return self.micro2.forward(self.micro1.forward(x))

    def macro_stem(self, x: Tensor) -> Tensor:
        return self.macro.forward(x)

    def fuse(self, micro: Tensor, macro: Tensor) -> Tensor:
        if micro.shape[2] != macro.shape[2]:
            raise ValueError(f"stem length mismatch: {micro.shape} vs {macro.shape}")
        cat = T.concat([micro, macro], axis=1)
        return self.fuse_proj.forward(self.fuse_res.forward(cat))

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        """x [B, 1, in_len] -> pooled features [B, h]."""
        fused = self.fuse(self.micro_stem(x), self.macro_stem(x))
        seq = self.s4d.forward(fused, rng)  # [B, T', H]
        return stat_pool(seq)


def stat_pool(seq: Tensor) -> Tensor:
    """Sum of mean, max, and population std over the time axis; [B,T,H]->[B,H]."""
    return (T.tmean(seq, axis=1) + T.tmax(seq, axis=1) + T.tstd(seq, axis=1))
