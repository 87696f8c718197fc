"""Decoupling front end: shared encoder, per-branch projection, statistical
gating, and per-branch reconstruction of the target and jamming profiles.

The gate is a per-sample, per-channel Wiener-style scalar: along the range
axis each branch projection is correlated with the mixture representation
(the sum of both projections), and the ratio cov(branch, mix)/var(mix) is
clipped to [0, 1] and applied multiplicatively to the mixture. Gradients flow
through the statistics, not just the product.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from . import tensor as T
from .tensor import Tensor

LN10 = float(np.log(10.0))


@dataclass(frozen=True)
class DecouplerConfig:
    c_ch: int = 32
    latent_ch: int = 64
    stem_k: int = 7
    enc_k: int = 7
    se_reduction: int = 4
    mask_eps: float = 1e-8

    def validate(self):
        if self.c_ch < 1 or self.latent_ch < 1:
            raise ValueError("channel counts must be positive")
        if self.stem_k % 2 == 0 or self.enc_k % 2 == 0:
            raise ValueError("stem/encoder kernels must be odd")
        return self


def si_snr(est: Tensor, ref: Tensor, eps: float = 1e-8) -> Tensor:
    """Scale-invariant SNR in dB, per batch row; est/ref [B, T] -> [B].

    eps regularizes the projection, the numerator, and the denominator, so
    a perfect unit-energy match reads +80 dB and an orthogonal unit-energy
    estimate reads -80 dB.
    """
    dot = T.tsum(est * ref, axis=1, keepdims=True)
    ref_e = T.tsum(ref * ref, axis=1, keepdims=True)
    proj = (dot / (ref_e + eps)) * ref
    err = est - proj
    num = T.tsum(proj * proj, axis=1) + eps
    den = T.tsum(err * err, axis=1) + eps
    return T.log(num / den) * (10.0 / LN10)


def decoupling_loss(t_hat: Tensor, i_hat: Tensor, t_ref: Tensor, i_ref: Tensor,
                    weight: float = 1.0) -> Tensor:
    """Negative mean SI-SNR across both branches, halved so the two branches
    average rather than add."""
    a = T.tmean(si_snr(t_hat, t_ref))
    b = T.tmean(si_snr(i_hat, i_ref))
    return (a + b) * (-0.5 * weight)


def statistical_filter(z_tar: Tensor, z_jam: Tensor, eps: float = 1e-8):
    """Gate both branches against the mixture z_tar + z_jam.

    Returns (f_tar, f_jam, mask_tar, mask_jam); masks are [B, C, 1] in [0, 1].
    A zero-variance mixture yields zero masks rather than NaN.
    """
    z_mix = z_tar + z_jam
    my = z_mix - T.tmean(z_mix, axis=2, keepdims=True)
    r_yy = T.tmean(my * my, axis=2, keepdims=True)
    outs = []
    masks = []
    for z in (z_tar, z_jam):
        mb = z - T.tmean(z, axis=2, keepdims=True)
        r_xy = T.tmean(mb * my, axis=2, keepdims=True)
        mask = T.clamp01(r_xy / (r_yy + eps))
        masks.append(mask)
        outs.append(mask * z_mix)
    return outs[0], outs[1], masks[0], masks[1]


class Decoupler(nn.Module):
    """stem -> shared encoder (stride 2) -> branch projections -> statistical
    gate -> per-branch decoder (stride-2 transposed conv) -> linear readout."""

    def __init__(self, cfg: DecouplerConfig, rng: np.random.Generator):
        super().__init__()
        cfg.validate()
        self.cfg = cfg
        c, lat = cfg.c_ch, cfg.latent_ch
        self.stem = nn.ConvBNReLU(1, c, cfg.stem_k, rng)
        self.enc_res = nn.ResSEBlock(c, c, cfg.enc_k, rng, cfg.se_reduction)
        self.enc_conv = nn.Conv1d(c, lat, cfg.enc_k, rng, stride=2, padding="same")
        self.enc_bn = nn.BatchNorm1d(lat)
        self.enc_skip = nn.Conv1d(c, lat, 1, rng, stride=2, padding=0)
        self.enc_skip_bn = nn.BatchNorm1d(lat)
        self.proj_tar = nn.ConvBNReLU(lat, lat, 1, rng)
        self.proj_jam = nn.ConvBNReLU(lat, lat, 1, rng)
        self.dec_up_tar = nn.ConvTranspose1d(lat, c, 4, rng, stride=2, padding=1)
        self.dec_bn_tar = nn.BatchNorm1d(c)
        self.dec_res_tar = nn.ResSEBlock(c, c, cfg.enc_k, rng, cfg.se_reduction)
        self.rec_tar = nn.Conv1d(c, 1, 1, rng, padding=0)
        self.dec_up_jam = nn.ConvTranspose1d(lat, c, 4, rng, stride=2, padding=1)
        self.dec_bn_jam = nn.BatchNorm1d(c)
        self.dec_res_jam = nn.ResSEBlock(c, c, cfg.enc_k, rng, cfg.se_reduction)
        self.rec_jam = nn.Conv1d(c, 1, 1, rng, padding=0)

    def shared_encode(self, h: Tensor) -> Tensor:
        """Residual SE block, then a strided conv and a parallel strided 1x1
        skip, summed before the activation."""
        r = self.enc_res.forward(h)
        main = self.enc_bn.forward(self.enc_conv.forward(r))
        skip = self.enc_skip_bn.forward(self.enc_skip.forward(r))
        return T.relu(main + skip)

    def _decode(self, f: Tensor, up, bn, res, rec) -> Tensor:
        d = T.relu(bn.forward(up.forward(f)))
        d = res.forward(d)
        return rec.forward(d)

    def forward(self, x: Tensor):
        """x [B, 1, T] (T even) -> (t_hat [B,T], i_hat [B,T], aux dict)."""
        if x.ndim != 3 or x.shape[1] != 1:
            raise ValueError(f"expected [B,1,T], got {x.shape}")
        if x.shape[2] % 2:
            raise ValueError("profile length must be even")
        h = self.stem.forward(x)
        e = self.shared_encode(h)
        z_t = self.proj_tar.forward(e)
        z_j = self.proj_jam.forward(e)
        f_t, f_j, m_t, m_j = statistical_filter(z_t, z_j, self.cfg.mask_eps)
        y_t = self._decode(f_t, self.dec_up_tar, self.dec_bn_tar,
                           self.dec_res_tar, self.rec_tar)
        y_j = self._decode(f_j, self.dec_up_jam, self.dec_bn_jam,
                           self.dec_res_jam, self.rec_jam)
        B, _, Tn = x.shape
        t_hat = T.reshape(y_t, (B, Tn))
        i_hat = T.reshape(y_j, (B, Tn))
        aux = {"mask_tar": m_t, "mask_jam": m_j, "z_tar": z_t, "z_jam": z_j,
               "f_tar": f_t, "f_jam": f_j}
        return t_hat, i_hat, aux

    def forward_unfiltered(self, x: Tensor):
        """Ablation path: skip the statistical gate, decode the raw branch
        projections."""
        h = self.stem.forward(x)
        e = self.shared_encode(h)
        z_t = self.proj_tar.forward(e)
        z_j = self.proj_jam.forward(e)
        y_t = self._decode(z_t, self.dec_up_tar, self.dec_bn_tar,
                           self.dec_res_tar, self.rec_tar)
        y_j = self._decode(z_j, self.dec_up_jam, self.dec_bn_jam,
                           self.dec_res_jam, self.rec_jam)
        B, _, Tn = x.shape
        return T.reshape(y_t, (B, Tn)), T.reshape(y_j, (B, Tn))
