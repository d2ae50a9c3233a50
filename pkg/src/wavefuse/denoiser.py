"""Noise-prediction U-Net conditioned on the noise level ``sqrt(gamma_t)``."""
from dataclasses import dataclass

import numpy as np

from .nncore import (
    Activation,
    Conv2d,
    Linear,
    Module,
    upsample_nearest2x,
    upsample_nearest2x_backward,
)

NOISE_LEVEL_SCALE = 1000.0


@dataclass
class UNetConfig:
    cond_channels: int = 32
    base_width: int = 32
    depth: int = 2
    embed_dim: int = 64
    out_channels: int = 3

    @property
    def in_channels(self):
        return 3 + self.cond_channels


def sinusoidal_features(noise_level, dim):
    """``[N] -> [N, dim]`` sin/cos features at geometrically spaced frequencies."""
    noise_level = np.atleast_1d(np.asarray(noise_level, dtype=np.float64))
    if np.any(noise_level <= 0) or np.any(noise_level > 1):
        raise ValueError("noise level must lie in (0, 1]")
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / half)
    arg = NOISE_LEVEL_SCALE * noise_level[:, None] * freqs[None]
    return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


class NoiseEmbedding(Module):
    """Sinusoidal features followed by a learned projection and leaky-ReLU."""

    def __init__(self, dim, rng=None, dtype=np.float64):
        self.dim = dim
        self.proj = Linear(dim, dim, rng=rng, dtype=dtype)
        self.act = Activation("leaky-relu")

    def forward(self, noise_level):
        feats = sinusoidal_features(noise_level, self.dim).astype(self.proj.weight.value.dtype)
        return self.act.forward(self.proj.forward(feats))

    def backward(self, dout):
        self.proj.backward(self.act.backward(dout))


class ResBlock(Module):
    """conv -> +shift(emb) -> act -> conv -> act, plus a (1×1 when needed) skip path."""

    def __init__(self, c_in, c_out, embed_dim, rng=None, dtype=np.float64):
        self.conv1 = Conv2d(c_in, c_out, 3, rng=rng, dtype=dtype)
        self.shift = Linear(embed_dim, c_out, rng=rng, dtype=dtype)
        self.act1 = Activation("leaky-relu")
        self.conv2 = Conv2d(c_out, c_out, 3, rng=rng, dtype=dtype)
        self.act2 = Activation("leaky-relu")
        self.skip = Conv2d(c_in, c_out, 1, rng=rng, dtype=dtype) if c_in != c_out else None

    def forward(self, x, emb):
        h = self.conv1.forward(x) + self.shift.forward(emb)[:, :, None, None]
        h = self.act2.forward(self.conv2.forward(self.act1.forward(h)))
        return h + (self.skip.forward(x) if self.skip is not None else x)

    def backward(self, dout):
        """Returns ``(d_x, d_emb)``."""
        da = self.act1.backward(self.conv2.backward(self.act2.backward(dout)))
        d_emb = self.shift.backward(da.sum(axis=(2, 3)))
        dx = self.conv1.backward(da)
        dx = dx + (self.skip.backward(dout) if self.skip is not None else dout)
        return dx, d_emb


class UNet(Module):
    """Encoder (stride-2 convs) / decoder (nearest ×2 + conv) with skip connections."""

    def __init__(self, config, rng=None, dtype=np.float64):
        self.config = config
        c, e = config.base_width, config.embed_dim
        self.embed = NoiseEmbedding(e, rng=rng, dtype=dtype)
        self.inc = Conv2d(config.in_channels, c, 3, rng=rng, dtype=dtype)
        widths = [c * 2 ** i for i in range(config.depth + 1)]
        self.enc = [ResBlock(widths[i], widths[i], e, rng=rng, dtype=dtype) for i in range(config.depth)]
        self.down = [Conv2d(widths[i], widths[i + 1], 3, stride=2, rng=rng, dtype=dtype)
                     for i in range(config.depth)]
        self.mid = ResBlock(widths[-1], widths[-1], e, rng=rng, dtype=dtype)
        self.up = [Conv2d(widths[i + 1], widths[i], 3, rng=rng, dtype=dtype)
                   for i in range(config.depth)]
        self.dec = [ResBlock(2 * widths[i], widths[i], e, rng=rng, dtype=dtype)
                    for i in range(config.depth)]
        self.out = Conv2d(c, config.out_channels, 3, rng=rng, dtype=dtype, init="zero")
        self.dtype = dtype
        self._cache = None

    def forward(self, I_t, z, noise_level):
        cfg = self.config
        I_t = np.asarray(I_t, dtype=self.dtype)
        z = np.asarray(z, dtype=self.dtype)
        if I_t.shape[1] != 3 or z.shape[1] != cfg.cond_channels:
            raise ValueError(f"expected 3 + {cfg.cond_channels} channels, got {I_t.shape[1]} + {z.shape[1]}")
        h, w = I_t.shape[-2:]
        if h % 2 ** cfg.depth or w % 2 ** cfg.depth:
            raise ValueError(f"{h}x{w} not divisible by 2**{cfg.depth}")
        emb = self.embed.forward(np.broadcast_to(noise_level, (I_t.shape[0],)))
        x = self.inc.forward(np.concatenate([I_t, z], axis=1))
        skips = []
        for i in range(cfg.depth):
            x = self.enc[i].forward(x, emb)
            skips.append(x)
            x = self.down[i].forward(x)
        x = self.mid.forward(x, emb)
        for i in reversed(range(cfg.depth)):
            x = self.up[i].forward(upsample_nearest2x(x))
            x = self.dec[i].forward(np.concatenate([x, skips[i]], axis=1), emb)
        return self.out.forward(x)

    def backward(self, dout):
        """Accumulates parameter gradients and returns the gradient w.r.t. ``z``."""
        cfg = self.config
        d = self.out.backward(dout)
        d_emb = 0.0
        d_skips = [None] * cfg.depth
        for i in range(cfg.depth):
            dx, de = self.dec[i].backward(d)
            d_emb = d_emb + de
            c = dx.shape[1] // 2
            d_skips[i] = dx[:, c:]
            d = upsample_nearest2x_backward(self.up[i].backward(dx[:, :c]))
        dx, de = self.mid.backward(d)
        d_emb = d_emb + de
        d = dx
        for i in reversed(range(cfg.depth)):
            d = self.down[i].backward(d) + d_skips[i]
            dx, de = self.enc[i].backward(d)
            d_emb = d_emb + de
            d = dx
        d_in = self.inc.backward(d)
        self.embed.backward(d_emb)
        return d_in[:, 3:]
