"""Wavelet-guided conditioning branch.

Low-resolution modalities are bicubically upsampled, each is decomposed
with the Haar DWT and packed on the level-1 grid, the packed maps are
concatenated (``F_raw``), rectified by a small convolutional encoder
(``F_rect``) and fused by gated channel/spatial attention::

    F_sa = spatial_attention(channel_attention(F_rect))
    z    = w1 * F_rect + w2 * F_sa + gamma_res * F_rect

where ``(w1, w2)`` is a per-pixel softmax predicted from
``concat(F_rect, F_sa)``. ``z`` is then bilinearly upsampled ×2 so it can be
concatenated with the noisy image.

Reduced variants used for ablations are selected by ``mode``:

``full``          wavelet + rectifier + gated attention fusion
``wavelet_asff``  wavelet + gated attention fusion (no rectifier)
``wavelet``       packed wavelet spectrum only
``pixel``         upsampled modalities concatenated in the pixel domain
"""
import numpy as np

from . import wavelet
from .data import ModalityTriplet, resize, resize_adjoint
from .nncore import Activation, Conv2d, Linear, Module, Param, SoftmaxChannels, sigmoid

MODES = ("full", "wavelet_asff", "wavelet", "pixel")


class Rectifier(Module):
    """3×3 conv stack ``c_in -> width -> width -> c_out`` with leaky-ReLU between layers."""

    def __init__(self, c_in, c_out, width=32, rng=None, dtype=np.float64):
        self.conv1 = Conv2d(c_in, width, 3, rng=rng, dtype=dtype)
        self.act1 = Activation("leaky-relu")
        self.conv2 = Conv2d(width, width, 3, rng=rng, dtype=dtype)
        self.act2 = Activation("leaky-relu")
        self.conv3 = Conv2d(width, c_out, 3, rng=rng, dtype=dtype)

    def _layers(self):
        return (self.conv1, self.act1, self.conv2, self.act2, self.conv3)

    def forward(self, x):
        for layer in self._layers():
            x = layer.forward(x)
        return x

    def backward(self, dout):
        for layer in reversed(self._layers()):
            dout = layer.backward(dout)
        return dout


def bottleneck_width(channels, reduction=16):
    return max(1, channels // reduction)


class ChannelAttention(Module):
    """Squeeze-and-excitation: avg-pool, bottleneck MLP, sigmoid channel scaling."""

    def __init__(self, channels, reduction=16, rng=None, dtype=np.float64):
        hidden = bottleneck_width(channels, reduction)
        self.fc1 = Linear(channels, hidden, rng=rng, dtype=dtype)
        self.act = Activation("relu")
        self.fc2 = Linear(hidden, channels, rng=rng, dtype=dtype)
        self._cache = None

    def weights(self, x):
        pooled = x.mean(axis=(2, 3))
        return sigmoid(self.fc2.forward(self.act.forward(self.fc1.forward(pooled))))

    def forward(self, x):
        s = self.weights(x)
        self._cache = (x, s)
        return x * s[:, :, None, None]

    def backward(self, dout):
        x, s = self._cache
        ds = (dout * x).sum(axis=(2, 3))
        dlogit = ds * s * (1 - s)
        dpooled = self.fc1.backward(self.act.backward(self.fc2.backward(dlogit)))
        h, w = x.shape[2:]
        return dout * s[:, :, None, None] + dpooled[:, :, None, None] / (h * w)


class SpatialAttention(Module):
    """Channel-mean and channel-max maps, k×k conv, sigmoid pixel scaling."""

    def __init__(self, k=7, rng=None, dtype=np.float64):
        self.conv = Conv2d(2, 1, k, rng=rng, dtype=dtype)
        self._cache = None

    def forward(self, x):
        idx = np.argmax(x, axis=1)[:, None]  # first maximum along channels
        stats = np.concatenate([x.mean(axis=1, keepdims=True),
                                np.take_along_axis(x, idx, axis=1)], axis=1)
        a = sigmoid(self.conv.forward(stats))
        self._cache = (x, idx, a)
        return x * a

    def backward(self, dout):
        x, idx, a = self._cache
        da = (dout * x).sum(axis=1, keepdims=True)
        dstats = self.conv.backward(da * a * (1 - a))
        dx = dout * a + dstats[:, :1] / x.shape[1]
        np.put_along_axis(dx, idx, np.take_along_axis(dx, idx, axis=1) + dstats[:, 1:], axis=1)
        return dx


class GatingNetwork(Module):
    """Two 3×3 convs on ``concat(a, b)`` ending in a 2-way per-pixel softmax."""

    def __init__(self, channels, width=16, rng=None, dtype=np.float64):
        self.conv1 = Conv2d(2 * channels, width, 3, rng=rng, dtype=dtype)
        self.act = Activation("leaky-relu")
        self.conv2 = Conv2d(width, 2, 3, rng=rng, dtype=dtype)
        self.softmax = SoftmaxChannels()
        self._channels = channels

    def forward(self, a, b):
        h = self.act.forward(self.conv1.forward(np.concatenate([a, b], axis=1)))
        return self.softmax.forward(self.conv2.forward(h))

    def backward(self, dw):
        d = self.conv1.backward(self.act.backward(self.conv2.backward(self.softmax.backward(dw))))
        return d[:, :self._channels], d[:, self._channels:]


class ASFF(Module):
    """Gated residual aggregation of rectified and attention-refined features."""

    def __init__(self, channels, reduction=16, gate_width=16, spatial_kernel=7,
                 rng=None, dtype=np.float64):
        self.channel_att = ChannelAttention(channels, reduction, rng=rng, dtype=dtype)
        self.spatial_att = SpatialAttention(spatial_kernel, rng=rng, dtype=dtype)
        self.gate = GatingNetwork(channels, gate_width, rng=rng, dtype=dtype)
        self.gamma_res = Param(np.zeros(1, dtype=dtype))
        self._cache = None

    def forward(self, f_rect, gates=None):
        """``gates`` optionally forces ``(w1, w2)``; they then get no gradient."""
        f_sa = self.spatial_att.forward(self.channel_att.forward(f_rect))
        if gates is None:
            w = self.gate.forward(f_rect, f_sa)
            w1, w2 = w[:, :1], w[:, 1:]
        else:
            w1, w2 = (np.broadcast_to(np.asarray(g, dtype=f_rect.dtype), f_rect[:, :1].shape)
                      for g in gates)
        g = self.gamma_res.value[0]
        self._cache = (f_rect, f_sa, w1, w2, gates is None)
        self.last = {"f_sa": f_sa, "w1": w1, "w2": w2}
        return w1 * f_rect + w2 * f_sa + g * f_rect

    def backward(self, dz):
        f_rect, f_sa, w1, w2, learned = self._cache
        g = self.gamma_res.value[0]
        self.gamma_res.grad[0] += np.sum(dz * f_rect)
        d_rect = dz * (w1 + g)
        d_sa = dz * w2
        if learned:
            dw = np.concatenate([(dz * f_rect).sum(axis=1, keepdims=True),
                                 (dz * f_sa).sum(axis=1, keepdims=True)], axis=1)
            gr, gs = self.gate.backward(dw)
            d_rect = d_rect + gr
            d_sa = d_sa + gs
        d_rect = d_rect + self.channel_att.backward(self.spatial_att.backward(d_sa))
        return d_rect


def upsample_triplet(triplet):
    """Bicubic upsampling of each modality by the triplet's scale factor."""
    h, w = triplet.x.shape[-2:]
    f = triplet.scale
    return tuple(resize(m, h * f, w * f) for m in (triplet.x, triplet.y, triplet.s))


def build_raw_frequency_map(x_up, y_up, s_up, J=1):
    """Concatenate the packed wavelet spectra of the three modalities (order x, y, s).

    Returns ``(F_raw, manifests)``; ``F_raw`` lives on the ``H/2 × W/2`` grid.
    """
    blocks, manifests = [], []
    for m in (x_up, y_up, s_up):
        spec = wavelet.pack_spectrum(wavelet.dwt_multi(m, J))
        blocks.append(spec.data)
        manifests.append((spec.manifest, spec.channels))
    return np.concatenate(blocks, axis=-3), manifests


def raw_channels(c_s=1, J=1):
    return (1 + 3 * J) * (2 + c_s)


class Conditioner(Module):
    """Maps a batch of low-resolution triplets to the conditioning map ``z``.

    Inputs to :meth:`forward` are ``[N, 1, h, w]``, ``[N, 1, h, w]`` and
    ``[N, c_s, h, w]``; the output is ``[N, out_channels, h*scale, w*scale]``.
    """

    def __init__(self, scale=2, J=1, c_s=1, c_f=32, rect_width=32, reduction=16,
                 gate_width=16, mode="full", rng=None, dtype=np.float64):
        if mode not in MODES:
            raise ValueError(f"unknown conditioning mode {mode!r}")
        self.scale, self.J, self.c_s, self.mode = scale, J, c_s, mode
        self.dtype = dtype
        c_raw = raw_channels(c_s, J)
        if mode == "pixel":
            self.out_channels = 2 + c_s
        elif mode == "wavelet":
            self.out_channels = c_raw
        elif mode == "wavelet_asff":
            self.out_channels = c_raw
            self.asff = ASFF(c_raw, reduction, gate_width, rng=rng, dtype=dtype)
        else:
            self.out_channels = c_f
            self.rectifier = Rectifier(c_raw, c_f, rect_width, rng=rng, dtype=dtype)
            self.asff = ASFF(c_f, reduction, gate_width, rng=rng, dtype=dtype)
        self._cache = None

    def forward(self, x, y, s):
        x, y, s = (np.asarray(m, dtype=self.dtype) for m in (x, y, s))
        h, w = x.shape[-2:]
        H, W = h * self.scale, w * self.scale
        ups = [resize(m, H, W) for m in (x, y, s)]
        self._cache = {"lr_shape": (h, w), "channels": [m.shape[1] for m in (x, y, s)]}
        if self.mode == "pixel":
            return np.concatenate(ups, axis=1)
        f_raw, manifests = build_raw_frequency_map(*ups, J=self.J)
        self._cache["manifests"] = manifests
        feats = {"f_raw": f_raw}
        f = f_raw
        if self.mode == "full":
            f = self.rectifier.forward(f)
            feats["f_rect"] = f
        if self.mode in ("full", "wavelet_asff"):
            f = self.asff.forward(f)
            feats.update(self.asff.last)
        feats["z_half"] = f
        self.features = feats
        return resize(f, H, W, "linear")

    def backward(self, dz):
        """Accumulates parameter gradients; returns gradients of the LR inputs."""
        h, w = self._cache["lr_shape"]
        if self.mode == "pixel":
            d_ups = np.split(dz, np.cumsum(self._cache["channels"])[:-1], axis=1)
        else:
            hh, ww = dz.shape[-2] // 2, dz.shape[-1] // 2
            d = resize_adjoint(dz, hh, ww, "linear")
            if self.mode in ("full", "wavelet_asff"):
                d = self.asff.backward(d)
            if self.mode == "full":
                d = self.rectifier.backward(d)
            d_ups = []
            start = 0
            for manifest, c in self._cache["manifests"]:
                n = len(manifest) * c
                pyr = wavelet.pack_spectrum_adjoint(d[:, start:start + n], manifest, c)
                d_ups.append(wavelet.dwt_multi_adjoint(pyr))
                start += n
        return tuple(resize_adjoint(g, h, w) for g in d_ups)


def condition(triplet, conditioner):
    """Conditioning map ``[C_z, H, W]`` for a single :class:`ModalityTriplet`."""
    if triplet.scale != conditioner.scale:
        raise ValueError(f"triplet scale {triplet.scale} != conditioner scale {conditioner.scale}")
    return conditioner.forward(triplet.x[None], triplet.y[None], triplet.s[None])[0]


__all__ = [
    "ASFF", "ChannelAttention", "Conditioner", "GatingNetwork", "ModalityTriplet",
    "Rectifier", "SpatialAttention", "build_raw_frequency_map", "condition",
    "raw_channels", "upsample_triplet",
]
