"""Orthonormal Haar 2-D wavelet transform.

For each 2×2 block ``[[a, b], [c, d]]``::

    LL = (a + b + c + d) / 2
    H  = (a - b + c - d) / 2     horizontal-frequency detail (row high-pass)
    V  = (a + b - c - d) / 2     vertical-frequency detail (column high-pass)
    D  = (a - b - c + d) / 2

The transform is orthonormal, so it preserves energy and its adjoint is its
inverse. All functions accept arrays shaped ``[..., H, W]``.
"""
from dataclasses import dataclass, field

import numpy as np

DETAIL_BANDS = ("V", "H", "D")


@dataclass
class SubbandSet:
    LL: np.ndarray
    V: np.ndarray
    H: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        shapes = {self.LL.shape, self.V.shape, self.H.shape, self.D.shape}
        if len(shapes) != 1:
            raise ValueError(f"sub-bands disagree in shape: {sorted(shapes)}")


@dataclass
class WaveletPyramid:
    """Detail triples for levels 1 (finest) .. J (coarsest) plus the level-J LL."""

    levels: list
    top_ll: np.ndarray

    @property
    def J(self):
        return len(self.levels)

    def bands(self):
        """``(name, level, array)`` in packing order: top LL, then levels J..1 as V, H, D."""
        out = [("LL", self.J, self.top_ll)]
        for j in range(self.J, 0, -1):
            v, h, d = self.levels[j - 1]
            out += [("V", j, v), ("H", j, h), ("D", j, d)]
        return out


def _check_even(image):
    h, w = image.shape[-2:]
    if h % 2 or w % 2:
        raise ValueError(f"Haar DWT needs even extents, got {h}x{w}")


def dwt2(image):
    image = np.asarray(image)
    _check_even(image)
    a = image[..., 0::2, 0::2]
    b = image[..., 0::2, 1::2]
    c = image[..., 1::2, 0::2]
    d = image[..., 1::2, 1::2]
    return SubbandSet(
        LL=(a + b + c + d) / 2,
        V=(a + b - c - d) / 2,
        H=(a - b + c - d) / 2,
        D=(a - b - c + d) / 2,
    )


def idwt2(bands):
    ll, v, h, d = bands.LL, bands.V, bands.H, bands.D
    shape = ll.shape[:-2] + (2 * ll.shape[-2], 2 * ll.shape[-1])
    out = np.empty(shape, dtype=np.result_type(ll, v, h, d))
    out[..., 0::2, 0::2] = (ll + v + h + d) / 2
    out[..., 0::2, 1::2] = (ll + v - h - d) / 2
    out[..., 1::2, 0::2] = (ll - v + h - d) / 2
    out[..., 1::2, 1::2] = (ll - v - h + d) / 2
    return out


def dwt_multi(image, J):
    if J < 1:
        raise ValueError("J must be >= 1")
    image = np.asarray(image)
    h, w = image.shape[-2:]
    if h % (2 ** J) or w % (2 ** J):
        raise ValueError(f"{h}x{w} is not divisible by 2**{J}")
    levels = []
    ll = image
    for _ in range(J):
        bands = dwt2(ll)
        levels.append((bands.V, bands.H, bands.D))
        ll = bands.LL
    return WaveletPyramid(levels=levels, top_ll=ll)


def idwt_multi(pyramid):
    ll = pyramid.top_ll
    for j in range(pyramid.J, 0, -1):
        v, h, d = pyramid.levels[j - 1]
        if v.shape != ll.shape:
            raise ValueError(f"level {j} bands {v.shape} do not match approximation {ll.shape}")
        ll = idwt2(SubbandSet(ll, v, h, d))
    return ll


@dataclass
class SpectrumTensor:
    """All pyramid bands stacked on the channel axis at the level-1 grid.

    ``manifest`` holds one ``(band, level, replication)`` record per band in
    channel order; each band occupies ``channels`` consecutive channels.
    Coarse bands are nearest-neighbour replicated by ``replication`` along
    both spatial axes.
    """

    data: np.ndarray
    manifest: list
    channels: int
    J: int = field(default=1)


def pack_spectrum(pyramid):
    """Stack bands as ``[..., (1 + 3J) * C, H/2, W/2]``; the channel axis is -3."""
    blocks, manifest = [], []
    for name, level, band in pyramid.bands():
        rep = 2 ** (level - 1)
        if rep > 1:
            band = band.repeat(rep, axis=-2).repeat(rep, axis=-1)
        blocks.append(band)
        manifest.append((name, level, rep))
    return SpectrumTensor(
        data=np.concatenate(blocks, axis=-3),
        manifest=manifest,
        channels=pyramid.top_ll.shape[-3],
        J=pyramid.J,
    )


def _split_bands(spectrum):
    c = spectrum.channels
    expected = len(spectrum.manifest) * c
    if spectrum.data.shape[-3] != expected or len(spectrum.manifest) != 1 + 3 * spectrum.J:
        raise ValueError("spectrum data does not match its manifest")
    for i, (name, level, rep) in enumerate(spectrum.manifest):
        yield name, level, rep, spectrum.data[..., i * c:(i + 1) * c, :, :]


def unpack_spectrum(spectrum):
    levels = [[None, None, None] for _ in range(spectrum.J)]
    top_ll = None
    for name, level, rep, block in _split_bands(spectrum):
        band = block[..., ::rep, ::rep].copy()
        if name == "LL":
            top_ll = band
        else:
            levels[level - 1][DETAIL_BANDS.index(name)] = band
    return WaveletPyramid(levels=[tuple(lv) for lv in levels], top_ll=top_ll)


def pack_spectrum_adjoint(grad, manifest, channels):
    """Gradient of :func:`pack_spectrum` w.r.t. each band, as a pyramid.

    Replicated bands receive the sum over their replication block.
    """
    J = (len(manifest) - 1) // 3
    spec = SpectrumTensor(data=grad, manifest=manifest, channels=channels, J=J)
    levels = [[None, None, None] for _ in range(J)]
    top_ll = None
    for name, level, rep, block in _split_bands(spec):
        if rep > 1:
            h, w = block.shape[-2:]
            block = block.reshape(block.shape[:-2] + (h // rep, rep, w // rep, rep)).sum(axis=(-3, -1))
        if name == "LL":
            top_ll = block
        else:
            levels[level - 1][DETAIL_BANDS.index(name)] = block
    return WaveletPyramid(levels=[tuple(lv) for lv in levels], top_ll=top_ll)


def dwt_multi_adjoint(pyramid):
    """Adjoint of :func:`dwt_multi`; equal to the inverse since Haar is orthonormal."""
    return idwt_multi(pyramid)


@dataclass
class EnergyTable:
    """Mean squared coefficient per band and the high-frequency energy fraction."""

    rows: list
    hf_fraction: float

    def to_csv(self):
        lines = ["band,level,mean_square,energy"]
        lines += [f"{b},{lv},{ms:.10g},{e:.10g}" for b, lv, ms, e in self.rows]
        lines.append(f"hf_fraction,,{self.hf_fraction:.10g},")
        return "\n".join(lines) + "\n"


def subband_energy(pyramid):
    rows = []
    total = detail = 0.0
    for name, level, band in pyramid.bands():
        energy = float(np.sum(np.square(band, dtype=np.float64)))
        rows.append((name, level, energy / band.size, energy))
        total += energy
        if name != "LL":
            detail += energy
    return EnergyTable(rows=rows, hf_fraction=detail / total if total > 0 else 0.0)
