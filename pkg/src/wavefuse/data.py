"""Synthetic tri-modal phantoms, resampling, degradation, fused targets and splits."""
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .nncore import make_rng

SCALES = (2, 4, 8)


# ---------------------------------------------------------------- resampling

def cubic_kernel(x, a=-0.5):
    """Keys cubic convolution kernel; ``a = -0.5`` is Catmull-Rom."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def linear_kernel(x):
    return np.maximum(0.0, 1.0 - np.abs(np.asarray(x, dtype=np.float64)))


def reflect_index(j, n):
    """Half-sample symmetric extension: ... b a | a b c ... c | c b ..."""
    period = 2 * n
    j = np.mod(j, period)
    return np.where(j < n, j, period - 1 - j)


def resize_matrix(n_in, n_out, kernel="cubic"):
    """Dense ``[n_out, n_in]`` resampling operator with pixel-centre alignment.

    Downsampling stretches the kernel by the reduction factor (antialiasing).
    Rows are normalised to sum to one.
    """
    if n_in < 1 or n_out < 1:
        raise ValueError("extents must be positive")
    kern, support = (cubic_kernel, 2.0) if kernel == "cubic" else (linear_kernel, 1.0)
    scale = n_out / n_in
    stretch = min(scale, 1.0)
    half = support / stretch
    mat = np.zeros((n_out, n_in))
    for i in range(n_out):
        centre = (i + 0.5) / scale - 0.5
        lo = int(np.floor(centre - half)) + 1
        hi = int(np.ceil(centre + half))
        taps = np.arange(lo, hi)
        w = kern((centre - taps) * stretch)
        np.add.at(mat[i], reflect_index(taps, n_in), w)
        mat[i] /= mat[i].sum()
    return mat


_MATRIX_CACHE = {}


def _cached_matrix(n_in, n_out, kernel):
    key = (n_in, n_out, kernel)
    if key not in _MATRIX_CACHE:
        _MATRIX_CACHE[key] = resize_matrix(n_in, n_out, kernel)
    return _MATRIX_CACHE[key]


def resize(image, out_h, out_w, kernel="cubic"):
    """Separable resize of the last two axes."""
    image = np.asarray(image)
    rows = _cached_matrix(image.shape[-2], out_h, kernel).astype(image.dtype, copy=False)
    cols = _cached_matrix(image.shape[-1], out_w, kernel).astype(image.dtype, copy=False)
    return rows @ image @ cols.T


def resize_adjoint(grad, in_h, in_w, kernel="cubic"):
    """Transpose of :func:`resize`, mapping output gradients to the input grid."""
    rows = _cached_matrix(in_h, grad.shape[-2], kernel).astype(grad.dtype, copy=False)
    cols = _cached_matrix(in_w, grad.shape[-1], kernel).astype(grad.dtype, copy=False)
    return rows.T @ grad @ cols


def bicubic_resize(image, out_h, out_w):
    return resize(image, out_h, out_w, "cubic")


# ---------------------------------------------------------------- containers

@dataclass
class ModalityTriplet:
    """Two anatomical scans ``x``, ``y`` (1 channel) and a functional scan ``s``."""

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    scale: int = 2

    def __post_init__(self):
        shapes = {self.x.shape[-2:], self.y.shape[-2:], self.s.shape[-2:]}
        if len(shapes) != 1:
            raise ValueError(f"modalities are not registered: {sorted(shapes)}")
        if self.scale not in SCALES:
            raise ValueError(f"scale must be one of {SCALES}, got {self.scale}")


@dataclass
class TriModalSample:
    lr: ModalityTriplet
    hr: tuple
    target: np.ndarray

    @property
    def scale(self):
        return self.lr.scale


@dataclass
class PhantomSpec:
    size: int = 64
    n_ellipses: tuple = (4, 8)
    intensity_range: tuple = (0.25, 0.85)
    texture_amplitude: float = 0.1
    texture_sigma: float = 0.7
    n_blobs: tuple = (2, 4)
    blob_width: tuple = (0.22, 0.4)
    functional_blur: float = 2.0

    def __post_init__(self):
        if self.size < 8 or self.size & (self.size - 1):
            raise ValueError(f"phantom size must be a power of two >= 8, got {self.size}")
        for lo, hi in (self.n_ellipses, self.intensity_range, self.n_blobs, self.blob_width):
            if not lo < hi:
                raise ValueError("phantom ranges must be non-degenerate")


# ---------------------------------------------------------------- phantoms

def _ellipse_mask(yy, xx, cy, cx, ry, rx, theta):
    c, s = np.cos(theta), np.sin(theta)
    u = (xx - cx) * c + (yy - cy) * s
    v = -(xx - cx) * s + (yy - cy) * c
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _texture(rng, size, sigma, amplitude):
    field_ = ndimage.gaussian_filter(rng.standard_normal((size, size)), sigma, mode="wrap")
    return amplitude * field_ / field_.std()


def generate_phantom(spec, seed):
    """Return registered ``(anatomical_a, anatomical_b, functional)``, each ``[1, S, S]``.

    The anatomical images are piecewise-constant ellipse maps with fine
    texture; the functional image is a few blurred Gaussian blobs inside the
    head support, so it carries far less high-frequency energy.
    """
    rng = make_rng(seed)
    n = spec.size
    coords = (np.arange(n) + 0.5) / n * 2 - 1
    yy, xx = np.meshgrid(coords, coords, indexing="ij")

    head_ry, head_rx = rng.uniform(0.82, 0.94), rng.uniform(0.68, 0.82)
    labels = np.zeros((n, n), dtype=np.int64)
    labels[_ellipse_mask(yy, xx, 0.0, 0.0, head_ry, head_rx, 0.0)] = 1
    k = int(rng.integers(spec.n_ellipses[0], spec.n_ellipses[1] + 1))
    for i in range(k):
        cy, cx = rng.uniform(-0.5, 0.5) * head_ry, rng.uniform(-0.5, 0.5) * head_rx
        ry, rx = rng.uniform(0.1, 0.4), rng.uniform(0.1, 0.4)
        labels[_ellipse_mask(yy, xx, cy, cx, ry, rx, rng.uniform(0, np.pi)) & (labels > 0)] = i + 2
    lo, hi = spec.intensity_range
    inten_a = np.concatenate([[0.0], rng.uniform(lo, hi, size=k + 1)])
    inten_b = np.concatenate([[0.0], rng.uniform(lo, hi, size=k + 1)])
    support = labels > 0

    tex_a = _texture(rng, n, spec.texture_sigma, spec.texture_amplitude)
    tex_b = _texture(rng, n, spec.texture_sigma, spec.texture_amplitude)
    anat_a = np.clip(inten_a[labels] + tex_a * support, 0.0, 1.0)
    anat_b = np.clip(inten_b[labels] + tex_b * support, 0.0, 1.0)

    func = np.zeros((n, n))
    m = int(rng.integers(spec.n_blobs[0], spec.n_blobs[1] + 1))
    for _ in range(m):
        r = 0.6 * np.sqrt(rng.uniform())
        phi = rng.uniform(0, 2 * np.pi)
        cy, cx = r * head_ry * np.sin(phi), r * head_rx * np.cos(phi)
        width = rng.uniform(*spec.blob_width)
        amp = rng.uniform(0.5, 1.0)
        func += amp * np.exp(-((yy - cy) ** 2 + (xx - cx) ** 2) / (2 * width ** 2))
    func = ndimage.gaussian_filter(func, max(spec.functional_blur * n / 64, 1.5), mode="nearest")
    # rescale instead of clipping: a saturated plateau would add edges
    func *= rng.uniform(0.7, 0.95) / func.max()
    return anat_a[None], anat_b[None], func[None]


def hot_colormap(f):
    """Black-red-yellow-white ramp, ``[..., H, W] -> [..., 3, H, W]``; hot(1) = white."""
    f = np.asarray(f, dtype=np.float64)
    return np.stack([np.clip(3 * f, 0, 1), np.clip(3 * f - 1, 0, 1), np.clip(3 * f - 2, 0, 1)], axis=-3)


FUSION_LIPSCHITZ = 6.0


def fuse_ground_truth(anat_a, anat_b, functional):
    """Analytic fused target ``[3, H, W]``.

    ``target = (1 - f) * max(a, b) + f * hot(f)`` with ``f`` the functional
    intensity acting as opacity and the anatomy replicated to three
    channels. The map is Lipschitz with constant :data:`FUSION_LIPSCHITZ`
    in the sup norm.
    """
    a, b, f = (np.asarray(v, dtype=np.float64) for v in (anat_a, anat_b, functional))
    if not a.shape == b.shape == f.shape:
        raise ValueError(f"shape mismatch: {a.shape} {b.shape} {f.shape}")
    if a.ndim == 3:
        a, b, f = a[0], b[0], f[0]
    lum = np.maximum(a, b)
    out = (1 - f) * lum[None] + f * hot_colormap(f)
    return np.clip(out, 0.0, 1.0)


def degrade(hr, scale):
    """Bicubic (antialiased) downsampling of each modality by ``scale``."""
    if scale not in SCALES:
        raise ValueError(f"scale must be one of {SCALES}, got {scale}")
    out = []
    for img in hr:
        h, w = img.shape[-2:]
        if h % scale or w % scale:
            raise ValueError(f"{h}x{w} not divisible by scale {scale}")
        out.append(np.clip(bicubic_resize(img, h // scale, w // scale), 0.0, 1.0))
    return ModalityTriplet(*out, scale=scale)


def make_sample(spec, seed, scale):
    hr = generate_phantom(spec, seed)
    return TriModalSample(lr=degrade(hr, scale), hr=hr, target=fuse_ground_truth(*hr))


def quantize(img):
    """8-bit round trip, matching what PGM/PPM storage does."""
    return np.round(np.asarray(img) * 255.0) / 255.0


# ---------------------------------------------------------------- splits

SPLITS = ("train", "val", "test")
DEFAULT_FRACTIONS = (0.702, 0.087, 0.211)


@dataclass
class DatasetManifest:
    records: list = field(default_factory=list)
    seed: int = 0

    def paths(self, split):
        return [p for p, s in self.records if s == split]

    def counts(self):
        return tuple(len(self.paths(s)) for s in SPLITS)

    def to_text(self):
        return "".join(f"{p} {s}\n" for p, s in self.records)

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(f"# seed {self.seed}\n")
            fh.write(self.to_text())

    @classmethod
    def load(cls, path):
        records, seed = [], 0
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    parts = line[1:].split()
                    if len(parts) == 2 and parts[0] == "seed":
                        seed = int(parts[1])
                    continue
                parts = line.rsplit(" ", 1)
                if len(parts) != 2 or parts[1] not in SPLITS:
                    raise ValueError(f"bad manifest line: {line!r}")
                records.append((parts[0], parts[1]))
        return cls(records=records, seed=seed)


def split_counts(n, fractions):
    if len(fractions) != 3 or abs(sum(fractions) - 1.0) > 1e-6:
        raise ValueError(f"fractions must be three values summing to 1: {fractions}")
    # rounded counts, at least one item per non-empty fraction, remainder to train
    n_val = max(int(round(fractions[1] * n)), 1 if fractions[1] > 0 else 0)
    n_test = max(int(round(fractions[2] * n)), 1 if fractions[2] > 0 else 0)
    n_train = n - n_val - n_test
    counts = (n_train, n_val, n_test)
    for c, f, name in zip(counts, fractions, SPLITS):
        if f > 0 and c < 1:
            raise ValueError(f"{name} split would be empty for n={n}")
    return counts


def make_split(n, fractions=DEFAULT_FRACTIONS, seed=0, names=None):
    counts = split_counts(n, fractions)
    names = list(names) if names is not None else [f"sample_{i:04d}" for i in range(n)]
    order = make_rng(seed).permutation(n)
    tags = [None] * n
    start = 0
    for tag, c in zip(SPLITS, counts):
        for i in order[start:start + c]:
            tags[i] = tag
        start += c
    return DatasetManifest(records=list(zip(names, tags)), seed=seed)


# ---------------------------------------------------------------- on-disk layout

HR_FILES = ("hr_a.pgm", "hr_b.pgm", "hr_f.pgm")
LR_FILES = ("lr_a.pgm", "lr_b.pgm", "lr_f.pgm")
TARGET_FILE = "target.ppm"


def write_sample(directory, sample):
    from .netpbm import write_image

    os.makedirs(directory, exist_ok=True)
    for name, img in zip(HR_FILES, sample.hr):
        write_image(os.path.join(directory, name), img)
    for name, img in zip(LR_FILES, (sample.lr.x, sample.lr.y, sample.lr.s)):
        write_image(os.path.join(directory, name), img)
    write_image(os.path.join(directory, TARGET_FILE), sample.target)


def read_sample(directory, scale):
    from .netpbm import read_image

    lr = [read_image(os.path.join(directory, n)) for n in LR_FILES]
    hr = tuple(read_image(os.path.join(directory, n)) for n in HR_FILES)
    target = read_image(os.path.join(directory, TARGET_FILE))
    return TriModalSample(lr=ModalityTriplet(*lr, scale=scale), hr=hr, target=target)
