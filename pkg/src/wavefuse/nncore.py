"""Small set of differentiable layers with explicit forward/backward.

Arrays are plain numpy arrays laid out ``[N, C, H, W]`` for image-like data.
Every layer caches what it needs during ``forward`` and consumes it in
``backward``; ``backward`` returns the input gradient and accumulates
parameter gradients into ``Param.grad``.
"""
from dataclasses import dataclass, field

import numpy as np

from . import kernels


class DivergenceError(FloatingPointError):
    """Raised when a loss or gradient becomes non-finite."""


def make_rng(seed):
    """Counter-based generator; same seed and call sequence give the same stream."""
    return np.random.Generator(np.random.Philox(int(seed)))


def check_finite(arr, what="tensor"):
    if not np.all(np.isfinite(arr)):
        raise DivergenceError(f"non-finite values in {what}")
    return arr


@dataclass
class Param:
    value: np.ndarray
    name: str = ""
    grad: np.ndarray = field(default=None, repr=False)

    def __post_init__(self):
        if self.grad is None:
            self.grad = np.zeros_like(self.value)

    def zero_grad(self):
        self.grad[...] = 0


class Module:
    """Base class collecting parameters from attributes in definition order."""

    def named_params(self, prefix=""):
        for key, val in self.__dict__.items():
            if key.startswith("_"):
                continue
            if isinstance(val, Param):
                yield prefix + key, val
            elif isinstance(val, Module):
                yield from val.named_params(prefix + key + ".")
            elif isinstance(val, (list, tuple)):
                for i, item in enumerate(val):
                    if isinstance(item, Module):
                        yield from item.named_params(f"{prefix}{key}.{i}.")
                    elif isinstance(item, Param):
                        yield f"{prefix}{key}.{i}", item

    def params(self):
        return [p for _, p in self.named_params()]

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)


def _uniform_init(rng, shape, fan_in, dtype):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    """Zero-padded 'same' cross-correlation (stride 2 halves the extents)."""

    def __init__(self, c_in, c_out, k=3, stride=1, rng=None, dtype=np.float64, init="he"):
        if k % 2 == 0:
            raise ValueError(f"kernel size must be odd, got {k}")
        self.k, self.stride, self.pad = k, stride, k // 2
        shape = (c_out, c_in, k, k)
        if init == "zero":
            w = np.zeros(shape, dtype=dtype)
        else:
            w = _uniform_init(rng, shape, c_in * k * k, dtype)
        self.weight = Param(w)
        self.bias = Param(np.zeros(c_out, dtype=dtype))
        self._cache = None

    def forward(self, x):
        return self._forward(x)

    def _forward(self, x):
        w = self.weight.value
        c_out, c_in = w.shape[:2]
        if x.ndim != 4 or x.shape[1] != c_in:
            raise ValueError(f"conv expects [N,{c_in},H,W], got {x.shape}")
        x = np.ascontiguousarray(x, dtype=w.dtype)
        n, _, h, wd = x.shape
        out_h = (h + 2 * self.pad - self.k) // self.stride + 1
        out_w = (wd + 2 * self.pad - self.k) // self.stride + 1
        cols = kernels.im2col(x, self.k, self.stride, self.pad)
        out = w.reshape(c_out, -1) @ cols
        out += self.bias.value[:, None]
        self._cache = (cols, x.shape)
        return out.reshape(c_out, n, out_h, out_w).transpose(1, 0, 2, 3)

    def backward(self, dout):
        cols, in_shape = self._cache
        w = self.weight.value
        c_out = w.shape[0]
        d = np.ascontiguousarray(dout.transpose(1, 0, 2, 3), dtype=w.dtype).reshape(c_out, -1)
        self.weight.grad += (d @ cols.T).reshape(w.shape)
        self.bias.grad += d.sum(axis=1)
        dcols = w.reshape(c_out, -1).T @ d
        return kernels.col2im(dcols, in_shape, self.k, self.stride, self.pad)


class Linear(Module):
    def __init__(self, n_in, n_out, rng=None, dtype=np.float64, init="he"):
        if init == "zero":
            w = np.zeros((n_out, n_in), dtype=dtype)
        else:
            w = _uniform_init(rng, (n_out, n_in), n_in, dtype)
        self.weight = Param(w)
        self.bias = Param(np.zeros(n_out, dtype=dtype))
        self._x = None

    def forward(self, x):
        if x.shape[-1] != self.weight.value.shape[1]:
            raise ValueError(f"linear expects last dim {self.weight.value.shape[1]}, got {x.shape}")
        self._x = x
        return x @ self.weight.value.T + self.bias.value

    def backward(self, dout):
        x2 = self._x.reshape(-1, self._x.shape[-1])
        d2 = dout.reshape(-1, dout.shape[-1])
        self.weight.grad += d2.T @ x2
        self.bias.grad += d2.sum(axis=0)
        return dout @ self.weight.value


def sigmoid(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Activation(Module):
    """Elementwise nonlinearity: ``relu``, ``sigmoid`` or ``leaky-relu`` (slope 0.2)."""

    KINDS = ("relu", "sigmoid", "leaky-relu")

    def __init__(self, kind="leaky-relu", slope=0.2):
        if kind not in self.KINDS:
            raise ValueError(f"unknown activation {kind!r}")
        self.kind, self.slope = kind, slope
        self._cache = None

    def forward(self, x):
        if self.kind == "sigmoid":
            y = sigmoid(x)
            self._cache = y
            return y
        if self.kind == "relu":
            mask = x > 0
            self._cache = mask
            return np.where(mask, x, 0.0).astype(x.dtype, copy=False)
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, self.slope * x).astype(x.dtype, copy=False)

    def backward(self, dout):
        if self.kind == "sigmoid":
            y = self._cache
            return dout * y * (1 - y)
        mask = self._cache
        if self.kind == "relu":
            return np.where(mask, dout, 0.0).astype(dout.dtype, copy=False)
        return np.where(mask, dout, self.slope * dout).astype(dout.dtype, copy=False)


def activation(x, kind):
    return Activation(kind).forward(x)


class GlobalPool(Module):
    """Per-channel average or max over the spatial extent, ``[N,C,H,W] -> [N,C,1,1]``."""

    def __init__(self, kind="avg"):
        if kind not in ("avg", "max"):
            raise ValueError(f"unknown pooling {kind!r}")
        self.kind = kind
        self._cache = None

    def forward(self, x):
        n, c, h, w = x.shape
        flat = x.reshape(n, c, h * w)
        if self.kind == "avg":
            self._cache = x.shape
            return flat.mean(axis=2).reshape(n, c, 1, 1)
        idx = np.argmax(flat, axis=2)  # first maximum in row-major scan order
        self._cache = (x.shape, idx)
        return np.take_along_axis(flat, idx[..., None], axis=2).reshape(n, c, 1, 1)

    def backward(self, dout):
        if self.kind == "avg":
            n, c, h, w = self._cache
            return np.broadcast_to(dout / (h * w), (n, c, h, w)).copy()
        (n, c, h, w), idx = self._cache
        dx = np.zeros((n, c, h * w), dtype=dout.dtype)
        np.put_along_axis(dx, idx[..., None], dout.reshape(n, c, 1), axis=2)
        return dx.reshape(n, c, h, w)


def global_pool(x, kind):
    return GlobalPool(kind).forward(x)


class SoftmaxChannels(Module):
    """Softmax across axis 1, independently at every pixel."""

    def __init__(self):
        self._y = None

    def forward(self, x):
        z = x - x.max(axis=1, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=1, keepdims=True)
        self._y = y
        return y

    def backward(self, dout):
        y = self._y
        return y * (dout - (dout * y).sum(axis=1, keepdims=True))


def softmax_channels(x):
    return SoftmaxChannels().forward(x)


def upsample_nearest2x(x):
    return x.repeat(2, axis=2).repeat(2, axis=3)


def upsample_nearest2x_backward(dout):
    n, c, h, w = dout.shape
    return dout.reshape(n, c, h // 2, 2, w // 2, 2).sum(axis=(3, 5))


@dataclass
class OptimState:
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(named_params, state):
    """One AdamW update in place; weight decay is applied to the value directly.

    ``named_params`` is an iterable of ``(name, Param)``. Raises
    :class:`DivergenceError` without touching anything if a gradient is
    non-finite.
    """
    named_params = list(named_params)
    for name, p in named_params:
        check_finite(p.grad, f"gradient of {name}")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for name, p in named_params:
        if name not in state.m:
            state.m[name] = np.zeros_like(p.value)
            state.v[name] = np.zeros_like(p.value)
        m, v = state.m[name], state.v[name]
        g = p.grad
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        if state.weight_decay:
            p.value *= 1 - state.lr * state.weight_decay
        m_hat = m / bc1
        v_hat = v / bc2
        p.value -= (state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.value.dtype)


class Lambda(Module):
    """Adapter turning a (forward, backward) function pair into a module."""

    def __init__(self, forward, backward):
        self._fwd, self._bwd = forward, backward

    def forward(self, *xs):
        return self._fwd(*xs)

    def backward(self, dout):
        return self._bwd(dout)


def finite_diff_check(op, inputs, h=1e-5, *, seed=0, max_entries=200, check_params=True):
    """Largest relative error between analytic and central-difference gradients.

    ``op`` exposes ``forward(*inputs)`` and ``backward(dout)``; the latter
    returns the gradient of one input or a tuple of them. The output is
    reduced to a scalar through a fixed random projection. Parameters of
    ``op`` (if it is a :class:`Module`) are checked as well. At most
    ``max_entries`` randomly chosen entries per array are perturbed.

    The error of one array is ``max|num - ana| / max(max|num|, max|ana|)``.
    """
    rng = np.random.default_rng(seed)
    inputs = [np.array(x, dtype=np.float64) for x in inputs]
    out = op.forward(*inputs)
    proj = rng.standard_normal(np.shape(out))
    params = op.params() if (check_params and isinstance(op, Module)) else []
    for p in params:
        p.zero_grad()
    grads = op.backward(proj)
    if not isinstance(grads, (tuple, list)):
        grads = (grads,)
    targets = [(x, np.array(g, dtype=np.float64)) for x, g in zip(inputs, grads) if g is not None]
    targets += [(p.value, p.grad.copy()) for p in params]

    def objective():
        return float(np.sum(proj * op.forward(*inputs)))

    worst = 0.0
    for arr, ana in targets:
        flat = arr.reshape(-1)
        ana_flat = ana.reshape(-1)
        n = flat.size
        idx = np.arange(n) if n <= max_entries else rng.choice(n, max_entries, replace=False)
        num = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = objective()
            flat[i] = orig - h
            f_minus = objective()
            flat[i] = orig
            num[j] = (f_plus - f_minus) / (2 * h)
        a = ana_flat[idx]
        scale = max(np.abs(num).max(), np.abs(a).max(), 1e-300)
        worst = max(worst, float(np.abs(num - a).max() / scale))
    return worst
