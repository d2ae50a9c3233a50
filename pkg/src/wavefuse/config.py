"""Run configuration stored as a flat ``key = value`` text file."""
import dataclasses
from dataclasses import dataclass, fields

from .conditioning import MODES
from .data import SCALES


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # task
    scale: int = 2
    hr_size: int = 256
    c_s: int = 1
    # diffusion
    T: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    variance: str = "beta"
    loss: str = "l2"
    # conditioning branch
    conditioning: str = "full"
    J: int = 1
    c_f: int = 32
    rect_width: int = 32
    reduction: int = 16
    gate_width: int = 16
    # denoiser
    unet_width: int = 32
    unet_depth: int = 2
    embed_dim: int = 64
    # optimisation
    lr: float = 1e-5
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 0.01
    batch_size: int = 4
    steps: int = 10000
    dtype: str = "float32"
    # cadence
    log_every: int = 100
    val_every: int = 500
    ckpt_every: int = 500
    val_repeats: int = 4
    # data
    n_samples: int = 104
    val_fraction: float = 0.087
    test_fraction: float = 0.211
    seed: int = 0
    # paths
    data_dir: str = "data"
    checkpoint_dir: str = "checkpoints"
    report_dir: str = "reports"

    def validate(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.scale in SCALES, f"scale must be one of {SCALES}")
        need(self.hr_size >= 16 and self.hr_size & (self.hr_size - 1) == 0,
             "hr_size must be a power of two >= 16")
        need(self.hr_size // self.scale >= 2, "hr_size too small for scale")
        need(self.c_s in (1, 3), "c_s must be 1 or 3")
        need(self.T >= 1, "T must be >= 1")
        need(0 < self.beta_start <= self.beta_end < 1, "need 0 < beta_start <= beta_end < 1")
        need(self.variance in ("beta", "posterior"), "variance must be beta or posterior")
        need(self.loss in ("l2", "l1"), "loss must be l2 or l1")
        need(self.conditioning in MODES, f"conditioning must be one of {MODES}")
        need(1 <= self.J and (self.hr_size // 2 ** self.J) >= 1, "J out of range")
        for name in ("c_f", "rect_width", "reduction", "gate_width", "unet_width", "unet_depth",
                     "embed_dim", "batch_size", "steps", "log_every", "val_every",
                     "ckpt_every", "val_repeats", "n_samples"):
            need(getattr(self, name) >= 1, f"{name} must be >= 1")
        need(self.embed_dim % 2 == 0, "embed_dim must be even")
        need(self.hr_size % 2 ** self.unet_depth == 0, "hr_size not divisible by 2**unet_depth")
        need(self.lr > 0, "lr must be positive")
        need(0 <= self.beta1 < 1 and 0 <= self.beta2 < 1, "Adam betas must be in [0, 1)")
        need(self.weight_decay >= 0, "weight_decay must be >= 0")
        need(self.dtype in ("float32", "float64"), "dtype must be float32 or float64")
        need(0 < self.val_fraction < 1 and 0 < self.test_fraction < 1
             and self.val_fraction + self.test_fraction < 1, "bad split fractions")
        need(self.seed >= 0, "seed must be non-negative")
        return self

    @property
    def fractions(self):
        return (1.0 - self.val_fraction - self.test_fraction, self.val_fraction, self.test_fraction)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes).validate()

    def to_text(self):
        return "".join(f"{f.name} = {getattr(self, f.name)}\n" for f in fields(self))

    def save(self, path):
        with open(path, "w") as fh:
            fh.write(self.to_text())

    @classmethod
    def from_text(cls, text):
        types = {f.name: f.type for f in fields(cls)}
        values = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
            key, val = (p.strip() for p in line.split("=", 1))
            if key not in types:
                raise ConfigError(f"line {lineno}: unknown key {key!r}")
            if key in values:
                raise ConfigError(f"line {lineno}: duplicate key {key!r}")
            typ = {"int": int, "float": float, "str": str}[types[key] if isinstance(types[key], str)
                                                         else types[key].__name__]
            try:
                values[key] = typ(val)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
        return cls(**values).validate()

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_text(fh.read())


def desk_profile(**overrides):
    """CPU-sized settings: 32×32 targets, T=50, short training."""
    base = RunConfig(
        hr_size=32, T=50, unet_width=16, unet_depth=2, steps=2000, batch_size=4,
        lr=2e-3, weight_decay=0.0, n_samples=48, log_every=100, val_every=500,
        ckpt_every=500,
    )
    return base.replace(**overrides)


PROFILES = {"paper": lambda **kw: RunConfig().replace(**kw), "desk": desk_profile}
