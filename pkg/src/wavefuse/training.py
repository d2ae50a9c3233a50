"""Training loop, held-out loss and evaluation shared by the CLI and the tests."""
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from . import data
from .checkpoint import load_into, read_checkpoint, rng_from_json, save_checkpoint
from .diffusion import make_schedule
from .metrics import MetricReport
from .model import FusionModel
from .nncore import DivergenceError, OptimState, adamw_step, make_rng

log = logging.getLogger(__name__)

# offsets that keep the auxiliary random streams apart from the training stream
_VAL_STREAM = 7_919
_SAMPLE_STREAM = 104_729


@dataclass
class ArrayDataset:
    """Stacked arrays: ``x, y`` are ``[M, 1, h, w]``, ``s`` is ``[M, c_s, h, w]``, ``target`` ``[M, 3, H, W]``."""

    x: np.ndarray
    y: np.ndarray
    s: np.ndarray
    target: np.ndarray
    names: list = field(default_factory=list)

    def __len__(self):
        return len(self.x)

    def batch(self, idx):
        return self.x[idx], self.y[idx], self.s[idx], self.target[idx]

    @classmethod
    def from_samples(cls, samples, names=None):
        return cls(
            x=np.stack([s.lr.x for s in samples]),
            y=np.stack([s.lr.y for s in samples]),
            s=np.stack([s.lr.s for s in samples]),
            target=np.stack([s.target for s in samples]),
            names=list(names) if names is not None else [str(i) for i in range(len(samples))],
        )


def synthetic_splits(cfg, quantized=True):
    """In-memory train/val/test sets generated exactly like ``gen-data`` would."""
    manifest = data.make_split(cfg.n_samples, cfg.fractions, seed=cfg.seed)
    spec = data.PhantomSpec(size=cfg.hr_size)
    out = {}
    for split in data.SPLITS:
        names = manifest.paths(split)
        samples = []
        for name in names:
            smp = data.make_sample(spec, sample_seed(cfg.seed, name), cfg.scale)
            if quantized:
                smp = _quantize_sample(smp)
            samples.append(smp)
        out[split] = ArrayDataset.from_samples(samples, names)
    return out


def sample_seed(seed, name):
    return seed * 1_000_003 + int(name.rsplit("_", 1)[-1])


def _quantize_sample(smp):
    q = data.quantize
    lr = data.ModalityTriplet(q(smp.lr.x), q(smp.lr.y), q(smp.lr.s), scale=smp.lr.scale)
    return data.TriModalSample(lr=lr, hr=tuple(q(h) for h in smp.hr), target=q(smp.target))


def load_split(data_dir, split, scale):
    manifest = data.DatasetManifest.load(os.path.join(data_dir, "manifest.txt"))
    names = manifest.paths(split)
    if not names:
        raise ValueError(f"split {split!r} is empty")
    samples = [data.read_sample(os.path.join(data_dir, n), scale) for n in names]
    return ArrayDataset.from_samples(samples, names)


def held_out_loss(model, dataset, schedule, seed, repeats=4, loss="l2", batch_size=8):
    """Noise-prediction loss on fixed (t, eps) draws, identical for any model."""
    rng = make_rng(seed + _VAL_STREAM)
    total, count = 0.0, 0
    H, W = dataset.target.shape[-2:]
    for _ in range(repeats):
        for start in range(0, len(dataset), batch_size):
            idx = np.arange(start, min(start + batch_size, len(dataset)))
            t = rng.integers(1, schedule.T + 1, size=len(idx))
            eps = rng.standard_normal((len(idx), 3, H, W))
            total += model.loss_at(dataset.batch(idx), t, eps, schedule, loss=loss) * len(idx)
            count += len(idx)
    return total / count


@dataclass
class TrainState:
    model: FusionModel
    optim: OptimState
    rng: np.random.Generator
    step: int = 0
    best_val: float = float("inf")
    window: list = field(default_factory=list)


def new_state(cfg):
    model = FusionModel.from_config(cfg)
    optim = OptimState(lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2, eps=cfg.adam_eps,
                       weight_decay=cfg.weight_decay)
    return TrainState(model=model, optim=optim, rng=make_rng(cfg.seed))


def resume_state(cfg, path):
    ckpt = read_checkpoint(path)
    state = new_state(cfg)
    load_into(ckpt, state.model, state.optim)
    if ckpt["rng"] is not None:
        state.rng = rng_from_json(ckpt["rng"])
    state.step = ckpt["step"]
    state.best_val = ckpt["best_val"]
    state.window = list(ckpt["window"])
    return state


def train(cfg, train_set, val_set=None, state=None, checkpoint_dir=None, log_lines=None,
          steps=None):
    """Run AdamW on the noise-prediction loss until ``steps`` (default ``cfg.steps``).

    Returns ``(state, losses)`` with the per-step training losses of this call.
    ``log_lines`` (a list) receives ``step,train_loss,val_loss`` records every
    ``cfg.log_every`` steps; ``val_loss`` is filled in every ``cfg.val_every``.
    On divergence the last periodic checkpoint is kept and
    :class:`DivergenceError` propagates.
    """
    state = state or new_state(cfg)
    schedule = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    model, optim = state.model, state.optim
    named = list(model.named_params())
    end = cfg.steps if steps is None else steps
    losses = []
    window = state.window
    while state.step < end:
        idx = state.rng.integers(0, len(train_set), size=cfg.batch_size)
        model.zero_grad()
        value = model.loss(train_set.batch(idx), schedule, state.rng, loss=cfg.loss)
        adamw_step(named, optim)
        state.step += 1
        losses.append(value)
        window.append(value)
        if state.step % cfg.log_every == 0:
            val = ""
            if val_set is not None and state.step % cfg.val_every == 0:
                v = held_out_loss(model, val_set, schedule, cfg.seed, cfg.val_repeats, cfg.loss)
                val = f"{v:.8g}"
                if v < state.best_val:
                    state.best_val = v
                    if checkpoint_dir:
                        _save(cfg, state, os.path.join(checkpoint_dir, "best.ckpt"))
            line = f"{state.step},{np.mean(window):.8g},{val}"
            window.clear()
            log.info(line)
            if log_lines is not None:
                log_lines.append(line)
        if checkpoint_dir and state.step % cfg.ckpt_every == 0:
            _save(cfg, state, os.path.join(checkpoint_dir, "last.ckpt"))
    return state, losses


def _save(cfg, state, path):
    save_checkpoint(path, cfg, state.model, state.optim, step=state.step, rng=state.rng,
                    best_val=state.best_val, window=state.window)


def sample_dataset(model, dataset, cfg, seed=None, batch_size=8):
    """Sampled fused outputs ``[M, 3, H, W]`` in [0, 1] for every item of ``dataset``."""
    schedule = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    rng = make_rng((cfg.seed if seed is None else seed) + _SAMPLE_STREAM)
    outs = []
    for start in range(0, len(dataset), batch_size):
        idx = np.arange(start, min(start + batch_size, len(dataset)))
        x, y, s, _ = dataset.batch(idx)
        outs.append(model.sample(x, y, s, schedule, rng, variance=cfg.variance))
    return np.concatenate(outs)


def bicubic_baseline(dataset):
    """Upsampled first anatomical modality replicated to three channels."""
    H, W = dataset.target.shape[-2:]
    up = np.clip(data.bicubic_resize(dataset.x, H, W), 0.0, 1.0)
    return np.repeat(up, 3, axis=1)


def evaluate(preds, dataset):
    report = MetricReport()
    for name, p, t in zip(dataset.names, preds, dataset.target):
        report.add(name, p, t)
    return report


