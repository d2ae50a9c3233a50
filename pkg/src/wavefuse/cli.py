"""Command-line entry point: ``wavefuse <command> [options]``.

Commands: ``gen-data``, ``train``, ``sample``, ``eval``, ``inspect-dwt``.
Exit codes: 0 success, 2 usage, 3 config, 4 data/IO, 5 checkpoint,
6 divergence, 1 anything else.
"""
import argparse
import logging
import os
import sys

import numpy as np

from . import data, training
from .checkpoint import CheckpointError, load_into, read_checkpoint
from .config import PROFILES, ConfigError, RunConfig
from .diffusion import make_schedule
from .metrics import psnr, rmse, ssim
from .model import FusionModel
from .netpbm import NetpbmError, read_image, write_image
from .nncore import DivergenceError, make_rng
from .wavelet import dwt_multi, subband_energy

log = logging.getLogger("wavefuse")

EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_CHECKPOINT, EXIT_DIVERGED = 2, 3, 4, 5, 6


class UsageError(Exception):
    pass


class DataError(ValueError):
    pass


# ---------------------------------------------------------------- config

def resolve_config(args, base=None):
    """Profile or ``--config`` file (or ``base``), then ``--set``, ``--seed``, ``--scale``."""
    if base is not None:
        cfg = base
    elif args.config:
        cfg = RunConfig.load(args.config)
    else:
        cfg = PROFILES[args.profile]()
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, val = (p.strip() for p in item.split("=", 1))
        overrides[key] = val
    if overrides:
        # replace the original lines so duplicates are not reported
        keep = [ln for ln in cfg.to_text().splitlines() if ln.split("=")[0].strip() not in overrides]
        text = "\n".join(keep + [f"{k} = {v}" for k, v in overrides.items()]) + "\n"
        cfg = RunConfig.from_text(text)
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.scale is not None:
        changes["scale"] = args.scale
    return cfg.replace(**changes) if changes else cfg.validate()


def _load_model(path):
    ckpt = read_checkpoint(path)
    model = FusionModel.from_config(ckpt["config"])
    load_into(ckpt, model)
    return ckpt, model


# ---------------------------------------------------------------- commands

def cmd_gen_data(args):
    cfg = resolve_config(args)
    out = args.out or cfg.data_dir
    os.makedirs(out, exist_ok=True)
    manifest = data.make_split(cfg.n_samples, cfg.fractions, seed=cfg.seed)
    spec = data.PhantomSpec(size=cfg.hr_size)
    for name, _ in manifest.records:
        smp = data.make_sample(spec, training.sample_seed(cfg.seed, name), cfg.scale)
        data.write_sample(os.path.join(out, name), smp)
    manifest.save(os.path.join(out, "manifest.txt"))
    cfg.save(os.path.join(out, "config.cfg"))
    train_n, val_n, test_n = manifest.counts()
    print(f"wrote {len(manifest.records)} samples to {out} (train {train_n}, val {val_n}, test {test_n})")


def cmd_train(args):
    if args.checkpoint:
        ckpt = read_checkpoint(args.checkpoint)
        cfg = resolve_config(args, base=ckpt["config"])
        state = training.resume_state(cfg, args.checkpoint)
    else:
        cfg = resolve_config(args)
        state = training.new_state(cfg)
    data_dir = args.data or cfg.data_dir
    train_set = training.load_split(data_dir, "train", cfg.scale)
    val_set = training.load_split(data_dir, "val", cfg.scale)
    _check_extents(train_set, cfg)
    out = args.out or cfg.checkpoint_dir
    os.makedirs(out, exist_ok=True)
    log_path = os.path.join(out, "loss.csv")
    lines = []
    try:
        state, losses = training.train(cfg, train_set, val_set, state=state, checkpoint_dir=out,
                                       log_lines=lines, steps=args.until)
    finally:
        _append_log(log_path, lines, fresh=not args.checkpoint)
    training._save(cfg, state, os.path.join(out, "last.ckpt"))
    if losses:
        print(f"step {state.step}: mean train loss {np.mean(losses[-100:]):.6g} "
              f"(best val {state.best_val:.6g})")
    else:
        print(f"already at step {state.step}")


def _append_log(path, lines, fresh):
    mode = "w" if fresh or not os.path.exists(path) else "a"
    with open(path, mode) as fh:
        if mode == "w":
            fh.write("step,train_loss,val_loss\n")
        for line in lines:
            fh.write(line + "\n")


def _check_extents(dataset, cfg):
    H, W = dataset.target.shape[-2:]
    if (H, W) != (cfg.hr_size, cfg.hr_size):
        raise DataError(f"data extents {H}x{W} do not match hr_size {cfg.hr_size}")
    if dataset.x.shape[-1] * cfg.scale != W:
        raise DataError(f"low-resolution extents do not match scale {cfg.scale}")


def cmd_sample(args):
    ckpt, model = _load_model(args.checkpoint)
    cfg = resolve_config(args, base=ckpt["config"])
    x, y, s = (read_image(p) for p in args.inputs)
    lr = cfg.hr_size // cfg.scale
    for img, p in zip((x, y, s), args.inputs):
        if img.shape[-2:] != (lr, lr):
            raise DataError(f"{p}: extents {img.shape[-2:]} != {lr}x{lr} (hr_size / scale)")
    if x.shape[0] != 1 or y.shape[0] != 1 or s.shape[0] != cfg.c_s:
        raise DataError("anatomical inputs need 1 channel and the functional input c_s channels")
    schedule = make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)
    rng = make_rng(cfg.seed + training._SAMPLE_STREAM)
    out = model.sample(x[None], y[None], s[None], schedule, rng, variance=cfg.variance)[0]
    path = args.out or "fused.ppm"
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    write_image(path, out)
    print(f"wrote {path}")
    if args.gt:
        gt = read_image(args.gt)
        if gt.shape != out.shape:
            raise DataError(f"ground truth shape {gt.shape} != output {out.shape}")
        stored = read_image(path)
        print(f"psnr {psnr(stored, gt):.4f} ssim {ssim(stored, gt):.4f} rmse {rmse(stored, gt):.6f}")


def cmd_eval(args):
    if args.predictor == "model":
        if not args.checkpoint:
            raise UsageError("--predictor model needs --checkpoint")
        ckpt, model = _load_model(args.checkpoint)
        cfg = resolve_config(args, base=ckpt["config"])
    else:
        cfg = resolve_config(args)
    dataset = training.load_split(args.data or cfg.data_dir, args.split, cfg.scale)
    _check_extents(dataset, cfg)
    if args.predictor == "model":
        preds = training.sample_dataset(model, dataset, cfg)
    elif args.predictor == "bicubic":
        preds = training.bicubic_baseline(dataset)
    else:
        preds = dataset.target
    report = training.evaluate(preds, dataset)
    out = args.out or cfg.report_dir
    os.makedirs(out, exist_ok=True)
    path = os.path.join(out, f"report_{args.split}_{args.predictor}.csv")
    with open(path, "w") as fh:
        fh.write(report.to_csv())
    agg = report.aggregate()
    print(f"wrote {path}: " + ", ".join(f"{k} {agg[k][0]:.4f}±{agg[k][1]:.4f}"
                                        for k in ("psnr", "ssim", "rmse")))


def display_band(band, kind, level):
    """Map a sub-band to [0, 1] for viewing; returns ``(image, offset, scale)``.

    The approximation band is divided by ``2**level`` (giving block means).
    Detail bands map zero to 0.5 and the largest magnitude to 0 or 1.
    """
    if kind == "LL":
        scale = 1.0 / 2 ** level
        return np.clip(band * scale, 0.0, 1.0), 0.0, scale
    peak = float(np.abs(band).max())
    scale = 0.5 / peak if peak > 0 else 0.0
    return np.clip(0.5 + band * scale, 0.0, 1.0), 0.5, scale


def cmd_inspect_dwt(args):
    img = read_image(args.image)
    try:
        pyr = dwt_multi(img, args.J)
    except ValueError as exc:
        raise DataError(str(exc)) from exc
    out = args.out or "dwt"
    os.makedirs(out, exist_ok=True)
    ext = ".pgm" if img.shape[0] == 1 else ".ppm"
    rows = ["file,band,level,offset,scale"]
    for kind, level, band in pyr.bands():
        name = f"{kind}_{level}{ext}"
        disp, offset, scale = display_band(band, kind, level)
        write_image(os.path.join(out, name), disp)
        rows.append(f"{name},{kind},{level},{offset!r},{scale!r}")
    with open(os.path.join(out, "normalization.csv"), "w") as fh:
        fh.write("\n".join(rows) + "\n")
    table = subband_energy(pyr)
    with open(os.path.join(out, "energy.csv"), "w") as fh:
        fh.write(table.to_csv())
    print(f"wrote {len(rows) - 1} bands to {out}; high-frequency fraction {table.hf_fraction:.6f}")


# ---------------------------------------------------------------- parser

def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (key = value)")
    common.add_argument("--profile", choices=sorted(PROFILES), default="paper",
                        help="built-in defaults used when --config is absent")
    common.add_argument("--set", action="append", metavar="KEY=VALUE",
                        help="override one config field (repeatable)")
    common.add_argument("--seed", type=int)
    common.add_argument("--scale", type=int, choices=data.SCALES)
    common.add_argument("--out", help="output directory (file for sample)")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="wavefuse", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic phantom dataset")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", parents=[common], help="train a model")
    p.add_argument("--data", help="dataset directory (default: data_dir from config)")
    p.add_argument("--checkpoint", help="resume from this checkpoint")
    p.add_argument("--until", type=int, metavar="STEP",
                   help="stop at this step without changing the configured step count")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("sample", parents=[common], help="fuse one low-resolution triplet")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("inputs", nargs=3, metavar=("A", "B", "F"),
                   help="anatomical A, anatomical B and functional images (PGM/PPM)")
    p.add_argument("--gt", help="ground-truth fused image; prints metrics")
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", parents=[common], help="metric report over a split")
    p.add_argument("--checkpoint")
    p.add_argument("--data", help="dataset directory")
    p.add_argument("--split", choices=data.SPLITS, default="test")
    p.add_argument("--predictor", choices=("model", "bicubic", "gt"), default="model")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("inspect-dwt", parents=[common], help="write sub-band images and energies")
    p.add_argument("image")
    p.add_argument("--J", type=int, default=1)
    p.set_defaults(func=cmd_inspect_dwt)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(message)s")
    try:
        args.func(args)
    except UsageError as exc:
        return _fail("usage", exc, EXIT_USAGE)
    except ConfigError as exc:
        return _fail("config", exc, EXIT_CONFIG)
    except CheckpointError as exc:
        return _fail("checkpoint", exc, EXIT_CHECKPOINT)
    except DivergenceError as exc:
        return _fail("diverged", exc, EXIT_DIVERGED)
    except (NetpbmError, OSError, ValueError) as exc:
        return _fail("data", exc, EXIT_DATA)
    return 0


def _fail(category, exc, code):
    print(f"error[{category}]: {exc}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
