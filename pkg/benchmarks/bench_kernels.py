"""Compare the compiled and numpy patch kernels, alone and inside a training step.

    python benchmarks/bench_kernels.py
"""
import subprocess
import sys
import timeit

import numpy as np

from wavefuse import _kernels_py

try:
    from wavefuse import _kernels as _compiled
except ImportError:
    _compiled = None

CASES = [
    # (N, C, H, W, k, stride)
    (4, 35, 32, 32, 3, 1),
    (4, 16, 32, 32, 3, 2),
    (4, 32, 16, 16, 3, 1),
    (4, 2, 16, 16, 7, 1),
]

STEP_SNIPPET = """
import time, numpy as np, wavefuse
from wavefuse.config import desk_profile
from wavefuse.training import synthetic_splits, train
cfg = desk_profile(steps=40)
sets = synthetic_splits(cfg)
train(cfg, sets['train'], steps=5)
from wavefuse.training import new_state
t0 = time.perf_counter(); train(cfg, sets['train'])
print(wavefuse.BACKEND, (time.perf_counter() - t0) / 40 * 1e3)
"""


def bench_kernels():
    print(f"{'case':<26}{'impl':<10}{'im2col ms':>10}{'col2im ms':>10}")
    for n, c, h, w, k, s in CASES:
        x = np.random.default_rng(0).standard_normal((n, c, h, w)).astype(np.float32)
        pad = k // 2
        for label, impl in (("python", _kernels_py), ("compiled", _compiled)):
            if impl is None:
                continue
            cols = impl.im2col(x, k, s, pad)
            t_im = min(timeit.repeat(lambda: impl.im2col(x, k, s, pad), number=20, repeat=3)) / 20
            t_col = min(timeit.repeat(lambda: impl.col2im(cols, n, c, h, w, k, s, pad),
                                      number=20, repeat=3)) / 20
            print(f"{str((n, c, h, w, k, s)):<26}{label:<10}{t_im * 1e3:>10.3f}{t_col * 1e3:>10.3f}")


def bench_training_step():
    print("\ndesk-profile training step (ms):")
    for env in ({}, {"WAVEFUSE_PURE_PYTHON": "1"}):
        import os

        out = subprocess.run([sys.executable, "-c", STEP_SNIPPET], capture_output=True, text=True,
                             env={**os.environ, **env}, check=True)
        backend, ms = out.stdout.split()
        print(f"  {backend:<10}{float(ms):8.1f}")


if __name__ == "__main__":
    bench_kernels()
    bench_training_step()
