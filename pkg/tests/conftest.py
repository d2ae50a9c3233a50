import sys

import numpy as np
import pytest

from wavefuse.nncore import Module


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


class Wrap(Module):
    """Expose a module with a custom forward/backward signature to the gradient harness."""

    def __init__(self, inner, forward, backward):
        self.inner = inner
        self._f, self._b = forward, backward

    def forward(self, *xs):
        return self._f(self.inner, *xs)

    def backward(self, d):
        return self._b(self.inner, d)


@pytest.fixture
def wrap():
    return Wrap


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
