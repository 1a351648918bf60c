"""Shared fitted models; session-scoped because fits dominate test time."""

import numpy as np
import pytest

from pwlextremes.data import DISTRIBUTIONS, simulate
from pwlextremes.fitting import ExceedanceSample, FitConfig, fit
from pwlextremes.simplex import make_regular_mesh, to_angle
from pwlextremes.threshold import ThresholdModel


class Pipeline:
    def __init__(self, dist, n=5000, seed=1, tau=0.95):
        self.spec = DISTRIBUTIONS[dist]
        self.x = simulate(self.spec, n, seed).x
        r, w = to_angle(self.x)
        self.threshold = ThresholdModel(r, w, tau, 0.05, 0.05)
        self.ex = ExceedanceSample.from_data(self.x, self.threshold)
        self.mesh = make_regular_mesh(self.spec.dim, 11 if self.spec.dim == 2 else 6)
        self._fits = {}

    def fit(self, label, **kw):
        key = (label, tuple(sorted(kw.items())))
        if key not in self._fits:
            self._fits[key] = fit(FitConfig.from_label(label, **kw), self.ex, self.mesh,
                                  self.threshold)
        return self._fits[key]


@pytest.fixture(scope="session")
def pipe_I():
    return Pipeline("I")


@pytest.fixture(scope="session")
def pipe_III():
    return Pipeline("III")


@pytest.fixture(scope="session")
def pipe_V():
    return Pipeline("V")


def make_rng(seed=0):
    return np.random.default_rng(seed)


# one line per acceptance criterion, filled by test_acceptance and echoed at the end
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[num])
