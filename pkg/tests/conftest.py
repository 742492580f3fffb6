import sys
import warnings

import numpy as np
import pytest

from synthpi.montecarlo import DGPSpec, generate
from synthpi.panel import PanelDataset, build_design


def random_panel(N=3, T0=30, T1=1, M=1, seed=0, noise=1.0):
    rng = np.random.default_rng(seed)
    values = rng.standard_normal((N + 1, T0 + T1, M))
    w = rng.dirichlet(np.ones(N))
    values[0] = np.einsum("j,jtm->tm", w, values[1:]) + noise * rng.standard_normal((T0 + T1, M))
    return PanelDataset.from_array(values, T0)


def dgp_design(rho=0.0, seed=0, rep=0, misspecified=False, **kw):
    spec = DGPSpec(rho=rho, misspecified=misspecified, **kw)
    panel, truth = generate(spec, seed, rep)
    design = build_design(panel, regime=spec.regime, constraint="simplex")
    return spec, panel, truth, design


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(autouse=True)
def _quiet_runtime_warnings():
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        yield


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = sorted(getattr(module, "LINES", []))
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
