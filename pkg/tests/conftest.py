import sys

import numpy as np
import pytest
from scipy.stats import qmc

from crfeff.exprdsl import Const, in_domain
from crfeff.fefferman import CRData, PerturbedFeffermanSpec, einstein_reeb_coefficients
from crfeff.gallery import get_entry

P0 = (0.0, 1.0, 0.0, 0.0, 0.0)


def box_points(entry, count, seed=0, extra=None):
    """Domain-filtered Sobol points in an entry's box; ``extra`` appends (lo, hi) ranges."""
    chart = entry.geometry.chart
    ranges = [chart.box[c] for c in chart.coordinates] + list(extra or [])
    lo, hi = np.array(ranges).T
    sob = qmc.Sobol(len(ranges), scramble=True, seed=seed)
    out = []
    while len(out) < count:
        for p in qmc.scale(sob.random(32), lo, hi):
            if in_domain(chart, p[: chart.dim], entry.geometry.lets):
                out.append(p)
    return np.array(out[:count])


def heisenberg_einstein(heis2, lambda_tilde):
    """Heisenberg Fefferman space perturbed by the Einstein Reeb modes for ``lambda_tilde``."""
    modes = einstein_reeb_coefficients(2, 0.0, lambda_tilde, 0.0)
    data = CRData(2, {}, {k: Const(complex(v)) for k, v in modes.items() if k > 0})
    return PerturbedFeffermanSpec(heis2.geometry, 1.0, data, Const(1.0))


@pytest.fixture(scope="session")
def np_entry():
    return get_entry("nurowski-przanowski")


@pytest.fixture(scope="session")
def heis1():
    return get_entry("heisenberg-m1")


@pytest.fixture(scope="session")
def heis2():
    return get_entry("heisenberg-m2")


@pytest.fixture(scope="session")
def einstein_entry():
    return get_entry("np-einstein-fefferman")


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results, key=lambda k: (int(k.split()[0]), k)):
            terminalreporter.write_line(results[key])
