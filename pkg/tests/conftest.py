import time

import numpy as np
import pytest

from fetibench import problems
from fetibench.bench import build_system


SUITE_LIMIT = 120.0
_criteria = {}
_clock = {}


def pytest_sessionstart(session):
    _clock["start"] = time.perf_counter()


def pytest_sessionfinish(session, exitstatus):
    elapsed = time.perf_counter() - _clock["start"]
    _clock["elapsed"] = elapsed
    # the suite-runtime half of the kernel criterion is only known here
    if 8 in _criteria:
        passed, detail = _criteria[8]
        passed = passed and elapsed <= SUITE_LIMIT
        _criteria[8] = (passed, f"{detail}; suite {elapsed:.1f} s (limit {SUITE_LIMIT:.0f} s)")
        if not passed and session.exitstatus == 0:
            session.exitstatus = 1


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_criteria):
        passed, detail = _criteria[n]
        terminalreporter.write_line(f"Criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}")


@pytest.fixture(scope="session")
def criterion():
    """``record(n, passed, detail)`` stores one result line, printed after the run."""
    def record(n, passed, detail):
        _criteria[n] = (bool(passed), detail)
        print(f"Criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}")
    return record


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


class Desk:
    """A problem with its partition, subdomains, oracle and lazily built systems."""

    def __init__(self, problem):
        self.problem = problem
        self.partition, self.subdomains = problems.build_subdomains(problem)
        self.u_ref = problems.direct_oracle(problem, self.partition, self.subdomains)
        self._systems = {}

    def system(self, method):
        if method not in self._systems:
            self._systems[method] = build_system(method, self.problem, self.partition,
                                                 self.subdomains)
        return self._systems[method]


@pytest.fixture(scope="session")
def desk():
    """Small instances (4 x 4 elements per subdomain) of every academic preset."""
    return {
        "laminated_beam": Desk(problems.laminated_beam(elems=7, n_subdomains=3)),
        "grid3x3_layered": Desk(problems.grid3x3_layered(elems=4)),
        "grid4x4_inclusion": Desk(problems.grid4x4_inclusion(elems=4, inclusion=2)),
    }


@pytest.fixture(scope="session")
def bar():
    """Two subdomains side by side, clamped left, pulled right."""
    return Desk(problems.laminated_beam(elems=4, n_subdomains=2, contrast=1.0, n_layers=3))


@pytest.fixture(scope="session")
def mbb_snapshots():
    """Desk-scale modular MBB snapshots (8 x 8 elements per module) at SIMP iterations 0, 4, 30."""
    snaps = problems.mbb_modular_snapshot([0, 4, 30], elems=8)
    return dict(zip((0, 4, 30), snaps))
