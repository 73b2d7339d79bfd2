import numpy as np
import pytest

from logrisk import synth, trig
from logrisk.panel import LogRiskPanel


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_panel(values, mode="hard"):
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.shape[0] == 1:
        values = values.T
    T, P = values.shape
    return LogRiskPanel(trig.node_index(T), tuple(f"R{j + 1}" for j in range(P)), values, mode)


@pytest.fixture
def small_synthetic():
    """Smooth synthetic panel (T=80, P=3) with mild AR(1) residuals."""
    sc = synth.make_scenario(T=80, P=3, N=3, rho=0.5, sigma=0.02, seed=3)
    return synth.generate_panel(sc).panel


def write_counts_csv(path, rows):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("date,region,count\n")
        for r in rows:
            fh.write(",".join(map(str, r)) + "\n")
    return path


ACCEPTANCE = {}


@pytest.fixture
def criterion():
    """Record one acceptance line: ``criterion(n, ok, detail, seconds)``."""
    def record(n, ok, detail, seconds):
        ACCEPTANCE[n] = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}  ({seconds:.1f} s)"
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
