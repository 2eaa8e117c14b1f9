import numpy as np
import pytest

from qdmft.aim import hubbard_impurity

# one line per acceptance criterion, filled by tests/test_acceptance.py
ACCEPTANCE: dict = {}

FIG3_BATH = {
    8.0: ([-2.0, -0.7, 0.0, 0.7, 2.0], [0.4, 0.3, 0.2, 0.3, 0.4]),
    2.0: ([-1.5, -0.5, 0.0, 0.5, 1.5], [0.5, 0.4, 0.3, 0.4, 0.5]),
}


def fig3_like(U: float):
    eps, V = FIG3_BATH[U]
    return hubbard_impurity(U, U / 2, eps, V)


@pytest.fixture
def small_model():
    """Half-filled impurity with two bath levels per spin (6 modes)."""
    return hubbard_impurity(3.0, 1.5, [-1.0, 1.0], [0.6, 0.6])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def report():
    def record(number: int, title: str, ok: bool, detail: str):
        ACCEPTANCE[number] = (title, ok, detail)
        return ok
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] {n:2d}. {title}: {detail}")
