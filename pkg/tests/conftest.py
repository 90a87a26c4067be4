import numpy as np
import pytest

from nuflavor.ensemble import build_hamiltonian, hamiltonian_from_couplings


@pytest.fixture
def two_spin():
    """n=2 sample with mu_01 = 1."""
    return hamiltonian_from_couplings([[0.0, 1.0], [1.0, 0.0]])


@pytest.fixture(params=[4, 6, 8])
def sample(request):
    return build_hamiltonian(request.param, seed=11, realization_id=3)


def random_state(n, rng):
    psi = rng.normal(size=1 << n) + 1j * rng.normal(size=1 << n)
    return psi / np.linalg.norm(psi)


_ACCEPTANCE_LINES = {}


@pytest.fixture
def report():
    """Record one PASS/FAIL line for an acceptance criterion, then assert it."""

    def _report(number, title, passed, detail):
        line = f"criterion {number:>2} {'PASS' if passed else 'FAIL'}  {title}: {detail}"
        _ACCEPTANCE_LINES[number] = line
        print(line)
        assert passed, line

    return _report


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE_LINES):
            terminalreporter.write_line(_ACCEPTANCE_LINES[number])
