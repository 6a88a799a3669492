import numpy as np
import pytest

from wassrl.envs import TabularMdp

# Acceptance outcomes, filled by tests/test_acceptance.py and echoed at the end of the run.
ACCEPTANCE: dict[str, tuple[bool, str]] = {}


def record(name: str, ok: bool, detail: str) -> None:
    ACCEPTANCE[name] = (bool(ok), detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(ACCEPTANCE, key=lambda s: int(s.split()[0])):
        ok, detail = ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")


def bandit_mdp(n_arms: int = 2) -> TabularMdp:
    """One decision: arm k moves to absorbing state k + 1. Rewards are zero."""
    n = n_arms + 1
    P = np.zeros((n, n_arms, n))
    for k in range(n_arms):
        P[0, k, k + 1] = 1.0
        P[k + 1, :, k + 1] = 1.0
    return TabularMdp(P, np.zeros((n, n_arms)), start=0, horizon=1, absorbing=range(1, n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
