import numpy as np
import pytest

from mcpanel.panel import ObservationMask


def random_mask(rng, n, t, frac_missing):
    obs = np.ones(n * t, dtype=bool)
    obs[rng.choice(n * t, int(round(frac_missing * n * t)), replace=False)] = False
    return ObservationMask(obs.reshape(n, t))


def low_rank(rng, n, t, rank, scale=1.0):
    return scale * rng.standard_normal((n, rank)) @ rng.standard_normal((rank, t)) / np.sqrt(rank)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line for an acceptance criterion; all lines
    are repeated in the terminal summary."""
    lines = request.config.stash.setdefault(ACCEPTANCE, [])

    def record(number: int, ok: bool, detail: str) -> None:
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'} {detail}"
        print(line)
        lines.append(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
