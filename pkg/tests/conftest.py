import numpy as np
import pytest

from ssnd.core import SpeakerInterval
from ssnd.simulate import SessionSpec, generate_session


def random_two_way_intervals(rng, n_max=12, n_speakers=4, horizon_ms=20000):
    """Random interval list in which at most two intervals overlap at any time.

    Built as two independent lanes of disjoint intervals, so concurrency is
    bounded by construction.  Speakers are drawn freely, which also produces
    same-speaker intervals on different lanes.
    """
    out = []
    for _ in range(2):
        t = int(rng.integers(0, 500))
        for _ in range(int(rng.integers(0, n_max // 2 + 1))):
            length = int(rng.integers(1, 3000))
            if t + length > horizon_ms:
                break
            spk = f"s{int(rng.integers(n_speakers))}"
            out.append((spk, t, t + length))
            t += length + int(rng.integers(0, 800))
    # same speaker on both lanes at once would be one speaker overlapping itself
    clean = []
    for spk, a, b in out:
        if any(s == spk and a < e and o < b for s, o, e in clean):
            continue
        clean.append((spk, a, b))
    order = rng.permutation(len(clean))
    return [SpeakerInterval(clean[i][0], clean[i][1] / 1000, clean[i][2] / 1000) for i in order]


@pytest.fixture(scope="session")
def session1():
    return generate_session(SessionSpec(), seed=1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance lines collected by tests/test_acceptance.py, echoed after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
