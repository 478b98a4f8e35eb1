import numpy as np
import pytest

from recycled_sts import HierDataset, IndividualData, get_model

ACCEPTANCE_LINES = []


def record(line):
    """Collect one acceptance line; they are repeated in the terminal summary."""
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def make_dataset(model_name, thetas, times, noise=0.0, rng=None, ids=None):
    model = get_model(model_name)
    inds = []
    for i, th in enumerate(thetas):
        t = np.asarray(times[i] if np.ndim(times) > 1 or isinstance(times, list) else times,
                       dtype=float)
        y = model.eval(np.atleast_1d(th), t)
        if noise:
            y = y + noise * rng.standard_normal(t.size)
        inds.append(IndividualData(ids[i] if ids else f"s{i}", t, y))
    return HierDataset(inds)


@pytest.fixture
def linear_data(rng):
    """Twelve noisy straight-line individuals with distinct slopes."""
    slopes = 1.5 + 0.3 * rng.standard_normal(12)
    times = [np.sort(rng.uniform(0, 5, size=8)) for _ in slopes]
    return make_dataset("linear1", slopes[:, None], times, noise=0.2, rng=rng)
