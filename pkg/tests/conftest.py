import numpy as np
import pytest

from fastbkmr.data import Dataset


def make_dataset(n=25, q=2, p=1, seed=0, noise=0.3):
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, q))
    x = rng.standard_normal((n, p))
    h = np.sin(z[:, 0]) + 0.5 * z[:, -1] ** 2
    y = x @ np.full(p, 1.5) + h + noise * rng.standard_normal(n)
    return Dataset(y=y, x=x, z=z)


@pytest.fixture
def small_ds():
    return make_dataset()


def batch_se(draws, n_batches=50):
    """Monte-Carlo standard error of column means by non-overlapping batch means."""
    draws = np.asarray(draws, dtype=float)
    if draws.ndim == 1:
        draws = draws[:, None]
    size = draws.shape[0] // n_batches
    means = draws[: size * n_batches].reshape(n_batches, size, -1).mean(axis=1)
    return means.std(axis=0, ddof=1) / np.sqrt(n_batches)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.RESULTS):
            terminalreporter.write_line(line)
