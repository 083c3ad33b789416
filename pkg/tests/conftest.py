import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=25,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")
torch.set_num_threads(1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def crandn(rng, *shape):
    return rng.normal(size=shape) + 1j * rng.normal(size=shape)


def fd_relative_error(fn, leaves, n_entries=24, eps=1e-6, seed=0):
    """Norm-wise relative error between autograd and central finite differences.

    ``fn`` maps the list of real float64 ``leaves`` to a scalar; a random subset of entries
    of each leaf is probed.
    """
    for leaf in leaves:
        leaf.grad = None
    fn(leaves).backward()
    g = np.random.default_rng(seed)
    analytic, numeric = [], []
    with torch.no_grad():
        for leaf in leaves:
            flat = leaf.view(-1)
            picks = g.choice(flat.numel(), size=min(n_entries, flat.numel()), replace=False)
            for i in picks:
                old = flat[i].item()
                flat[i] = old + eps
                up = fn(leaves).item()
                flat[i] = old - eps
                down = fn(leaves).item()
                flat[i] = old
                numeric.append((up - down) / (2 * eps))
                analytic.append(leaf.grad.view(-1)[i].item())
    a, n = np.array(analytic), np.array(numeric)
    return np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-12)


ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance():
    """Record one pass/fail line per acceptance criterion and fail the test if it did not hold."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
