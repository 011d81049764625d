import numpy as np
import pytest

from gbqknn.datasets_io import make_blobs, quantize_dataset
from gbqknn.granular_ball import LabeledPoint


def blob_points(n_per_class=100, classes=2, d=2, separation=10.0, spread=1.0, seed=0, bits=8):
    records = make_blobs(n_per_class, classes, d, separation, spread, seed)
    points, _, _ = quantize_dataset(records, bits)
    return points


def random_points(rng, n, d, bits, labels=2):
    x = rng.integers(0, 2**bits, size=(n, d))
    y = rng.integers(0, labels, size=n)
    return [LabeledPoint(tuple(row), int(lab)) for row, lab in zip(x.tolist(), y.tolist())]


@pytest.fixture
def two_blobs():
    return blob_points(seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.acceptance_lines = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line[1])


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.acceptance_lines.append((number, line))
        print(line)
        return ok

    return record
