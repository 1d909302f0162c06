import os
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

from homeonet.harness.config import DATA_DIR_ENV, IDX_NAMES

settings.register_profile("default", deadline=None, max_examples=60)
settings.load_profile("default")

DEFAULT_DATA = Path("/root/data/mnist")


def mnist_dir():
    d = Path(os.environ.get(DATA_DIR_ENV, DEFAULT_DATA))
    ok = all((d / n).is_file() or (d / (n + ".gz")).is_file() for n in IDX_NAMES.values())
    return d if ok else None


@pytest.fixture(scope="session")
def data_dir():
    d = mnist_dir()
    if d is None:
        pytest.skip(f"MNIST IDX files not found; set {DATA_DIR_ENV}")
    return d


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE = {}


@pytest.fixture
def report():
    """Record one acceptance line: ``report(id, title, passed, detail)``."""
    def record(cid, title, passed, detail):
        _ACCEPTANCE[cid] = (title, bool(passed), detail)
    return record


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_ACCEPTANCE):
        title, passed, detail = _ACCEPTANCE[cid]
        terminalreporter.write_line(f"{cid} {'PASS' if passed else 'FAIL'} {title}: {detail}")
