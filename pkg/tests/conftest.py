import sys

import numpy as np
import pytest
import torch

from semicontrast.data import CorpusSpec, generate_synthetic_corpus

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_corpus():
    return generate_synthetic_corpus(
        CorpusSpec(num_volumes=20, slices_per_volume=4, resolution=32, num_foreground_classes=3), 7
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(results):
        terminalreporter.write_line(results[k])
