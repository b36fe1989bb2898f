import numpy as np
import pytest
from hypothesis import settings

from multilabel_t.datagen import (
    TransitionMatrix2,
    generate_clean_dataset,
    inject_class_dependent_noise,
)

settings.register_profile("default", deadline=None, max_examples=100)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_noisy():
    """q=6 dataset with ULF 0.2 noise, shared by many unit tests."""
    ds = generate_clean_dataset(4000, 6, 16, 2, 0.3, seed=11, p_in=0.6, p_out=0.02)
    return inject_class_dependent_noise(ds, [TransitionMatrix2(0.2, 0.2)] * 6, seed=12,
                                        regime="ULF")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def verdict():
    """Record one PASS/FAIL line per acceptance criterion."""

    def record(tag, ok, detail):
        line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
        _ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
