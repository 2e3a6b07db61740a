import numpy as np
import pytest
from hypothesis import settings

from laneproto import evalharness
from laneproto.cluster import build_library
from laneproto.labeling import label_dataset
from laneproto.synthgen import generate_corpus

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


@pytest.fixture(scope="session")
def small_corpus():
    """A quick 20/20/20 corpus with generator labels."""
    return generate_corpus({"lcl": 20, "lcr": 20, "lk": 20}, seed=7)


@pytest.fixture(scope="session")
def small_labeled(small_corpus):
    return label_dataset(small_corpus.dataset)


@pytest.fixture(scope="session")
def small_library(small_labeled):
    return build_library(small_labeled)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# acceptance criteria verdicts, printed once at the end of the session
ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    def record(number: int, ok: bool, elapsed: float, limit: float | None, detail: str) -> str:
        budget = "" if limit is None else f" (limit {limit:g} s)"
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} in {elapsed:.1f} s{budget}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return line
    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
