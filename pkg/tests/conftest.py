import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from cgua.core import EmbeddingMatrix, SceneCatalog  # noqa: E402


def random_unit(rng, n, d):
    x = rng.standard_normal((n, d))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def random_catalog(rng, n, m):
    """Every one of ``m`` scenes gets at least one of ``n >= m`` instances."""
    image_of = np.concatenate([np.arange(m), rng.integers(m, size=n - m)])
    rng.shuffle(image_of)
    return SceneCatalog.from_image_of(image_of, m)


def random_instance(rng, n, d, m):
    return EmbeddingMatrix(random_unit(rng, n, d)), random_catalog(rng, n, m)


# fixed 6-instance, 3-scene fixture; expected values in the tests were
# produced by tests/oracles.py
FIXTURE_RAW = [[1, 2, 0, 1], [0, 1, 3, 1], [2, 0, 1, 1], [1, 1, 1, 0], [3, 1, 0, 2], [0, 2, 1, 3]]
FIXTURE_IMAGE_OF = [0, 1, 0, 2, 1, 2]


@pytest.fixture
def fixture6():
    emb = EmbeddingMatrix.from_raw(np.asarray(FIXTURE_RAW, dtype=float))
    return emb, SceneCatalog.from_image_of(FIXTURE_IMAGE_OF, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    """One PASS/FAIL line per acceptance criterion that ran."""
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for line in mod.summary_lines():
        terminalreporter.write_line(line)
