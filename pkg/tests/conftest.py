import json
import sys

import numpy as np
import pytest

from modesearch.seqmodel import random_ngram


def small_ngram(seed, n_content=None, order=None):
    """A random n-gram model with at most 5 symbols (including the terminator)."""
    rng = np.random.default_rng(seed)
    if n_content is None:
        n_content = int(rng.integers(1, 5))
    if order is None:
        order = int(rng.integers(1, 4))
    return random_ngram(rng, n_content, order)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def write_spec(path, model, **meta):
    """Write ``model`` as a JSON spec file, with optional input metadata such as ``reference_length``."""
    spec = dict(model.to_spec(), **meta)
    path.write_text(json.dumps(spec))
    return path


def ngram_dir(tmp_path, n, seed=0, name="models"):
    """A directory of ``n`` small random n-gram spec files."""
    d = tmp_path / name
    d.mkdir()
    for i in range(n):
        write_spec(d / f"m{i:03d}.json", small_ngram(seed * 1000 + i))
    return d


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
