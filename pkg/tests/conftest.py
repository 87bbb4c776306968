import numpy as np
import pytest

from voicetitles import vocab as V
from voicetitles.features import make_batch, make_example

WORDS = ("a", "an", "of", "bag", "jar", "can", "ounce", "soup", "peas", "salt", "8", "12", "oz")


@pytest.fixture(scope="session")
def tiny_vocab():
    return V.build_vocab([" ".join(WORDS)] * 2)


@pytest.fixture
def tiny_batch(tiny_vocab):
    """Random small batch whose sources carry words outside ``tiny_vocab``."""

    def make(seed, size=2, src_len=4, tgt_len=3):
        rng = np.random.default_rng(seed)
        pool = list(WORDS) + ["zorvia", "quillon"]
        examples = []
        for _ in range(size):
            src = [pool[i] for i in rng.integers(len(pool), size=src_len)]
            tgt = [src[i] if rng.random() < 0.5 else WORDS[j]
                   for i, j in zip(rng.integers(src_len, size=tgt_len), rng.integers(len(WORDS), size=tgt_len))]
            examples.append(make_example(" ".join(src), " ".join(tgt), tiny_vocab))
        return make_batch(examples, len(tiny_vocab))

    return make


_RESULTS = []


@pytest.fixture
def criterion():
    """Record one acceptance line: criterion(number, passed, detail)."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _RESULTS.append((number, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(_RESULTS):
            terminalreporter.write_line(line)
