import numpy as np
import pytest

from mesv.backend.attention import AttentionConfig
from mesv.encoder import EncoderConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def micro_encoder():
    """Two thin TDNN layers, D=8: small enough for exhaustive finite differences."""
    return EncoderConfig(feat_dim=5, layers=(((-1, 0, 1), 6), ((-2, 0, 2), 6)),
                         embedding_dim=8, n_classes=3)


@pytest.fixture(scope="session")
def micro_attention():
    return AttentionConfig(dim=8, sdsa_heads=2, ffsa_heads=2, ffsa_hidden=6)


_ACCEPTANCE = {}


@pytest.fixture(scope="session")
def acceptance():
    """Record one pass/fail line per acceptance criterion."""

    def record(number, ok, detail):
        line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        _ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for number in sorted(_ACCEPTANCE):
            terminalreporter.write_line(_ACCEPTANCE[number])
