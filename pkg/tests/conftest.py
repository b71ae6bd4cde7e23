from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).resolve().parents[1] / "fixtures"


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def uniform_mock():
    from iclforge.lm import MockModel

    return MockModel.from_file(FIXTURES / "mock_uniform.json")


@pytest.fixture
def f1_mock():
    from iclforge.lm import MockModel

    return MockModel.from_file(FIXTURES / "mock_f1.json")
