from __future__ import annotations

import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parents[1]
FIXTURES = ROOT / "src" / "dvl" / "fixtures"
SCHEMA = ROOT / "schemas" / "report.schema.json"

sys.path.insert(0, str(Path(__file__).parent))


def fixture_text(name: str) -> str:
    return (FIXTURES / name).read_text()


@pytest.fixture
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture
def load_fixture():
    from dvl.dsl.lower import load

    def _load(name: str):
        return load(fixture_text(name))

    return _load
