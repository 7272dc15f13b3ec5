from pathlib import Path

import pytest

from dacslin.model import load_system

FIXTURES = Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def ex51():
    return load_system(FIXTURES / "example51.dacs")


@pytest.fixture(scope="session")
def ex52():
    return load_system(FIXTURES / "example52.dacs")
