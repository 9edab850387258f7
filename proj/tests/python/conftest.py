import os
import pathlib

import pytest

FIXTURES = pathlib.Path(
    os.environ.get("DVME_FIXTURE_DIR", pathlib.Path(__file__).resolve().parent.parent / "fixtures")
)


@pytest.fixture
def fixture_dir():
    return FIXTURES


@pytest.fixture
def cli():
    path = os.environ.get("DVME_CLI")
    if not path or not os.path.exists(path):
        pytest.skip("DVME_CLI does not point at the dvme executable")
    return path
