import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from helpers import make_fixture_dataset  # noqa: E402


@pytest.fixture(scope="session")
def fixture_dataset(tmp_path_factory):
    """Small three-style dataset rendered once per session."""
    root = tmp_path_factory.mktemp("dataset")
    return make_fixture_dataset(root, ["fairy", "rock", "street"])
