from __future__ import annotations

import numpy as np
import pytest

from stainseg.fixtures import make_fixture


@pytest.fixture
def rng():
    return np.random.default_rng(20260822)


@pytest.fixture(scope="session")
def fixture_manifest(tmp_path_factory):
    """One shared synthetic stain-shift dataset for the CLI/pipeline tests."""
    root = tmp_path_factory.mktemp("dataset")
    return make_fixture(root / "fx", seed=0)
