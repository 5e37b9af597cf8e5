import numpy as np
import pytest

from cvae_beam.config import OUTPUT_ENV
from cvae_beam.tests.helpers import tiny_config


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


@pytest.fixture
def out_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "out"))
    return tmp_path / "out"
