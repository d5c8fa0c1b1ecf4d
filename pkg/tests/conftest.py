import os
from pathlib import Path

import numpy as np
import pytest

from netgame.config import SolverSettings
from netgame.models.schemas import GameSpec
from netgame.services.model_service import build_model, load_spec

SPECS = Path(__file__).resolve().parents[1] / "specs"

os.environ.setdefault("NETGAME_THREADS", "2")


@pytest.fixture(scope="session")
def example1_path() -> Path:
    return SPECS / "example1.json"


@pytest.fixture(scope="session")
def pe_path() -> Path:
    return SPECS / "pursuit_evasion.json"


@pytest.fixture(scope="session")
def example1_spec(example1_path) -> GameSpec:
    return load_spec(example1_path)


@pytest.fixture(scope="session")
def pe_spec(pe_path) -> GameSpec:
    return load_spec(pe_path)


@pytest.fixture(scope="session")
def settings() -> SolverSettings:
    return SolverSettings()


@pytest.fixture(scope="session")
def direct_settings() -> SolverSettings:
    return SolverSettings(steady_state_method="direct")


@pytest.fixture(scope="session")
def example1_model(example1_spec, settings):
    return build_model(example1_spec, settings)


@pytest.fixture(scope="session")
def pe_model(pe_spec, settings):
    return build_model(pe_spec, settings)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)
