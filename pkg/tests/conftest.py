import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

ROOT = Path(__file__).resolve().parents[1]
sys.path.insert(0, str(Path(__file__).resolve().parent))

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def calibrated_cfg_path():
    return ROOT / "configs" / "calibrated.cfg"


@pytest.fixture(scope="session")
def calibrated(calibrated_cfg_path):
    from photopair.config import load_config
    return load_config(calibrated_cfg_path)
