import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

from uwpose import autodiff

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "uwpose",
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("uwpose")


@pytest.fixture(autouse=True)
def _finite_checks():
    autodiff.set_debug_checks(True)
    yield
    autodiff.set_debug_checks(False)
