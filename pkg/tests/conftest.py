from __future__ import annotations

import pytest
from hypothesis import HealthCheck, settings

from predint import load_dataset

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(scope="session")
def sbp():
    return load_dataset("sbp")


@pytest.fixture(scope="session")
def cisapride():
    return load_dataset("cisapride")
