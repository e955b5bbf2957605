import os
import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, max_examples=40,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def skeleton():
    from vimocap.kinematics import default_skeleton

    return default_skeleton()


@pytest.fixture(scope="session")
def rig():
    from vimocap.synth import default_rig

    return default_rig()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
