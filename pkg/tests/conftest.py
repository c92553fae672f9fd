import numpy as np
import pytest

from dexfit.models import HandModel
from dexfit.synth import generate_scene


@pytest.fixture(scope="session")
def small_hand():
    # 216 vertices: quick enough for finite-difference loops
    return HandModel.procedural(finger_segments=6, finger_stations=6,
                                palm_segments=6, palm_stations=4)


@pytest.fixture(scope="session")
def hand():
    return HandModel.procedural()


@pytest.fixture(scope="session")
def default_scene():
    """The default one-frame scene (8 views, box + right hand), without grasps."""
    return generate_scene(with_grasps=False)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
