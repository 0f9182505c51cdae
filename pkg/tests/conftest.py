import numpy as np
import pytest

import sheetview as sv


@pytest.fixture(scope="session")
def plane_scene():
    return sv.gen_scene(sv.bundled_scene("plane"))


@pytest.fixture(scope="session")
def small_plane_scene():
    """32x32 variant of the plane scene for gradient-oracle tests."""
    spec = sv.bundled_scene("plane")
    spec.intrinsics = sv.CameraIntrinsics(90.0, 32, 32)
    return sv.gen_scene(spec)


@pytest.fixture(scope="session")
def two_plane_scene():
    return sv.gen_scene(sv.bundled_scene("two_plane"))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
