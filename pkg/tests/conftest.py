import warnings

import numpy as np
import pytest

from heliotrack.ephemeris import GeoTime
from heliotrack.geometry import CameraModel, NonSquarePixels
from heliotrack.render import Scene

warnings.simplefilter("ignore", NonSquarePixels)

# PSA-like layout: tracker ~95 m north of the tower, target face 26 m up.
SITE_ISO = "2018-03-20T11:30:00Z"
TRACKER_POS = (15.0, 95.0, 2.0)
TARGET_POS = (0.0, 0.0, 26.0)


@pytest.fixture
def test_camera() -> CameraModel:
    """The tracker camera used throughout: 800x600, 3.76x2.74 mm, f=2.35 mm."""
    return CameraModel(800, 600, 3.76, 2.74, 2.35)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20180320)


def make_scene(**overrides) -> Scene:
    base = dict(
        site=GeoTime.from_iso(37.09, -2.36, SITE_ISO),
        tracker_position=TRACKER_POS,
        target_position=TARGET_POS,
    )
    base.update(overrides)
    return Scene(**base)


@pytest.fixture
def scene() -> Scene:
    return make_scene()
