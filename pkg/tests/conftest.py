import numpy as np
import pytest

from cyltomo import ScanGeometry, make_circular_trajectory


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def desk_geometry():
    """Table-1 distances with a small detector for fast tests."""
    return ScanGeometry(
        sdd=791.0,
        sod=679.0,
        det_cols=65,
        det_rows=33,
        pixel_pitch=0.748,
        principal_point=(32.0, 16.0),
        stage_angles=make_circular_trajectory(8, np.radians(200.0)),
    )
