import numpy as np
import pytest

from src.core.geometry import ConeBeamGeometry, make_geometry, view_angles
from src.core.projector import Volume3D


@pytest.fixture
def tiny_geometry() -> ConeBeamGeometry:
    # 8^3 @ 1 mm, footprint 12.8 mm on an 18 mm detector
    return make_geometry(dso=50.0, dsd=80.0, det_rows=12, det_cols=12, det_pixel=1.5,
                         vol_nx=8, vol_ny=8, vol_nz=8, voxel=1.0)


@pytest.fixture
def small_geometry() -> ConeBeamGeometry:
    # 24^3 @ 1 mm, large enough for phantoms, depth-8 windows and 15x15 LoG kernels
    return make_geometry(dso=50.0, dsd=80.0, det_rows=32, det_cols=32, det_pixel=1.5,
                         vol_nx=24, vol_ny=24, vol_nz=24, voxel=1.0)


@pytest.fixture
def views4():
    return view_angles(4)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def random_volume(tiny_geometry, rng) -> Volume3D:
    return Volume3D(data=rng.random(tiny_geometry.volume_shape), voxel=tiny_geometry.voxel)
