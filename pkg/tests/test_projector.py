import itertools

import numpy as np
import pytest

from src.core.geometry import make_geometry, view_angles
from src.core.projector import (ConeBeamProjector, Sinogram, Volume3D, back_project, forward_project, get_projector,
                                view_matrix)
from src.errors import DimensionError
from src.utils.runtime import set_threads


def test_adjoint_identity(tiny_geometry, views4, rng):
    projector = ConeBeamProjector(tiny_geometry, views4)
    x = rng.standard_normal(tiny_geometry.volume_shape)
    y = rng.standard_normal((views4.n_views,) + tiny_geometry.detector_shape)
    lhs = float(np.sum(projector.forward(x) * y))
    rhs = float(np.sum(x * projector.back(y)))
    assert lhs == pytest.approx(rhs, rel=1e-10)


def test_linearity(tiny_geometry, views4, rng):
    projector = get_projector(tiny_geometry, views4)
    a = rng.random(tiny_geometry.volume_shape)
    b = rng.random(tiny_geometry.volume_shape)
    combined = projector.forward(2.0 * a - 3.0 * b)
    assert np.allclose(combined, 2.0 * projector.forward(a) - 3.0 * projector.forward(b))


def test_nonnegative_volume_gives_nonnegative_sinogram(random_volume, tiny_geometry, views4):
    sinogram = forward_project(random_volume, tiny_geometry, views4)
    assert sinogram.data.shape == (4, 12, 12)
    assert np.all(sinogram.data >= 0)


def test_uniform_cube_central_chord(tiny_geometry):
    # Central rays cross the 8 mm cube along an axis: line integral close to 8
    views = view_angles(4)
    ones = Volume3D(data=np.ones(tiny_geometry.volume_shape), voxel=1.0)
    sinogram = forward_project(ones, tiny_geometry, views)
    for index in range(views.n_views):
        center = sinogram.data[index, 5:7, 5:7]
        assert np.all(np.abs(center - 8.0) < 0.8)


def test_zero_volume(tiny_geometry, views4):
    zeros = Volume3D(data=np.zeros(tiny_geometry.volume_shape), voxel=1.0)
    assert np.all(forward_project(zeros, tiny_geometry, views4).data == 0)


def test_dtype_follows_input(tiny_geometry, views4, rng):
    projector = get_projector(tiny_geometry, views4)
    assert projector.forward(rng.random(tiny_geometry.volume_shape)).dtype == np.float64
    assert projector.forward(rng.random(tiny_geometry.volume_shape).astype(np.float32)).dtype == np.float32


def test_thread_count_does_not_change_result(tiny_geometry, views4, rng):
    x = rng.random(tiny_geometry.volume_shape)
    y = rng.random((4,) + tiny_geometry.detector_shape)
    try:
        set_threads(1)
        one = ConeBeamProjector(tiny_geometry, views4).back(y), ConeBeamProjector(tiny_geometry, views4).forward(x)
        set_threads(4)
        four = ConeBeamProjector(tiny_geometry, views4).back(y), ConeBeamProjector(tiny_geometry, views4).forward(x)
    finally:
        set_threads(None)
    assert np.array_equal(one[0], four[0])
    assert np.array_equal(one[1], four[1])


def test_wrong_volume_shape(tiny_geometry, views4):
    projector = get_projector(tiny_geometry, views4)
    with pytest.raises(DimensionError):
        projector.forward(np.zeros((8, 8, 7)))


def test_wrong_sinogram_shape(tiny_geometry, views4):
    with pytest.raises(DimensionError):
        Sinogram(data=np.zeros((3, 12, 12)), geometry=tiny_geometry, views=views4)


def test_back_project_returns_volume(tiny_geometry, views4, rng):
    sinogram = Sinogram(data=rng.random((4, 12, 12)), geometry=tiny_geometry, views=views4)
    volume = back_project(sinogram, tiny_geometry, views4)
    assert volume.shape == tiny_geometry.volume_shape
    assert volume.voxel == tiny_geometry.voxel


def test_volume_rejects_non_finite():
    data = np.zeros((2, 2, 2))
    data[0, 0, 0] = np.nan
    with pytest.raises(DimensionError):
        Volume3D(data=data, voxel=1.0)


def ray_march_detector_sum(geometry, lo, hi, samples=200, seed=0):
    """Somme (en unités pixel) des intégrales de ligne d'un cube à l'angle 0, marche de pas voxel/10"""
    rng = np.random.default_rng(seed)
    lo, hi = np.asarray(lo, dtype=np.float64), np.asarray(hi, dtype=np.float64)
    step = geometry.voxel / 10.0
    source = np.array([geometry.dso, 0.0, 0.0])
    plane = geometry.dso - geometry.dsd

    corners = np.array(list(itertools.product(*zip(lo, hi))))
    mag = geometry.dsd / (geometry.dso - corners[:, 0])
    margin = 0.05 * geometry.det_pixel
    u0, u1 = (mag * corners[:, 1]).min() - margin, (mag * corners[:, 1]).max() + margin
    v0, v1 = (mag * corners[:, 2]).min() - margin, (mag * corners[:, 2]).max() + margin

    # One jittered ray per cell of a samples x samples grid over the shadow
    cells = np.arange(samples, dtype=np.float64)
    pu = u0 + (u1 - u0) * (cells[:, None] + rng.random((samples, samples))) / samples
    pv = v0 + (v1 - v0) * (cells[None, :] + rng.random((samples, samples))) / samples
    targets = np.stack([np.full(pu.size, plane), pu.ravel(), pv.ravel()], axis=1)
    directions = targets - source
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)

    center = 0.5 * (lo + hi)
    radius = 0.5 * float(np.linalg.norm(hi - lo))
    near = float(np.linalg.norm(center - source)) - radius
    n_steps = int(np.ceil(2.0 * radius / step)) + 1
    distances = near + (np.arange(n_steps)[None, :] + rng.random((pu.size, 1))) * step
    points = source + distances[..., None] * directions[:, None, :]
    inside = np.all((points >= lo) & (points < hi), axis=-1)
    chords = inside.sum(axis=1) * step

    cell_area = (u1 - u0) * (v1 - v0) / samples ** 2
    return float(chords.sum()) * cell_area / geometry.det_pixel ** 2


def test_single_voxel_matches_ray_marching():
    geometry = make_geometry("desk")
    index = (32, 32, 32)
    d = geometry.voxel
    centers = np.array([geometry.voxel_centers(axis)[i] for axis, i in enumerate(index)])
    column = np.ravel_multi_index(index, geometry.volume_shape)

    model = float(view_matrix(geometry, 0.0)[:, column].sum())
    oracle = ray_march_detector_sum(geometry, centers - d / 2, centers + d / 2)
    assert model > 0
    assert abs(model - oracle) <= 0.02 * oracle


def test_single_pixel_backprojects_inside_its_ray_cone(small_geometry):
    geometry = small_geometry
    views = view_angles(1)
    row, col = 16, 13
    data = np.zeros((1,) + geometry.detector_shape)
    data[0, row, col] = 1.0
    back = back_project(Sinogram(data=data, geometry=geometry, views=views), geometry, views).data

    d, pitch = geometry.voxel, geometry.det_pixel
    x = geometry.voxel_centers(0)[:, None, None]
    y = geometry.voxel_centers(1)[None, :, None]
    z = geometry.voxel_centers(2)[None, None, :]
    shape = geometry.volume_shape

    # Shadow of each voxel cube on the detector at angle 0, in pixel coordinates
    u_corners, v_corners = [], []
    for dx, dy, dz in itertools.product((-0.5, 0.5), repeat=3):
        mag = geometry.dsd / (geometry.dso - (x + dx * d))
        u_corners.append(np.broadcast_to(mag * (y + dy * d) / pitch + geometry.det_cols / 2.0, shape))
        v_corners.append(np.broadcast_to(mag * (z + dz * d) / pitch + geometry.det_rows / 2.0, shape))
    u_lo, u_hi = np.min(u_corners, axis=0), np.max(u_corners, axis=0)
    v_lo, v_hi = np.min(v_corners, axis=0), np.max(v_corners, axis=0)
    in_cone = (u_hi > col - 1e-9) & (u_lo < col + 1 + 1e-9) & (v_hi > row - 1e-9) & (v_lo < row + 1 + 1e-9)

    hit = back != 0
    assert hit.any()
    assert not np.any(hit & ~in_cone)
    assert hit.sum() < 0.1 * hit.size

    mag = geometry.dsd / (geometry.dso - x)
    u_center = np.broadcast_to(mag * y / pitch + geometry.det_cols / 2.0, shape)
    v_center = np.broadcast_to(mag * z / pitch + geometry.det_rows / 2.0, shape)
    on_axis = (u_center > col) & (u_center < col + 1) & (v_center > row) & (v_center < row + 1)
    assert on_axis.any()
    assert np.all(back[on_axis] > 0)
