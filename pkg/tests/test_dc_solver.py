import numpy as np
import pytest
from scipy import sparse

from src.core.dc_solver import DcConfig, data_consistency, solve_data_consistency
from src.core.projector import Sinogram, Volume3D, forward_project, view_matrix


@pytest.fixture
def measured(tiny_geometry, views4, rng):
    truth = Volume3D(data=rng.random(tiny_geometry.volume_shape) * 0.04, voxel=1.0)
    return truth, forward_project(truth, tiny_geometry, views4)


def dense_system(geometry, views):
    return sparse.vstack([view_matrix(geometry, angle) for angle in views.angles]).toarray()


def test_consistent_prior_is_a_fixed_point(tiny_geometry, views4, measured):
    truth, sinogram = measured
    result = solve_data_consistency(truth, sinogram, tiny_geometry, views4, DcConfig(clamp_nonnegative=False))
    assert result.iterations == 0
    assert np.allclose(result.volume.data, truth.data)


def test_matches_dense_solution(tiny_geometry, views4, measured, rng):
    _, sinogram = measured
    prior = Volume3D(data=rng.random(tiny_geometry.volume_shape) * 0.04, voxel=1.0)
    beta = 5.0
    result = solve_data_consistency(prior, sinogram, tiny_geometry, views4,
                                    DcConfig(beta=beta, n_cg=300, clamp_nonnegative=False))

    a = dense_system(tiny_geometry, views4)
    y = sinogram.data.reshape(-1).astype(np.float64)
    lhs = a.T @ a + beta * np.eye(a.shape[1])
    rhs = a.T @ y + beta * prior.data.reshape(-1)
    expected = np.linalg.solve(lhs, rhs).reshape(tiny_geometry.volume_shape)
    assert np.max(np.abs(result.volume.data - expected)) < 1e-8


def test_unit_beta_matches_dense_solution(tiny_geometry, views4, measured, rng):
    _, sinogram = measured
    prior = Volume3D(data=rng.random(tiny_geometry.volume_shape) * 0.04, voxel=1.0)
    result = solve_data_consistency(prior, sinogram, tiny_geometry, views4,
                                    DcConfig(beta=1.0, n_cg=500, clamp_nonnegative=False))

    a = dense_system(tiny_geometry, views4)
    y = sinogram.data.reshape(-1).astype(np.float64)
    lhs = a.T @ a + np.eye(a.shape[1])
    rhs = a.T @ y + prior.data.reshape(-1)
    expected = np.linalg.solve(lhs, rhs).reshape(tiny_geometry.volume_shape)
    assert np.linalg.norm(result.volume.data - expected) <= 1e-5 * np.linalg.norm(expected)


def test_huge_beta_returns_prior(tiny_geometry, views4, measured, rng):
    _, sinogram = measured
    prior = Volume3D(data=rng.random(tiny_geometry.volume_shape) * 0.04, voxel=1.0)
    result = solve_data_consistency(prior, sinogram, tiny_geometry, views4,
                                    DcConfig(beta=1e12, n_cg=10, clamp_nonnegative=False))
    assert np.max(np.abs(result.volume.data - prior.data)) < 1e-4


def test_large_beta_stays_on_prior(tiny_geometry, views4, measured, rng):
    _, sinogram = measured
    prior = Volume3D(data=rng.random(tiny_geometry.volume_shape) * 0.04, voxel=1.0)
    out = data_consistency(prior, sinogram, tiny_geometry, views4, beta=1e6, clamp_nonnegative=False)
    assert np.max(np.abs(out.data - prior.data)) < 1e-3 * np.max(prior.data)


def test_objective_decreases(tiny_geometry, views4, measured, rng):
    _, sinogram = measured
    prior = Volume3D(data=rng.random(tiny_geometry.volume_shape) * 0.04, voxel=1.0)
    result = solve_data_consistency(prior, sinogram, tiny_geometry, views4, DcConfig(n_cg=20))
    history = result.objective_history
    assert len(history) == result.iterations + 1
    assert all(b <= a * (1 + 1e-12) + 1e-15 for a, b in zip(history, history[1:]))
    assert not result.breakdown


def test_clamp_and_dtype(tiny_geometry, views4, rng):
    sinogram = Sinogram(data=np.zeros((4, 12, 12)), geometry=tiny_geometry, views=views4)
    prior = Volume3D(data=rng.standard_normal(tiny_geometry.volume_shape).astype(np.float32), voxel=1.0)
    out = data_consistency(prior, sinogram, tiny_geometry, views4, n_cg=5)
    assert out.data.dtype == np.float32
    assert np.all(out.data >= 0)


def test_tolerance_stops_early(tiny_geometry, views4, measured, rng):
    _, sinogram = measured
    prior = Volume3D(data=rng.random(tiny_geometry.volume_shape) * 0.04, voxel=1.0)
    result = solve_data_consistency(prior, sinogram, tiny_geometry, views4,
                                    DcConfig(beta=5.0, n_cg=200, tol=1e-6))
    assert 0 < result.iterations < 200


def test_invalid_config():
    with pytest.raises(ValueError):
        DcConfig(beta=0.0)
    with pytest.raises(ValueError):
        DcConfig(n_cg=0)
