"""Projecteur cone-beam à empreinte séparable et sa rétroprojection adjointe exacte

Chaque voxel est projeté sur le détecteur par une empreinte rectangulaire
séparable (u, v). Amplitude = longueur de corde approchée
voxel * |r| / max(|r_x|, |r_y|), largeur transaxiale = M * voxel * max(|r_x|, |r_y|) / ρ,
hauteur axiale = M * voxel. Les poids pixel-voxel sont rangés dans une matrice
creuse par vue; la rétroprojection applique la transposée de ces mêmes poids.
"""

import functools
import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy import sparse

from ..errors import DimensionError
from ..utils.runtime import ordered_map
from .geometry import ConeBeamGeometry, ViewSet

logger = logging.getLogger("sparse-ct.projector")

# Views kept in memory per projector; above this matrices are rebuilt on demand
MAX_CACHED_VIEWS = 16


@dataclass
class Volume3D:
    """Champ d'atténuation (mm^-1) sur une grille [nx, ny, nz], origine à l'isocentre"""

    data: np.ndarray
    voxel: float

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        if data.ndim != 3:
            raise DimensionError(f"volume 3D attendu, reçu {data.ndim} dimensions")
        if not np.all(np.isfinite(data)):
            raise DimensionError("volume contenant des valeurs non finies")
        self.data = data

    @property
    def shape(self):
        return self.data.shape

    def like(self, data: np.ndarray) -> "Volume3D":
        return Volume3D(data=data, voxel=self.voxel)


@dataclass
class Sinogram:
    """Projections [n_vues, lignes, colonnes] (intégrales de ligne, sans unité)"""

    data: np.ndarray
    geometry: ConeBeamGeometry
    views: ViewSet

    def __post_init__(self):
        data = np.asarray(self.data)
        if not np.issubdtype(data.dtype, np.floating):
            data = data.astype(np.float32)
        expected = (self.views.n_views,) + self.geometry.detector_shape
        if data.shape != expected:
            raise DimensionError(f"sinogramme de forme {data.shape}, attendu {expected}")
        if not np.all(np.isfinite(data)):
            raise DimensionError("sinogramme contenant des valeurs non finies")
        self.data = data


def check_volume(geometry: ConeBeamGeometry, shape) -> None:
    if tuple(shape) != geometry.volume_shape:
        raise DimensionError(f"volume de forme {tuple(shape)}, géométrie {geometry.volume_shape}")


def _interval_overlaps(lo: np.ndarray, hi: np.ndarray, n: int):
    """Recouvrement (en pixels) de [lo, hi] avec les pixels [k, k+1), pour chaque k couvert"""
    width = int(math.ceil(float(np.max(hi - lo)))) + 1
    first = np.floor(lo).astype(np.int64)
    for step in range(width):
        index = first + step
        overlap = np.minimum(hi, index + 1) - np.maximum(lo, index)
        valid = (overlap > 0) & (index >= 0) & (index < n)
        yield index, np.where(valid, overlap, 0.0), valid


def view_matrix(geometry: ConeBeamGeometry, angle: float) -> sparse.csr_matrix:
    """Matrice creuse (pixels x voxels) d'une vue"""
    d = geometry.voxel
    x = geometry.voxel_centers(0)[:, None, None]
    y = geometry.voxel_centers(1)[None, :, None]
    z = geometry.voxel_centers(2)[None, None, :]
    shape = geometry.volume_shape
    c, s = math.cos(angle), math.sin(angle)

    # In-plane quantities depend on (x, y) only
    t_src = geometry.dso - (x * c + y * s)
    w = -x * s + y * c
    mag = geometry.dsd / t_src
    rx = x - geometry.dso * c
    ry = y - geometry.dso * s
    rho = np.sqrt(rx ** 2 + ry ** 2)
    dominant = np.maximum(np.abs(rx), np.abs(ry))
    r_norm = np.sqrt(rho ** 2 + z ** 2)

    amp = np.broadcast_to(d * r_norm / dominant, shape)
    pitch = geometry.det_pixel
    u_center = np.broadcast_to(mag * w / pitch + geometry.det_cols / 2.0, shape)
    half_u = np.broadcast_to(0.5 * mag * d * dominant / rho / pitch, shape)
    v_center = np.broadcast_to(mag * z / pitch + geometry.det_rows / 2.0, shape)
    half_v = np.broadcast_to(0.5 * mag * d / pitch, shape)

    amp = amp.ravel()
    u_lo, u_hi = (u_center - half_u).ravel(), (u_center + half_u).ravel()
    v_lo, v_hi = (v_center - half_v).ravel(), (v_center + half_v).ravel()
    voxels = np.arange(amp.size, dtype=np.int64)

    rows, cols, vals = [], [], []
    u_terms = list(_interval_overlaps(u_lo, u_hi, geometry.det_cols))
    for iv, ov_v, ok_v in _interval_overlaps(v_lo, v_hi, geometry.det_rows):
        for iu, ov_u, ok_u in u_terms:
            keep = ok_u & ok_v
            if not np.any(keep):
                continue
            rows.append(iv[keep] * geometry.det_cols + iu[keep])
            cols.append(voxels[keep])
            vals.append(amp[keep] * ov_u[keep] * ov_v[keep])

    n_pixels = geometry.det_rows * geometry.det_cols
    if not rows:
        return sparse.csr_matrix((n_pixels, amp.size), dtype=np.float64)
    return sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n_pixels, amp.size),
    )


class ConeBeamProjector:
    """Opérateur A et son adjoint Aᵀ pour une géométrie et un jeu de vues"""

    def __init__(self, geometry: ConeBeamGeometry, views: ViewSet, cache: Optional[bool] = None):
        self.geometry = geometry
        self.views = views
        self.cache = views.n_views <= MAX_CACHED_VIEWS if cache is None else cache
        self._matrices: List[Optional[sparse.csr_matrix]] = [None] * views.n_views

    def _matrix(self, index: int) -> sparse.csr_matrix:
        matrix = self._matrices[index]
        if matrix is None:
            matrix = view_matrix(self.geometry, self.views.angles[index])
            if self.cache:
                self._matrices[index] = matrix
        return matrix

    def forward(self, x: np.ndarray) -> np.ndarray:
        """y = A x; conserve la précision double si x est en float64"""
        check_volume(self.geometry, x.shape)
        flat = np.ascontiguousarray(x, dtype=np.float64).ravel()
        out_dtype = np.float64 if x.dtype == np.float64 else np.float32

        def project(index: int) -> np.ndarray:
            return self._matrix(index) @ flat

        views = ordered_map(project, range(self.views.n_views))
        y = np.stack(views).reshape((self.views.n_views,) + self.geometry.detector_shape)
        return y.astype(out_dtype, copy=False)

    def back(self, y: np.ndarray) -> np.ndarray:
        """x = Aᵀ y, sommation dans l'ordre des vues (indépendante du nombre de threads)"""
        expected = (self.views.n_views,) + self.geometry.detector_shape
        if y.shape != expected:
            raise DimensionError(f"sinogramme de forme {y.shape}, attendu {expected}")
        flat = np.asarray(y, dtype=np.float64).reshape(self.views.n_views, -1)
        out_dtype = np.float64 if y.dtype == np.float64 else np.float32

        def backproject(index: int) -> np.ndarray:
            return self._matrix(index).T @ flat[index]

        parts = ordered_map(backproject, range(self.views.n_views))
        x = np.zeros(parts[0].shape, dtype=np.float64)
        for part in parts:
            x += part
        return x.reshape(self.geometry.volume_shape).astype(out_dtype, copy=False)

    def normal(self, x: np.ndarray) -> np.ndarray:
        return self.back(self.forward(x))


@functools.lru_cache(maxsize=4)
def get_projector(geometry: ConeBeamGeometry, views: ViewSet) -> ConeBeamProjector:
    """Projecteur partagé (matrices mises en cache) pour un couple géométrie/vues"""
    logger.debug(f"Nouveau projecteur: {views.n_views} vues, volume {geometry.volume_shape}")
    return ConeBeamProjector(geometry, views)


def forward_project(volume: Volume3D, geometry: ConeBeamGeometry, views: ViewSet) -> Sinogram:
    check_volume(geometry, volume.shape)
    data = get_projector(geometry, views).forward(volume.data)
    return Sinogram(data=data, geometry=geometry, views=views)


def back_project(sinogram: Sinogram, geometry: ConeBeamGeometry, views: ViewSet) -> Volume3D:
    if sinogram.data.shape != (views.n_views,) + geometry.detector_shape:
        raise DimensionError(
            f"sinogramme de forme {sinogram.data.shape}, attendu {(views.n_views,) + geometry.detector_shape}"
        )
    data = get_projector(geometry, views).back(sinogram.data)
    return Volume3D(data=data, voxel=geometry.voxel)
