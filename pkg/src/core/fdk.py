"""Reconstruction analytique FDK (détecteur plan, orbite circulaire complète)"""

import logging
import math
from typing import Literal

import numpy as np
from scipy import fft
from scipy.ndimage import map_coordinates

from ..errors import DimensionError
from ..utils.runtime import ordered_map
from .geometry import ConeBeamGeometry, ViewSet
from .projector import Sinogram, Volume3D

logger = logging.getLogger("sparse-ct.fdk")

FilterName = Literal["ramlak", "hann"]
FILTERS = ("ramlak", "hann")


def padded_length(n: int) -> int:
    """Plus petite puissance de deux >= 2n"""
    return 1 << max(1, int(math.ceil(math.log2(2 * n))))


def ramp_kernel(n_pad: int, pitch: float) -> np.ndarray:
    """Noyau ram-lak discret h[n] en disposition circulaire (longueur n_pad)"""
    n = np.fft.fftfreq(n_pad, d=1.0 / n_pad).astype(np.int64)
    h = np.zeros(n_pad)
    h[n == 0] = 1.0 / (4.0 * pitch ** 2)
    odd = (n % 2) == 1
    h[odd] = -1.0 / (np.pi ** 2 * n[odd].astype(np.float64) ** 2 * pitch ** 2)
    return h


def ramp_response(n_pad: int, pitch: float, filter: FilterName = "hann") -> np.ndarray:
    """Réponse fréquentielle (réelle) du filtre rampe, convolution incluse (facteur pitch)"""
    if filter not in FILTERS:
        raise ValueError(f"Filtre inconnu: {filter}")
    response = np.real(fft.fft(ramp_kernel(n_pad, pitch))) * pitch
    if filter == "hann":
        freq = np.fft.fftfreq(n_pad)
        response *= 0.5 * (1.0 + np.cos(2.0 * np.pi * freq))
    return response


def filter_rows(rows: np.ndarray, pitch: float, filter: FilterName = "hann") -> np.ndarray:
    """Filtre rampe le long du dernier axe, après zero-padding à >= 2x"""
    n = rows.shape[-1]
    n_pad = padded_length(n)
    response = ramp_response(n_pad, pitch, filter)
    spectrum = fft.fft(rows, n=n_pad, axis=-1)
    return np.real(fft.ifft(spectrum * response, axis=-1))[..., :n]


def ramp_filter_row(row: np.ndarray, filter: FilterName = "hann", pitch: float = 1.0) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1 or row.size < 2:
        raise DimensionError(f"ligne de longueur >= 2 attendue, reçu forme {row.shape}")
    return filter_rows(row, pitch, filter)


def fdk_reconstruct(sinogram: Sinogram, geometry: ConeBeamGeometry, views: ViewSet,
                    filter: FilterName = "hann") -> Volume3D:
    """FDK: pondération cosinus, filtrage rampe par ligne, rétroprojection pondérée"""
    expected = (views.n_views,) + geometry.detector_shape
    if sinogram.data.shape != expected:
        raise DimensionError(f"sinogramme de forme {sinogram.data.shape}, attendu {expected}")

    dso, dsd = geometry.dso, geometry.dsd
    # Virtual detector through the isocenter
    pitch_iso = geometry.det_pixel * dso / dsd
    u = geometry.detector_centers("u")[None, :]
    v = geometry.detector_centers("v")[:, None]
    cosine = dsd / np.sqrt(dsd ** 2 + u ** 2 + v ** 2)

    x = geometry.voxel_centers(0)[:, None, None]
    y = geometry.voxel_centers(1)[None, :, None]
    z = geometry.voxel_centers(2)[None, None, :]
    shape = geometry.volume_shape

    def backproject_view(index: int) -> np.ndarray:
        angle = views.angles[index]
        c, s = math.cos(angle), math.sin(angle)
        projection = np.asarray(sinogram.data[index], dtype=np.float64) * cosine
        filtered = filter_rows(projection, pitch_iso, filter)

        big_u = dso - (x * c + y * s)
        a = dso * (-x * s + y * c) / big_u
        b = dso * z / big_u
        col = np.broadcast_to(a / pitch_iso + (geometry.det_cols - 1) / 2.0, shape)
        row = np.broadcast_to(b / pitch_iso + (geometry.det_rows - 1) / 2.0, shape)
        sampled = map_coordinates(filtered, [row.ravel(), col.ravel()], order=1, mode="constant", cval=0.0)
        weight = np.broadcast_to((dso / big_u) ** 2, shape)
        return weight * sampled.reshape(shape)

    parts = ordered_map(backproject_view, range(views.n_views))
    volume = np.zeros(shape, dtype=np.float64)
    for part in parts:
        volume += part
    volume *= math.pi / views.n_views

    logger.debug(f"FDK terminé ({views.n_views} vues, filtre {filter})")
    return Volume3D(data=volume.astype(np.float32), voxel=geometry.voxel)
