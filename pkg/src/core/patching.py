"""Extraction de sous-volumes minces, coupe centrale et réagrégation des coupes"""

import logging
from dataclasses import dataclass
from typing import Dict, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from ..errors import DimensionError
from .projector import Volume3D

logger = logging.getLogger("sparse-ct.patching")


@dataclass(frozen=True)
class Subvolume:
    """Fenêtre [px, py, pz] du volume parent, centrée sur la coupe z_center"""

    data: np.ndarray
    z_center: int

    @property
    def depth(self) -> int:
        return self.data.shape[2]


def window(z_center: int, depth: int) -> Tuple[int, int]:
    """Bornes [début, fin) de la fenêtre z; profondeur paire: [z - D/2, z + D/2 - 1]"""
    start = z_center - depth // 2
    return start, start + depth


def valid_centers(nz: int, depth: int) -> range:
    if depth < 1:
        raise DimensionError(f"profondeur >= 1 attendue, reçu {depth}")
    if depth > nz:
        raise DimensionError(f"profondeur {depth} supérieure à nz={nz}")
    return range(depth // 2, nz - depth // 2)


def crop_bounds(n: int, crop: int) -> Tuple[int, int]:
    start = (n - crop) // 2
    return start, start + crop


def _check_crop(volume_shape, spatial_crop: int) -> None:
    nx, ny, _ = volume_shape
    if spatial_crop < 1 or spatial_crop > min(nx, ny):
        raise DimensionError(f"crop spatial {spatial_crop} hors de [1, {min(nx, ny)}]")


def iter_subvolumes(volume: Volume3D, depth: int, spatial_crop: Optional[int] = None) -> Iterator[Subvolume]:
    nx, ny, nz = volume.shape
    crop = min(nx, ny) if spatial_crop is None else spatial_crop
    _check_crop(volume.shape, crop)
    x0, x1 = crop_bounds(nx, crop)
    y0, y1 = crop_bounds(ny, crop)
    for z in valid_centers(nz, depth):
        z0, z1 = window(z, depth)
        yield Subvolume(data=volume.data[x0:x1, y0:y1, z0:z1], z_center=z)


def extract_subvolumes(volume: Volume3D, depth: int, spatial_crop: Optional[int] = None) -> List[Subvolume]:
    """Un sous-volume par centre z valide (pas de 1), ordonné par z croissant"""
    return list(iter_subvolumes(volume, depth, spatial_crop))


def central_slice(sub: Subvolume) -> np.ndarray:
    return sub.data[:, :, sub.depth // 2]


def aggregate_slices(slices: Mapping[int, np.ndarray], nz: int, depth: Optional[int] = None,
                     voxel: float = 1.0, full_shape: Optional[Tuple[int, int]] = None) -> Volume3D:
    """Empile les coupes par indice z; les coupes non couvertes restent à zéro

    Avec `depth`, les indices doivent couvrir exactement les centres valides.
    Avec `full_shape`, des coupes recadrées sont replacées au centre du plan.
    """
    if not slices:
        raise DimensionError("aucune coupe à agréger")
    indices = sorted(slices)
    if len(set(indices)) != len(indices):
        raise DimensionError("indices z dupliqués")
    if depth is not None:
        expected = set(valid_centers(nz, depth))
        missing = sorted(expected - set(indices))
        extra = sorted(set(indices) - expected)
        if missing:
            raise DimensionError(f"coupes manquantes pour z={missing}")
        if extra:
            raise DimensionError(f"coupes hors des centres valides: z={extra}")
    for z in indices:
        if not 0 <= z < nz:
            raise DimensionError(f"indice z={z} hors de [0, {nz})")

    first = np.asarray(slices[indices[0]])
    px, py = first.shape
    nx, ny = full_shape if full_shape is not None else (px, py)
    x0, x1 = crop_bounds(nx, px)
    y0, y1 = crop_bounds(ny, py)

    out = np.zeros((nx, ny, nz), dtype=first.dtype)
    for z in indices:
        piece = np.asarray(slices[z])
        if piece.shape != (px, py):
            raise DimensionError(f"coupe z={z} de forme {piece.shape}, attendu {(px, py)}")
        out[x0:x1, y0:y1, z] = piece
    return Volume3D(data=out, voxel=voxel)


def slice_dict(pairs) -> Dict[int, np.ndarray]:
    """Construit la table z -> coupe en refusant les doublons"""
    table: Dict[int, np.ndarray] = {}
    for z, piece in pairs:
        if z in table:
            raise DimensionError(f"indice z dupliqué: {z}")
        table[z] = piece
    return table
