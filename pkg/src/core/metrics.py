"""Métriques de qualité: NMAE et NHFEN sur un masque d'objet"""

import logging
from typing import Union

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu
from skimage.morphology import ball

from ..errors import DimensionError, MetricError
from .projector import Volume3D

logger = logging.getLogger("sparse-ct.metrics")

LOG_SIZE = 15
LOG_SIGMA = 1.5
DEFAULT_DILATION = 3
SKIP_RATIO = 1e-9

VolumeLike = Union[Volume3D, np.ndarray]


def _array(volume: VolumeLike) -> np.ndarray:
    return np.asarray(volume.data if isinstance(volume, Volume3D) else volume, dtype=np.float64)


def _check_shapes(gt: np.ndarray, x: np.ndarray, mask: np.ndarray) -> None:
    if gt.shape != x.shape or gt.shape != mask.shape:
        raise DimensionError(f"formes incompatibles: gt {gt.shape}, x {x.shape}, masque {mask.shape}")


def make_mask(gt: VolumeLike, dilation_radius: int = DEFAULT_DILATION, fill_holes: bool = True) -> np.ndarray:
    """Seuil d'Otsu, remplissage de la coque puis dilatation par une boule de rayon donné"""
    data = _array(gt)
    if dilation_radius < 0:
        raise MetricError(f"rayon de dilatation négatif: {dilation_radius}")
    if float(data.max()) == float(data.min()):
        raise MetricError("volume constant: seuillage impossible")

    mask = data > threshold_otsu(data)
    if fill_holes:
        mask = ndimage.binary_fill_holes(mask)
    if dilation_radius > 0:
        mask = ndimage.binary_dilation(mask, structure=ball(dilation_radius).astype(bool))
    logger.debug(f"Masque: {int(mask.sum())} voxels (rayon {dilation_radius})")
    return mask


def roi_slices(mask: np.ndarray) -> np.ndarray:
    """Masques 2D par coupe z (axe 2)"""
    return np.moveaxis(np.asarray(mask, dtype=bool), 2, 0)


def nmae(gt: VolumeLike, x: VolumeLike, mask: np.ndarray) -> float:
    """‖M ⊙ (gt − x)‖₁ / ‖M ⊙ gt‖₁"""
    g, r, m = _array(gt), _array(x), np.asarray(mask, dtype=bool)
    _check_shapes(g, r, m)
    denominator = float(np.sum(np.abs(g[m])))
    if denominator == 0.0:
        raise MetricError("dénominateur NMAE nul (masque vide ou vérité terrain nulle)")
    return float(np.sum(np.abs(g[m] - r[m]))) / denominator


def log_kernel(size: int = LOG_SIZE, sigma: float = LOG_SIGMA) -> np.ndarray:
    """Noyau LoG échantillonné, normalisé par σ², de somme nulle"""
    if size < 3 or size % 2 == 0:
        raise MetricError(f"taille de noyau impaire >= 3 attendue, reçu {size}")
    if sigma <= 0:
        raise MetricError(f"sigma > 0 attendu, reçu {sigma}")

    r = np.arange(size, dtype=np.float64) - size // 2
    yy, xx = np.meshgrid(r, r, indexing="ij")
    g = np.exp(-(xx ** 2 + yy ** 2) / (2.0 * sigma ** 2))
    kernel = (g / g.sum()) * (xx ** 2 + yy ** 2 - 2.0 * sigma ** 2) / sigma ** 4
    kernel *= sigma ** 2
    return kernel - kernel.mean()


def high_frequency(image: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    return ndimage.correlate(image, kernel, mode="constant", cval=0.0)


def nhfen_per_slice(gt: VolumeLike, x: VolumeLike, mask: np.ndarray,
                    size: int = LOG_SIZE, sigma: float = LOG_SIGMA) -> np.ndarray:
    """Erreur LoG normalisée par coupe z; NaN pour les coupes écartées"""
    g, r, m = _array(gt), _array(x), np.asarray(mask, dtype=bool)
    _check_shapes(g, r, m)
    kernel = log_kernel(size, sigma)
    eps = SKIP_RATIO * float(np.max(np.abs(g)))

    values = np.full(g.shape[2], np.nan)
    for z in range(g.shape[2]):
        h_gt = high_frequency(np.where(m[:, :, z], g[:, :, z], 0.0), kernel)
        den = float(np.linalg.norm(h_gt))
        if den < eps or den == 0.0:
            continue
        h_x = high_frequency(np.where(m[:, :, z], r[:, :, z], 0.0), kernel)
        values[z] = float(np.linalg.norm(h_gt - h_x)) / den
    return values


def nhfen(gt: VolumeLike, x: VolumeLike, mask: np.ndarray,
          size: int = LOG_SIZE, sigma: float = LOG_SIGMA) -> float:
    values = nhfen_per_slice(gt, x, mask, size, sigma)
    kept = values[np.isfinite(values)]
    if kept.size == 0:
        raise MetricError("NHFEN: toutes les coupes ont un dénominateur nul")
    skipped = values.size - kept.size
    if skipped:
        logger.debug(f"NHFEN: {skipped} coupes écartées")
    return float(np.mean(kept))


def nmae_per_slice(gt: VolumeLike, x: VolumeLike, mask: np.ndarray) -> np.ndarray:
    """NMAE restreinte à chaque coupe z; NaN pour les coupes sans support"""
    g, r, m = _array(gt), _array(x), np.asarray(mask, dtype=bool)
    _check_shapes(g, r, m)
    values = np.full(g.shape[2], np.nan)
    for z, (gz, rz, mz) in enumerate(zip(np.moveaxis(g, 2, 0), np.moveaxis(r, 2, 0), roi_slices(m))):
        den = float(np.sum(np.abs(gz[mz])))
        if den > 0:
            values[z] = float(np.sum(np.abs(gz[mz] - rz[mz]))) / den
    return values


def evaluate(gt: VolumeLike, x: VolumeLike, mask: np.ndarray) -> dict:
    return {"nmae": nmae(gt, x, mask), "nhfen": nhfen(gt, x, mask)}
