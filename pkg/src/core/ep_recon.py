"""Reconstruction itérative régularisée préservant les contours (x_EP)

Objectif: Φ(x) = ½‖Ax − y‖² + β Σ ψ_δ(x_j − x_k) sur les différences premières
6-connexes, potentiel hyperbolique ψ_δ(t) = δ²(√(1 + (t/δ)²) − 1).
Minimisation par gradient conjugué non linéaire (Polak-Ribière, redémarrage
si la direction n'est pas de descente) avec recherche linéaire projetée.
"""

import logging
import math
from typing import List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import ConvergenceError, DimensionError
from .geometry import ConeBeamGeometry, ViewSet
from .metrics import nmae
from .phantom_io import SHELL_ATTENUATION
from .projector import ConeBeamProjector, Sinogram, Volume3D, check_volume, get_projector

logger = logging.getLogger("sparse-ct.ep")

BETA_GRID = (1e-2, 1e-1, 1.0, 1e1, 1e2)
# Frozen multiple of regularization_scale(), picked by tune_beta_ep on the training phantom
DEFAULT_BETA_FACTOR = 0.1


class EpConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta_ep: Optional[float] = Field(default=None, gt=0)
    delta: float = Field(default=0.1 * SHELL_ATTENUATION, gt=0)
    n_iters: int = Field(default=50, ge=1)
    nonnegative: bool = True
    max_backtracks: int = Field(default=20, ge=1)


def regularization_scale(geometry: ConeBeamGeometry, views: ViewSet) -> float:
    """Ordre de grandeur de diag(AᵀA), pour rendre beta_ep indépendant de l'échelle"""
    footprint = geometry.voxel * geometry.magnification / geometry.det_pixel
    return views.n_views * geometry.voxel ** 2 * footprint ** 4


def resolve_beta(cfg: EpConfig, geometry: ConeBeamGeometry, views: ViewSet) -> float:
    if cfg.beta_ep is not None:
        return cfg.beta_ep
    return DEFAULT_BETA_FACTOR * regularization_scale(geometry, views)


def potential(t: np.ndarray, delta: float) -> np.ndarray:
    return delta ** 2 * (np.sqrt(1.0 + (t / delta) ** 2) - 1.0)


def potential_derivative(t: np.ndarray, delta: float) -> np.ndarray:
    return t / np.sqrt(1.0 + (t / delta) ** 2)


def _differences(x: np.ndarray) -> List[np.ndarray]:
    return [np.diff(x, axis=axis) for axis in range(x.ndim)]


def _differences_adjoint(grads: Sequence[np.ndarray], shape) -> np.ndarray:
    out = np.zeros(shape, dtype=np.float64)
    for axis, g in enumerate(grads):
        lead = [slice(None)] * len(shape)
        trail = [slice(None)] * len(shape)
        lead[axis] = slice(None, -1)
        trail[axis] = slice(1, None)
        out[tuple(lead)] -= g
        out[tuple(trail)] += g
    return out


def _regularizer(x: np.ndarray, delta: float) -> float:
    return float(sum(np.sum(potential(d, delta)) for d in _differences(x)))


def _regularizer_gradient(x: np.ndarray, delta: float) -> np.ndarray:
    return _differences_adjoint([potential_derivative(d, delta) for d in _differences(x)], x.shape)


class EpProblem:
    """Objectif EP sur un projecteur donné, en double précision"""

    def __init__(self, projector: ConeBeamProjector, y: np.ndarray, beta: float, delta: float):
        self.projector = projector
        self.y = np.asarray(y, dtype=np.float64)
        self.beta = beta
        self.delta = delta

    def objective_from(self, x: np.ndarray, ax: np.ndarray) -> float:
        residual = ax - self.y
        return 0.5 * float(np.sum(residual * residual)) + self.beta * _regularizer(x, self.delta)

    def gradient_from(self, x: np.ndarray, ax: np.ndarray) -> np.ndarray:
        return self.projector.back(ax - self.y) + self.beta * _regularizer_gradient(x, self.delta)

    def forward(self, x: np.ndarray) -> np.ndarray:
        return self.projector.forward(x)

    def curvature(self, d: np.ndarray, ad: np.ndarray) -> float:
        """dᵀ H d pour un majorant quadratique (ψ'' <= 1)"""
        reg = sum(float(np.sum(diff * diff)) for diff in _differences(d))
        return float(np.sum(ad * ad)) + self.beta * reg


def _problem(x: Volume3D, y: Sinogram, cfg: EpConfig) -> Tuple[EpProblem, np.ndarray]:
    geometry, views = y.geometry, y.views
    check_volume(geometry, x.shape)
    beta = resolve_beta(cfg, geometry, views)
    problem = EpProblem(get_projector(geometry, views), y.data, beta, cfg.delta)
    return problem, np.asarray(x.data, dtype=np.float64)


def ep_objective(x: Volume3D, y: Sinogram, cfg: EpConfig) -> float:
    problem, data = _problem(x, y, cfg)
    return problem.objective_from(data, problem.forward(data))


def ep_gradient(x: Volume3D, y: Sinogram, cfg: EpConfig) -> Volume3D:
    problem, data = _problem(x, y, cfg)
    return x.like(problem.gradient_from(data, problem.forward(data)))


def ep_reconstruct(y: Sinogram, geometry: ConeBeamGeometry, views: ViewSet, cfg: EpConfig,
                   init: Volume3D, history: Optional[List[float]] = None) -> Volume3D:
    """NCG sur Φ initialisé par `init`; l'objectif ne croît jamais d'une itération à l'autre"""
    if y.data.shape != (views.n_views,) + geometry.detector_shape:
        raise DimensionError(f"sinogramme de forme {y.data.shape} incompatible avec la géométrie")
    check_volume(geometry, init.shape)

    beta = resolve_beta(cfg, geometry, views)
    problem = EpProblem(get_projector(geometry, views), y.data, beta, cfg.delta)
    x = np.asarray(init.data, dtype=np.float64)
    if cfg.nonnegative:
        x = np.maximum(x, 0.0)
    ax = problem.forward(x)
    phi = problem.objective_from(x, ax)
    g = problem.gradient_from(x, ax)
    d = -g
    history = history if history is not None else []
    history.append(phi)
    logger.info(f"EP: beta={beta:.3g}, delta={cfg.delta:.3g}, Φ0={phi:.6g}")

    stalled = False
    for k in range(cfg.n_iters):
        slope = float(np.sum(g * d))
        if slope >= 0:
            d, slope = -g, -float(np.sum(g * g))
        if slope == 0:
            logger.info(f"EP: gradient nul à l'itération {k}")
            break

        ad = problem.forward(d)
        alpha = -slope / max(problem.curvature(d, ad), np.finfo(float).tiny)

        accepted = False
        for _ in range(cfg.max_backtracks):
            trial = x + alpha * d
            if cfg.nonnegative and np.any(trial < 0):
                trial = np.maximum(trial, 0.0)
                a_trial = problem.forward(trial)
            else:
                a_trial = ax + alpha * ad
            phi_trial = problem.objective_from(trial, a_trial)
            if not math.isfinite(phi_trial):
                raise ConvergenceError("objectif non fini", iteration=k)
            if phi_trial <= phi:
                accepted = True
                break
            alpha *= 0.5

        if not accepted:
            if stalled:
                logger.warning(f"EP: recherche linéaire bloquée à l'itération {k}, arrêt")
                break
            # Retry once along steepest descent
            stalled = True
            d = -g
            continue
        stalled = False

        x, ax, phi = trial, a_trial, phi_trial
        g_new = problem.gradient_from(x, ax)
        if not np.all(np.isfinite(g_new)):
            raise ConvergenceError("gradient non fini", iteration=k)
        beta_pr = max(0.0, float(np.sum(g_new * (g_new - g))) / max(float(np.sum(g * g)), np.finfo(float).tiny))
        d = -g_new + beta_pr * d
        g = g_new
        history.append(phi)
        logger.debug(f"EP iter {k + 1}: Φ={phi:.8g}")

    out_dtype = np.float64 if init.data.dtype == np.float64 else np.float32
    return Volume3D(data=x.astype(out_dtype), voxel=geometry.voxel)


def tune_beta_ep(gt: Volume3D, y: Sinogram, geometry: ConeBeamGeometry, views: ViewSet,
                 cfg: EpConfig, init: Volume3D, mask: np.ndarray,
                 grid: Sequence[float] = BETA_GRID) -> Tuple[float, List[Tuple[float, float]]]:
    """Recherche en grille de beta_ep minimisant la NMAE sur le fantôme d'entraînement"""
    scale = regularization_scale(geometry, views)
    table = []
    for factor in grid:
        beta = factor * scale
        recon = ep_reconstruct(y, geometry, views, cfg.model_copy(update={"beta_ep": beta}), init)
        score = nmae(gt, recon, mask)
        table.append((beta, score))
        logger.info(f"EP tuning: beta={beta:.4g} -> NMAE={score:.4f}")
    best = min(table, key=lambda item: item[1])[0]
    return best, table
