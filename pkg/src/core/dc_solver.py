"""Mise en cohérence avec les mesures: min ‖Ax − y‖² + β‖x − x_g‖² par gradient conjugué"""

import logging
from dataclasses import dataclass, field
from typing import List

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import DimensionError
from .geometry import ConeBeamGeometry, ViewSet
from .projector import Sinogram, Volume3D, check_volume, get_projector

logger = logging.getLogger("sparse-ct.dc")


class DcConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    beta: float = Field(default=1.0, gt=0)
    n_cg: int = Field(default=50, ge=1)
    clamp_nonnegative: bool = True
    # Relative residual below which CG stops early; 0 runs all n_cg iterations
    tol: float = Field(default=0.0, ge=0)


@dataclass
class DcResult:
    volume: Volume3D
    iterations: int
    breakdown: bool = False
    objective_history: List[float] = field(default_factory=list)


def dc_objective(ax: np.ndarray, y: np.ndarray, x: np.ndarray, x_g: np.ndarray, beta: float) -> float:
    residual = ax - y
    diff = x - x_g
    return float(np.sum(residual * residual)) + beta * float(np.sum(diff * diff))


def solve_data_consistency(x_g: Volume3D, y: Sinogram, geometry: ConeBeamGeometry, views: ViewSet,
                           cfg: DcConfig = DcConfig()) -> DcResult:
    """CG sur (AᵀA + βI) x = Aᵀy + β x_g, initialisé en x_g, en double précision"""
    check_volume(geometry, x_g.shape)
    expected = (views.n_views,) + geometry.detector_shape
    if y.data.shape != expected:
        raise DimensionError(f"sinogramme de forme {y.data.shape}, attendu {expected}")

    projector = get_projector(geometry, views)
    beta = cfg.beta
    prior = np.asarray(x_g.data, dtype=np.float64)
    meas = np.asarray(y.data, dtype=np.float64)

    x = prior.copy()
    ax = projector.forward(x)
    # r = b - H x0 = Aᵀ(y - A x_g) since the prior term vanishes at x_g
    r = projector.back(meas - ax)
    p = r.copy()
    rr = float(np.sum(r * r))
    rr0 = rr
    history = [dc_objective(ax, meas, x, prior, beta)]
    breakdown = False
    iterations = 0
    tiny = np.finfo(np.float64).tiny

    for k in range(cfg.n_cg):
        if rr == 0.0 or (cfg.tol > 0 and rr <= (cfg.tol ** 2) * rr0):
            logger.debug(f"DC: résidu négligeable après {k} itérations")
            break
        ap = projector.forward(p)
        hp = projector.back(ap) + beta * p
        curvature = float(np.sum(p * hp))
        if curvature <= tiny:
            breakdown = True
            logger.warning(f"DC: direction de courbure nulle à l'itération {k}, arrêt anticipé")
            break

        alpha = rr / curvature
        x += alpha * p
        ax += alpha * ap
        r -= alpha * hp
        rr_new = float(np.sum(r * r))
        p = r + (rr_new / rr) * p
        rr = rr_new
        iterations = k + 1

        history.append(dc_objective(ax, meas, x, prior, beta))
        logger.debug(f"DC iter {iterations}: objectif={history[-1]:.10g}")

    if cfg.clamp_nonnegative:
        x = np.maximum(x, 0.0)
    out_dtype = np.float64 if x_g.data.dtype == np.float64 else np.float32
    logger.info(f"DC: {iterations} itérations CG, objectif {history[0]:.6g} -> {history[-1]:.6g}")
    return DcResult(
        volume=Volume3D(data=x.astype(out_dtype), voxel=geometry.voxel),
        iterations=iterations,
        breakdown=breakdown,
        objective_history=history,
    )


def data_consistency(x_g: Volume3D, y: Sinogram, geometry: ConeBeamGeometry, views: ViewSet,
                     beta: float = 1.0, n_cg: int = 50, clamp_nonnegative: bool = True) -> Volume3D:
    cfg = DcConfig(beta=beta, n_cg=n_cg, clamp_nonnegative=clamp_nonnegative)
    return solve_data_consistency(x_g, y, geometry, views, cfg).volume
