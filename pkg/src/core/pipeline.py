"""Pipeline multi-étages: x_EP puis, par étage, débruitage -> agrégation -> cohérence aux données"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from ..errors import CheckpointError
from ..utils.parsers import parse_float_list
from ..utils.runtime import ordered_map
from .dc_solver import DcConfig, solve_data_consistency
from .ep_recon import EpConfig, ep_reconstruct, resolve_beta
from .fdk import FilterName, fdk_reconstruct
from .geometry import ConeBeamGeometry, ViewSet, geometry_hash
from .metrics import DEFAULT_DILATION, make_mask, nmae
from .nn import DiscriminatorParams, GeneratorParams, generator_forward, pack_params, param_header, unpack_params
from .patching import aggregate_slices, extract_subvolumes
from .phantom_io import read_container, write_container
from .projector import Sinogram, Volume3D, check_volume
from .training import StageCheckpoint, TrainConfig, train_stage

logger = logging.getLogger("sparse-ct.pipeline")

CHECKPOINT_MAGIC = b"SPARSECT-CKP"
MANIFEST = "manifest.json"


class PipelineConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    stages: int = Field(default=4, ge=1)
    fdk_filter: FilterName = "hann"
    dilation: int = Field(default=DEFAULT_DILATION, ge=0)
    ep: EpConfig = EpConfig()
    train: TrainConfig = TrainConfig()
    dc: DcConfig = DcConfig()


@dataclass
class StageOutput:
    x_g: Optional[Volume3D]
    x_k: Optional[Volume3D]
    dc_iterations: int
    dc_breakdown: bool
    nmae: Optional[float] = None


@dataclass
class ReconstructionResult:
    volume: Volume3D
    x_fdk: Optional[Volume3D] = None
    x_ep: Optional[Volume3D] = None
    stages: List[StageOutput] = field(default_factory=list)


@dataclass
class TrainingResult:
    checkpoints: List[StageCheckpoint]
    ep_nmae: float
    stage_nmae: List[float]
    beta_ep: float


def stage_file(index: int) -> str:
    return f"stage_{index:02d}.ckpt"


def initial_reconstruction(y: Sinogram, geometry: ConeBeamGeometry, views: ViewSet, ep: EpConfig,
                           fdk_filter: FilterName = "hann") -> Tuple[Volume3D, Volume3D]:
    """x_FDK puis x_EP = x_0 initialisé par x_FDK"""
    x_fdk = fdk_reconstruct(y, geometry, views, fdk_filter)
    x_ep = ep_reconstruct(y, geometry, views, ep, init=x_fdk)
    return x_fdk, x_ep


def destreak(volume: Volume3D, checkpoint: StageCheckpoint) -> Volume3D:
    """Applique G à chaque sous-volume et réagrège les coupes centrales (bords à zéro)"""
    cfg = checkpoint.config
    scale = np.float32(checkpoint.intensity_scale)
    scaled = volume.like(np.asarray(volume.data, dtype=np.float32) / scale)
    subs = extract_subvolumes(scaled, cfg.depth, cfg.spatial_crop)
    slices = ordered_map(lambda s: generator_forward(checkpoint.gen, s.data) * scale, subs)
    nx, ny, nz = volume.shape
    return aggregate_slices({s.z_center: piece for s, piece in zip(subs, slices)}, nz, depth=cfg.depth,
                            voxel=volume.voxel, full_shape=(nx, ny))


def run_stage(x_prev: Volume3D, checkpoint: StageCheckpoint, y: Sinogram, geometry: ConeBeamGeometry,
              views: ViewSet, dc: DcConfig) -> Tuple[Volume3D, Volume3D, Any]:
    x_g = destreak(x_prev, checkpoint)
    result = solve_data_consistency(x_g, y, geometry, views, dc)
    if result.breakdown:
        logger.warning(f"Étage {checkpoint.stage_index}: arrêt anticipé du CG ({result.iterations} itérations)")
    return x_g, result.volume, result


def train_pipeline(gt: Volume3D, y_train: Sinogram, geometry: ConeBeamGeometry, views: ViewSet,
                   cfg: PipelineConfig = PipelineConfig(), progress: bool = True) -> TrainingResult:
    """Entraînement glouton: l'étage k apprend x_{k-1} -> gt, puis x_k = DC(agrégat(G_k(x_{k-1})))"""
    check_volume(geometry, gt.shape)
    mask = make_mask(gt, cfg.dilation)
    _, x = initial_reconstruction(y_train, geometry, views, cfg.ep, cfg.fdk_filter)
    ep_score = nmae(gt, x, mask)
    logger.info(f"x_EP: NMAE entraînement {ep_score:.4f}")

    checkpoints: List[StageCheckpoint] = []
    scores: List[float] = []
    for k in range(1, cfg.stages + 1):
        train_cfg = cfg.train.model_copy(update={"seed": cfg.train.seed + k - 1})
        checkpoint = train_stage(x, gt, mask, train_cfg, stage_index=k, progress=progress)
        _, x, _ = run_stage(x, checkpoint, y_train, geometry, views, cfg.dc)
        scores.append(nmae(gt, x, mask))
        checkpoints.append(checkpoint)
        logger.info(f"Étage {k}/{cfg.stages}: NMAE entraînement {scores[-1]:.4f}")

    return TrainingResult(checkpoints=checkpoints, ep_nmae=ep_score, stage_nmae=scores,
                          beta_ep=resolve_beta(cfg.ep, geometry, views))


def check_order(checkpoints: Sequence[StageCheckpoint]) -> None:
    indices = [c.stage_index for c in checkpoints]
    if indices != list(range(1, len(checkpoints) + 1)):
        raise CheckpointError(f"étages attendus 1..{len(checkpoints)}, reçu {indices}")


def reconstruct(y: Sinogram, geometry: ConeBeamGeometry, views: ViewSet, checkpoints: Sequence[StageCheckpoint],
                cfg: PipelineConfig = PipelineConfig(), diagnostics: bool = False,
                gt: Optional[Volume3D] = None, mask: Optional[np.ndarray] = None,
                manifest: Optional[Dict[str, Any]] = None) -> ReconstructionResult:
    """Inférence: x_0 = EP(FDK(y)), puis les K étages dans l'ordre"""
    if manifest is not None:
        check_compatibility(manifest, geometry, views)
    if not checkpoints:
        raise CheckpointError("aucun étage à appliquer")
    check_order(checkpoints)
    if gt is not None and mask is None:
        mask = make_mask(gt, cfg.dilation)

    x_fdk, x = initial_reconstruction(y, geometry, views, cfg.ep, cfg.fdk_filter)
    result = ReconstructionResult(volume=x, x_fdk=x_fdk if diagnostics else None, x_ep=x if diagnostics else None)
    for checkpoint in checkpoints:
        x_g, x, dc = run_stage(x, checkpoint, y, geometry, views, cfg.dc)
        score = nmae(gt, x, mask) if gt is not None else None
        result.stages.append(StageOutput(
            x_g=x_g if diagnostics else None,
            x_k=x if diagnostics else None,
            dc_iterations=dc.iterations,
            dc_breakdown=dc.breakdown,
            nmae=score,
        ))
        if score is not None:
            logger.info(f"Étage {checkpoint.stage_index}: NMAE {score:.4f}")
    result.volume = x
    return result


# --- Persistence -----------------------------------------------------------

def save_checkpoint(checkpoint: StageCheckpoint, path: Union[str, Path]) -> None:
    header: Dict[str, Any] = {"kind": "stage", "stage_index": checkpoint.stage_index,
                              "intensity_scale": float(checkpoint.intensity_scale)}
    header.update({f"train.{k}": ("" if v is None else v) for k, v in checkpoint.config.model_dump().items()})
    header["g_losses"] = [float(v) for v in checkpoint.g_losses]
    header["d_losses"] = [float(v) for v in checkpoint.d_losses]
    header["mse_history"] = [float(v) for v in checkpoint.mse_history]
    header.update(param_header(checkpoint.gen, "gen"))
    header.update(param_header(checkpoint.disc, "disc"))
    write_container(path, CHECKPOINT_MAGIC, header, pack_params(checkpoint.gen, checkpoint.disc))


def load_checkpoint(path: Union[str, Path]) -> StageCheckpoint:
    try:
        header, payload = read_container(path, CHECKPOINT_MAGIC)
    except ValueError as e:
        raise CheckpointError(str(e)) from None
    gen, offset = unpack_params(GeneratorParams, header, "gen", payload)
    disc, offset = unpack_params(DiscriminatorParams, header, "disc", payload, offset)
    if offset != len(payload):
        raise CheckpointError(f"{path}: {len(payload) - offset} octets excédentaires")
    try:
        train = {k[len("train."):]: v for k, v in header.items() if k.startswith("train.")}
        config = TrainConfig(**{k: (None if v == "" else v) for k, v in train.items()})
        return StageCheckpoint(
            stage_index=int(header["stage_index"]),
            gen=gen,
            disc=disc,
            config=config,
            intensity_scale=float(header["intensity_scale"]),
            g_losses=parse_float_list(header.get("g_losses", "")),
            d_losses=parse_float_list(header.get("d_losses", "")),
            mse_history=parse_float_list(header.get("mse_history", "")),
        )
    except (KeyError, ValueError) as e:
        raise CheckpointError(f"{path}: en-tête invalide: {e}") from None


def save_pipeline(directory: Union[str, Path], result: TrainingResult, geometry: ConeBeamGeometry,
                  views: ViewSet, cfg: PipelineConfig) -> Path:
    """Un fichier par étage + manifest.json (géométrie, K, graines, NMAE par étage)"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for checkpoint in result.checkpoints:
        save_checkpoint(checkpoint, directory / stage_file(checkpoint.stage_index))

    manifest = {
        "format": 1,
        "stages": len(result.checkpoints),
        "files": [stage_file(c.stage_index) for c in result.checkpoints],
        "seeds": [c.config.seed for c in result.checkpoints],
        "geometry": geometry.to_dict(),
        "geometry_hash": geometry_hash(geometry),
        "n_views": views.n_views,
        "view_offset_deg": views.offset_degrees,
        "beta_ep": result.beta_ep,
        "config": cfg.model_dump(),
        "training_nmae": {"ep": result.ep_nmae, "stages": result.stage_nmae},
    }
    path = directory / MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    logger.info(f"Checkpoints écrits dans {directory} ({len(result.checkpoints)} étages)")
    return path


def load_pipeline(directory: Union[str, Path]) -> Tuple[Dict[str, Any], List[StageCheckpoint]]:
    directory = Path(directory)
    try:
        manifest = json.loads((directory / MANIFEST).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CheckpointError(f"manifeste illisible dans {directory}: {e}") from None
    try:
        files = manifest["files"]
    except KeyError:
        raise CheckpointError(f"{directory / MANIFEST}: champ 'files' absent") from None
    if len(files) != manifest.get("stages"):
        raise CheckpointError(f"{directory / MANIFEST}: {len(files)} fichiers pour {manifest.get('stages')} étages")
    checkpoints = [load_checkpoint(directory / name) for name in files]
    check_order(checkpoints)
    return manifest, checkpoints


def check_compatibility(manifest: Dict[str, Any], geometry: ConeBeamGeometry, views: ViewSet) -> None:
    """Erreur si la géométrie diffère; avertissement si le nombre de vues diffère"""
    if manifest.get("geometry_hash") != geometry_hash(geometry):
        raise CheckpointError("géométrie du sinogramme différente de celle de l'entraînement")
    if manifest.get("n_views") != views.n_views:
        logger.warning(f"checkpoints entraînés avec {manifest.get('n_views')} vues, sinogramme à {views.n_views} vues")


def pipeline_config_from_manifest(manifest: Dict[str, Any]) -> PipelineConfig:
    try:
        return PipelineConfig(**manifest.get("config", {}))
    except ValueError as e:
        raise CheckpointError(f"configuration du manifeste invalide: {e}") from None


def manifest_geometry(manifest: Dict[str, Any]) -> ConeBeamGeometry:
    """Géométrie d'entraînement enregistrée dans le manifeste (empreinte vérifiée)"""
    try:
        geometry = ConeBeamGeometry(**manifest["geometry"])
    except (KeyError, TypeError, ValueError) as e:
        raise CheckpointError(f"géométrie du manifeste invalide: {e}") from None
    if manifest.get("geometry_hash") not in (None, geometry_hash(geometry)):
        raise CheckpointError("empreinte de géométrie du manifeste incohérente")
    return geometry
