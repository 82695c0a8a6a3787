"""Balayages de robustesse: rotation des vues et homothétie des objets de test"""

import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np
from tqdm import tqdm

from ..core.geometry import ConeBeamGeometry, view_angles
from ..core.metrics import make_mask, nhfen, nmae
from ..core.phantom_io import fit_volume, load_volume, rescale_volume, simulate_sinogram
from ..core.pipeline import (PipelineConfig, load_pipeline, manifest_geometry, pipeline_config_from_manifest,
                             reconstruct)
from ..core.projector import Volume3D
from ..core.training import StageCheckpoint
from ..errors import DimensionError
from .common import report, table

logger = logging.getLogger("sparse-ct.experiment")

DEFAULT_OFFSETS = (-22.5, -15.0, -7.5, 0.0, 7.5, 15.0, 22.5)
DEFAULT_SCALES = (0.7, 0.8, 0.9, 1.0, 1.1, 1.2, 1.3)
REFERENCE = {"rotation": 0.0, "scale": 1.0}


class Sweep:
    """Reconstruit chaque objet de test pour un réglage donné et mesure NMAE/NHFEN"""

    def __init__(self, kind: str, geometry: ConeBeamGeometry, checkpoints: Sequence[StageCheckpoint],
                 cfg: PipelineConfig, n_views: int, base_offset: float, dose: Optional[float], dilation: int):
        self.kind = kind
        self.geometry = geometry
        self.checkpoints = checkpoints
        self.cfg = cfg
        self.n_views = n_views
        self.base_offset = base_offset
        self.dose = dose
        self.dilation = dilation

    def prepare(self, gt: Volume3D, setting: float) -> Tuple[Volume3D, float]:
        """Objet et décalage angulaire effectifs pour un réglage"""
        if self.kind == "rotation":
            # Tourner les vues de +φ équivaut à tourner l'objet de -φ autour de l'axe z
            return gt, self.base_offset + setting
        return rescale_volume(gt, setting), self.base_offset

    def run(self, gt: Volume3D, setting: float, noise_seed: int = 0) -> Tuple[float, float]:
        target, offset = self.prepare(gt, setting)
        views = view_angles(self.n_views, offset)
        y = simulate_sinogram(target, self.geometry, views, noise_seed=noise_seed, dose=self.dose)
        result = reconstruct(y, self.geometry, views, self.checkpoints, self.cfg)
        mask = make_mask(target, self.dilation)
        return nmae(target, result.volume, mask), nhfen(target, result.volume, mask)


def relative_change(value: float, reference: Optional[float]) -> Optional[float]:
    if reference is None or reference == 0:
        return None
    return (value - reference) / reference


class ExperimentTool:
    """Expériences de robustesse en rotation (--offsets) ou en échelle (--scales)"""

    def execute(self, args: Dict[str, Any]) -> str:
        kind = args["kind"]
        manifest, checkpoints = load_pipeline(args["ckpt"])
        cfg = pipeline_config_from_manifest(manifest)
        geometry = manifest_geometry(manifest)
        n_views = args.get("views") or int(manifest.get("n_views", 8))
        base_offset = float(manifest.get("view_offset_deg", 0.0))
        dilation = args.get("dilate", cfg.dilation)

        if kind == "rotation":
            settings = list(args.get("offsets") or DEFAULT_OFFSETS)
        else:
            settings = list(args.get("scales") or DEFAULT_SCALES)
        reference = REFERENCE[kind]
        if reference not in settings:
            settings.append(reference)
        settings.sort()

        sweep = Sweep(kind, geometry, checkpoints, cfg, n_views, base_offset, args.get("dose"), dilation)
        phantoms = [(Path(p).stem, fit_volume(load_volume(p), geometry)) for p in args["phantoms"]]

        rows: List[Tuple[Any, ...]] = []
        scores: Dict[Tuple[str, float], Tuple[float, float]] = {}
        skipped: List[str] = []
        grid = [(name, gt, s) for name, gt in phantoms for s in settings]
        for name, gt, setting in tqdm(grid, desc=f"experiment {kind}", disable=True if args.get("quiet") else None):
            try:
                scores[(name, setting)] = sweep.run(gt, setting, args.get("noise_seed", 0))
            except DimensionError as e:
                logger.warning(f"{name}: échelle {setting:g} écartée ({e.message})")
                skipped.append(f"{name}@{setting:g}")
                continue
            logger.info(f"{name} {kind}={setting:g}: NMAE {scores[(name, setting)][0]:.4f}")

        worst = 0.0
        for name, _ in phantoms:
            ref = scores.get((name, reference))
            for setting in settings:
                if (name, setting) not in scores:
                    continue
                value_nmae, value_nhfen = scores[(name, setting)]
                change = relative_change(value_nmae, ref[0] if ref else None)
                if change is not None:
                    worst = max(worst, abs(change))
                rows.append((name, f"{setting:g}", value_nmae, value_nhfen, "-" if change is None else f"{change:+.2%}"))

        means = []
        for setting in settings:
            values = [scores[(n, setting)] for n, _ in phantoms if (n, setting) in scores]
            if values:
                means.append((f"{setting:g}", float(np.mean([v[0] for v in values])),
                              float(np.mean([v[1] for v in values]))))

        setting_name = "offset_deg" if kind == "rotation" else "scale"
        summary = report({
            "kind": kind,
            "phantoms": len(phantoms),
            "points": len(scores),
            "skipped": ",".join(skipped) or "none",
            "max_relative_change": worst,
        })
        return "\n".join([
            summary, "",
            table(("phantom", setting_name, "nmae", "nhfen", "rel_nmae"), rows), "",
            table((setting_name, "mean_nmae", "mean_nhfen"), means),
        ])
