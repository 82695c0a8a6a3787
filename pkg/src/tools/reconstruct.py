from pathlib import Path
from typing import Any, Dict, List, Optional

from ..core.metrics import make_mask, nmae
from ..core.phantom_io import fit_volume, load_sinogram, load_volume, save_volume
from ..core.pipeline import (ReconstructionResult, check_compatibility, destreak, initial_reconstruction,
                             load_pipeline, pipeline_config_from_manifest, reconstruct)
from ..core.projector import Volume3D
from .common import report, table


def dump_intermediates(directory: Path, result: ReconstructionResult) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    if result.x_ep is not None:
        save_volume(result.x_ep, directory / "x_ep.svol")
    lines = []
    for k, stage in enumerate(result.stages, 1):
        if stage.x_g is not None:
            save_volume(stage.x_g, directory / f"x_g_{k}.svol")
        if stage.x_k is not None:
            save_volume(stage.x_k, directory / f"x_{k}.svol")
        line = f"stage={k} dc_iterations={stage.dc_iterations} dc_breakdown={str(stage.dc_breakdown).lower()}"
        if stage.nmae is not None:
            line += f" nmae={stage.nmae:.6g}"
        lines.append(line)
    (directory / "stages.txt").write_text("\n".join(lines) + "\n")


class ReconstructTool:
    """Reconstruction multi-étages d'un sinogramme avec des checkpoints entraînés"""

    def execute(self, args: Dict[str, Any]) -> str:
        sinogram = load_sinogram(args["sino"])
        geometry, views = sinogram.geometry, sinogram.views
        manifest, checkpoints = load_pipeline(args["ckpt"])
        cfg = pipeline_config_from_manifest(manifest)
        gt: Optional[Volume3D] = fit_volume(load_volume(args["gt"]), geometry) if args.get("gt") else None

        if args.get("cnn_only"):
            check_compatibility(manifest, geometry, views)
            _, x_ep = initial_reconstruction(sinogram, geometry, views, cfg.ep, cfg.fdk_filter)
            volume = destreak(x_ep, checkpoints[0])
            save_volume(volume, args["output"])
            values: Dict[str, Any] = {"output": args["output"], "method": "cnn-only", "stages": 1}
            if gt is not None:
                values["nmae"] = nmae(gt, volume, make_mask(gt, cfg.dilation))
            return report(values)

        dump = args.get("dump_intermediates")
        result = reconstruct(sinogram, geometry, views, checkpoints, cfg, diagnostics=bool(dump), gt=gt,
                             manifest=manifest)
        save_volume(result.volume, args["output"])
        if dump:
            dump_intermediates(Path(dump), result)

        lines: List[str] = [report({"output": args["output"], "method": "multi-stage", "stages": len(checkpoints)})]
        if gt is not None:
            lines.append(table(("stage", "nmae", "dc_iterations"),
                               [(k, s.nmae, s.dc_iterations) for k, s in enumerate(result.stages, 1)]))
        return "\n".join(lines)
