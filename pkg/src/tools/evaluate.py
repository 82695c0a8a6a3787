import math
from typing import Any, Dict

from ..core.metrics import make_mask, nhfen, nhfen_per_slice, nmae, nmae_per_slice
from ..core.phantom_io import fit_volume, load_sinogram, load_volume
from ..core.pipeline import destreak, load_pipeline, pipeline_config_from_manifest, reconstruct
from ..errors import DimensionError
from .common import report, table


def _cell(value: float) -> str:
    return "-" if math.isnan(value) else f"{value:.4f}"


class EvalTool:
    """NMAE et NHFEN d'une reconstruction, rapport clé=valeur puis tableau par coupe"""

    def execute(self, args: Dict[str, Any]) -> str:
        gt = load_volume(args["gt"])
        recon = load_volume(args["recon"])
        if gt.shape != recon.shape:
            raise DimensionError(f"vérité {gt.shape} et reconstruction {recon.shape} de formes différentes")
        mask = make_mask(gt, args.get("dilate", 3))

        summary = report({"nmae": nmae(gt, recon, mask), "nhfen": nhfen(gt, recon, mask),
                          "mask_voxels": int(mask.sum())})
        per_nmae = nmae_per_slice(gt, recon, mask)
        per_nhfen = nhfen_per_slice(gt, recon, mask)
        rows = [(z, _cell(a), _cell(b)) for z, (a, b) in enumerate(zip(per_nmae, per_nhfen))
                if not (math.isnan(a) and math.isnan(b))]
        return "\n".join([summary, "", table(("z", "nmae", "nhfen"), rows)])


class CompareTool:
    """Compare FDK, EP, CNN seul et pipeline complet sur un même sinogramme"""

    def execute(self, args: Dict[str, Any]) -> str:
        sinogram = load_sinogram(args["sino"])
        geometry, views = sinogram.geometry, sinogram.views
        gt = fit_volume(load_volume(args["gt"]), geometry)
        manifest, checkpoints = load_pipeline(args["ckpt"])
        cfg = pipeline_config_from_manifest(manifest)
        mask = make_mask(gt, args.get("dilate", cfg.dilation))

        result = reconstruct(sinogram, geometry, views, checkpoints, cfg, diagnostics=True, gt=gt, mask=mask,
                             manifest=manifest)
        methods = [
            ("fdk", result.x_fdk),
            ("ep", result.x_ep),
            ("cnn-only", destreak(result.x_ep, checkpoints[0])),
            (f"proposed-{len(checkpoints)}", result.volume),
        ]
        rows = [(name, nmae(gt, x, mask), nhfen(gt, x, mask)) for name, x in methods]
        values = {f"{name}.nmae": score for name, score, _ in rows}
        values.update({f"{name}.nhfen": score for name, _, score in rows})
        return "\n".join([report(values), "", table(("method", "nmae", "nhfen"), rows)])
