from typing import Any, Dict

from ..core.phantom_io import make_phantom, save_volume, support_margin
from .common import report, resolve_geometry


class PhantomTool:
    """Génère un fantôme synthétique type noix sur la grille de la géométrie"""

    def execute(self, args: Dict[str, Any]) -> str:
        geometry = resolve_geometry(args)
        seed = args.get("seed", 0)
        volume = make_phantom(seed, geometry)
        save_volume(volume, args["output"])

        return report({
            "output": args["output"],
            "seed": seed,
            "shape": "x".join(str(n) for n in volume.shape),
            "voxel_mm": volume.voxel,
            "max": float(volume.data.max()),
            "margin_voxels": support_margin(volume),
        })
