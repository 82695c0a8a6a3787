from typing import Any, Dict

from ..core.phantom_io import load_raw_volume, save_volume
from .common import report


class ImportRawTool:
    """Convertit un volume brut (dimensions fournies) au format conteneur"""

    def execute(self, args: Dict[str, Any]) -> str:
        volume = load_raw_volume(args["input"], args["dims"], dtype=args.get("dtype", "<f4"),
                                 voxel=args.get("voxel", 1.0), order=args.get("order", "x-fastest"),
                                 scale=args.get("scale", 1.0))
        save_volume(volume, args["output"])
        return report({
            "output": args["output"],
            "shape": "x".join(str(n) for n in volume.shape),
            "voxel_mm": volume.voxel,
            "min": float(volume.data.min()),
            "max": float(volume.data.max()),
        })
