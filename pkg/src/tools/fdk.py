from typing import Any, Dict

from ..core.fdk import fdk_reconstruct
from ..core.phantom_io import load_sinogram, save_volume
from .common import report


class FdkTool:
    """Reconstruction FDK d'un sinogramme"""

    def execute(self, args: Dict[str, Any]) -> str:
        sinogram = load_sinogram(args["input"])
        volume = fdk_reconstruct(sinogram, sinogram.geometry, sinogram.views, args.get("filter", "hann"))
        save_volume(volume, args["output"])
        return report({"output": args["output"], "views": sinogram.views.n_views, "filter": args.get("filter", "hann")})
