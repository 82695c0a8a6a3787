from typing import Any, Dict

import numpy as np

from ..core.geometry import view_angles
from ..core.phantom_io import fit_volume, load_volume, save_sinogram, simulate_sinogram
from .common import report, resolve_geometry


class SimulateTool:
    """Projette un volume sur N vues équiréparties (bruit de Poisson optionnel)"""

    def execute(self, args: Dict[str, Any]) -> str:
        geometry = resolve_geometry(args)
        volume = fit_volume(load_volume(args["input"]), geometry)
        views = view_angles(args["views"], args.get("offset", 0.0))
        sinogram = simulate_sinogram(volume, geometry, views, noise_seed=args.get("noise_seed", 0),
                                     dose=args.get("dose"))
        save_sinogram(sinogram, args["output"])

        return report({
            "output": args["output"],
            "views": views.n_views,
            "offset_deg": views.offset_degrees,
            "dose": args.get("dose") or "none",
            "max_line_integral": float(np.max(sinogram.data)),
        })
