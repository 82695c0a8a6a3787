from typing import Any, Dict

from ..core.dc_solver import DcConfig, solve_data_consistency
from ..core.phantom_io import fit_volume, load_sinogram, load_volume, save_volume
from .common import report


class DcTool:
    """Mise en cohérence d'un volume a priori avec les mesures (CG)"""

    def execute(self, args: Dict[str, Any]) -> str:
        sinogram = load_sinogram(args["input"])
        prior = fit_volume(load_volume(args["prior"]), sinogram.geometry)
        cfg = DcConfig(beta=args.get("beta", 1.0), n_cg=args.get("cg_iters", 50),
                       clamp_nonnegative=not args.get("no_clamp", False))
        result = solve_data_consistency(prior, sinogram, sinogram.geometry, sinogram.views, cfg)
        save_volume(result.volume, args["output"])
        return report({
            "output": args["output"],
            "iterations": result.iterations,
            "breakdown": str(result.breakdown).lower(),
            "objective_initial": result.objective_history[0],
            "objective_final": result.objective_history[-1],
        })
