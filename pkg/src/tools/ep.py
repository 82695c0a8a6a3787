import logging
from typing import Any, Dict

from ..core.ep_recon import ep_reconstruct, resolve_beta, tune_beta_ep
from ..core.fdk import fdk_reconstruct
from ..core.metrics import make_mask
from ..core.phantom_io import fit_volume, load_sinogram, load_volume, save_volume
from .common import ep_config, report, table

logger = logging.getLogger("sparse-ct.tools")


class EpTool:
    """Reconstruction itérative préservant les contours, initialisée par FDK ou un volume"""

    def execute(self, args: Dict[str, Any]) -> str:
        sinogram = load_sinogram(args["input"])
        geometry, views = sinogram.geometry, sinogram.views
        cfg = ep_config(args)

        if args.get("init", "fdk") == "fdk":
            init = fdk_reconstruct(sinogram, geometry, views)
        else:
            init = fit_volume(load_volume(args["init"]), geometry)

        lines = []
        if args.get("tune_beta"):
            gt = fit_volume(load_volume(args["gt"]), geometry)
            best, scores = tune_beta_ep(gt, sinogram, geometry, views, cfg, init, make_mask(gt, args.get("dilation", 3)))
            cfg = cfg.model_copy(update={"beta_ep": best})
            lines.append(table(("beta_ep", "nmae"), [(f"{b:.4g}", s) for b, s in scores]))
            logger.info(f"beta_ep retenu: {best:.4g}, à passer à train --beta-ep")

        history = []
        volume = ep_reconstruct(sinogram, geometry, views, cfg, init, history=history)
        save_volume(volume, args["output"])
        lines.insert(0, report({
            "output": args["output"],
            "beta_ep": resolve_beta(cfg, geometry, views),
            "delta": cfg.delta,
            "iterations": len(history) - 1,
            "objective_initial": history[0],
            "objective_final": history[-1],
        }))
        return "\n".join(lines)
