from typing import Any, Dict

from ..core.dc_solver import DcConfig
from ..core.phantom_io import fit_volume, load_sinogram, load_volume
from ..core.pipeline import PipelineConfig, save_pipeline, train_pipeline
from ..core.training import TrainConfig
from .common import ep_config, report, table


def pipeline_config(args: Dict[str, Any]) -> PipelineConfig:
    train = TrainConfig(
        epochs=args.get("epochs", 40),
        batch_size=args.get("batch", 6),
        disc_every=args.get("disc_every", 10),
        lr_g=args.get("lr_g", 1e-3),
        lr_d=args.get("lr_d", 1e-4),
        seed=args.get("seed", 0),
    )
    dc = DcConfig(beta=args.get("dc_beta", 1.0), n_cg=args.get("cg_iters", 50))
    return PipelineConfig(stages=args.get("stages", 4), dilation=args.get("dilation", 3),
                          ep=ep_config(args), train=train, dc=dc)


class TrainTool:
    """Entraîne les K étages sur un volume et ses mesures, écrit les checkpoints"""

    def execute(self, args: Dict[str, Any]) -> str:
        sinogram = load_sinogram(args["sino"])
        geometry, views = sinogram.geometry, sinogram.views
        gt = fit_volume(load_volume(args["gt"]), geometry)
        cfg = pipeline_config(args)

        result = train_pipeline(gt, sinogram, geometry, views, cfg, progress=not args.get("quiet", False))
        manifest = save_pipeline(args["output"], result, geometry, views, cfg)

        rows = [("ep", result.ep_nmae)] + [(f"stage_{k}", s) for k, s in enumerate(result.stage_nmae, 1)]
        return "\n".join([
            report({"output": args["output"], "manifest": str(manifest), "stages": cfg.stages,
                    "views": views.n_views, "beta_ep": result.beta_ep}),
            table(("step", "train_nmae"), rows),
        ])
