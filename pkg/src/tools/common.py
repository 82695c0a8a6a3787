"""Aides partagées par les outils: résolution de la géométrie, configs, rapports"""

import logging
from typing import Any, Dict, Iterable, List, Optional, Sequence

from ..core.ep_recon import EpConfig
from ..core.geometry import GEOMETRY_FIELDS, ConeBeamGeometry, load_geometry_config, make_geometry
from ..errors import ConfigError

logger = logging.getLogger("sparse-ct.tools")

DEFAULT_PRESET = "desk"


def resolve_geometry(args: Dict[str, Any]) -> ConeBeamGeometry:
    """Géométrie effective: drapeaux > fichier --config > preset"""
    config: Dict[str, Any] = {}
    if args.get("config"):
        config = load_geometry_config(args["config"])
    preset = args.get("preset") or config.pop("preset", None) or DEFAULT_PRESET
    config.pop("preset", None)

    fields = dict(config)
    for name in GEOMETRY_FIELDS:
        if args.get(name) is not None:
            fields[name] = args[name]
    logger.debug(f"Géométrie: preset={preset}, surcharges={sorted(fields)}")
    return make_geometry(preset, **fields)


def ep_config(args: Dict[str, Any], base: Optional[EpConfig] = None) -> EpConfig:
    base = base or EpConfig()
    updates = {key: args[flag] for flag, key in (("beta_ep", "beta_ep"), ("delta", "delta"), ("iters", "n_iters"))
               if args.get(flag) is not None}
    try:
        return EpConfig(**{**base.model_dump(), **updates})
    except ValueError as e:
        raise ConfigError(f"configuration EP invalide: {e}") from None


def report(values: Dict[str, Any]) -> str:
    """Rapport ligne à ligne `clé=valeur`"""
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            value = f"{value:.6g}"
        lines.append(f"{key}={value}")
    return "\n".join(lines)


def table(header: Sequence[str], rows: Iterable[Sequence[Any]]) -> str:
    """Tableau texte à colonnes alignées"""
    cells: List[List[str]] = [list(header)]
    for row in rows:
        cells.append([f"{v:.4f}" if isinstance(v, float) else str(v) for v in row])
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)
