from pathlib import Path
from typing import Any, Dict, Optional, Tuple

import numpy as np
from PIL import Image

from ..core.phantom_io import load_volume
from ..errors import DimensionError
from .common import report

PLANES = ("sagittal", "coronal", "transverse")


def central_planes(data: np.ndarray) -> Dict[str, np.ndarray]:
    """Coupes centrales orthogonales, orientées lignes = axe vertical de l'image"""
    nx, ny, nz = data.shape
    return {
        "sagittal": data[nx // 2, :, :].T[::-1],
        "coronal": data[:, ny // 2, :].T[::-1],
        "transverse": data[:, :, nz // 2].T,
    }


def to_gray(image: np.ndarray, window: Tuple[float, float]) -> np.ndarray:
    low, high = window
    if not high > low:
        return np.zeros(image.shape, dtype=np.uint8)
    scaled = (np.asarray(image, dtype=np.float64) - low) / (high - low)
    return np.round(np.clip(scaled, 0.0, 1.0) * 255).astype(np.uint8)


class SlicesTool:
    """Exporte les trois coupes centrales d'un volume en PGM 8 bits"""

    def execute(self, args: Dict[str, Any]) -> str:
        volume = load_volume(args["input"])
        if min(volume.shape) < 1:
            raise DimensionError(f"volume vide {volume.shape}")
        window: Optional[Tuple[float, float]] = args.get("window")
        if window is None:
            window = (float(volume.data.min()), float(volume.data.max()))

        directory = Path(args["output"])
        directory.mkdir(parents=True, exist_ok=True)
        stem = Path(args["input"]).stem
        written = []
        for plane, image in central_planes(volume.data).items():
            path = directory / f"{stem}_{plane}.pgm"
            Image.fromarray(np.ascontiguousarray(to_gray(image, window))).save(path, format="PPM")
            written.append(path.name)

        return report({"output": str(directory), "files": ",".join(written),
                       "window_low": float(window[0]), "window_high": float(window[1])})
