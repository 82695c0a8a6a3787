"""Géométrie d'acquisition cone-beam (orbite circulaire, détecteur plan)

Conventions partagées par tout le paquet:

* repère isocentre, orbite dans le plan z = 0, source en
  (dso cos θ, dso sin θ, 0);
* axe détecteur u = (-sin θ, cos θ, 0), axe v = z;
* centres de voxels en (i - (n-1)/2) * voxel, centres de pixels en
  (j - (n-1)/2) * det_pixel.
"""

import hashlib
import logging
import math
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError, model_validator

from ..errors import ConfigError, GeometryError
from ..utils.parsers import format_key_values, parse_key_values

logger = logging.getLogger("sparse-ct.geometry")

GEOMETRY_FIELDS = (
    "dso", "dsd", "det_rows", "det_cols", "det_pixel",
    "vol_nx", "vol_ny", "vol_nz", "voxel", "require_full_fov",
)

PRESETS: Dict[str, Dict[str, Any]] = {
    # Source-detector 200 mm, object-detector 40.8 mm, 150x150 @ 0.4 mm, 501^3 @ 0.12 mm.
    # The full grid overhangs the detector; only the walnut itself is inside the FOV.
    "paper-full": {
        "dso": 159.2, "dsd": 200.0,
        "det_rows": 150, "det_cols": 150, "det_pixel": 0.4,
        "vol_nx": 501, "vol_ny": 501, "vol_nz": 501, "voxel": 0.12,
        "require_full_fov": False,
    },
    # Same physical extent on a 64^3 grid; 1.25 mm pitch would not cover the
    # magnified footprint (75.4 mm), 3.125 mm does (150 mm).
    "desk": {
        "dso": 159.2, "dsd": 200.0,
        "det_rows": 48, "det_cols": 48, "det_pixel": 3.125,
        "vol_nx": 64, "vol_ny": 64, "vol_nz": 64, "voxel": 0.9375,
    },
}


class ConeBeamGeometry(BaseModel):
    """Géométrie validée, immuable et hachable"""

    model_config = ConfigDict(frozen=True)

    dso: float
    dsd: float
    det_rows: int
    det_cols: int
    det_pixel: float
    vol_nx: int
    vol_ny: int
    vol_nz: int
    voxel: float
    require_full_fov: bool = True

    @model_validator(mode="after")
    def _check_invariants(self) -> "ConeBeamGeometry":
        if not self.dso > 0:
            raise ValueError(f"dso > 0 violé (dso={self.dso})")
        if not self.dsd > self.dso:
            raise ValueError(f"dsd > dso violé (dsd={self.dsd}, dso={self.dso})")
        for name in ("det_rows", "det_cols", "vol_nx", "vol_ny", "vol_nz"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} >= 1 violé ({name}={getattr(self, name)})")
        if not self.det_pixel > 0:
            raise ValueError(f"det_pixel > 0 violé (det_pixel={self.det_pixel})")
        if not self.voxel > 0:
            raise ValueError(f"voxel > 0 violé (voxel={self.voxel})")

        if self.require_full_fov:
            transaxial = max(self.vol_nx, self.vol_ny) * self.voxel * self.magnification
            axial = self.vol_nz * self.voxel * self.magnification
            if transaxial > self.det_cols * self.det_pixel:
                raise ValueError(
                    f"empreinte transaxiale {transaxial:.3f} mm > détecteur "
                    f"{self.det_cols * self.det_pixel:.3f} mm (vol_nx*voxel*dsd/dso <= det_cols*det_pixel)"
                )
            if axial > self.det_rows * self.det_pixel:
                raise ValueError(
                    f"empreinte axiale {axial:.3f} mm > détecteur "
                    f"{self.det_rows * self.det_pixel:.3f} mm (vol_nz*voxel*dsd/dso <= det_rows*det_pixel)"
                )
        return self

    @property
    def magnification(self) -> float:
        return self.dsd / self.dso

    @property
    def volume_shape(self) -> Tuple[int, int, int]:
        return (self.vol_nx, self.vol_ny, self.vol_nz)

    @property
    def detector_shape(self) -> Tuple[int, int]:
        return (self.det_rows, self.det_cols)

    def voxel_centers(self, axis: int) -> np.ndarray:
        """Coordonnées (mm) des centres de voxels le long d'un axe"""
        n = self.volume_shape[axis]
        return (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * self.voxel

    def detector_centers(self, axis: str) -> np.ndarray:
        """Coordonnées (mm) des centres de pixels, axis = 'u' (colonnes) ou 'v' (lignes)"""
        n = self.det_cols if axis == "u" else self.det_rows
        return (np.arange(n, dtype=np.float64) - (n - 1) / 2.0) * self.det_pixel

    def to_dict(self) -> Dict[str, Any]:
        return {name: getattr(self, name) for name in GEOMETRY_FIELDS}


class ViewSet(BaseModel):
    """Angles de vue (radians), strictement croissants dans [offset, offset + 2π)"""

    model_config = ConfigDict(frozen=True)

    angles: Tuple[float, ...]
    offset: float = 0.0

    @model_validator(mode="after")
    def _check_angles(self) -> "ViewSet":
        if len(self.angles) < 1:
            raise ValueError("au moins une vue est requise")
        angles = np.asarray(self.angles)
        if np.any(np.diff(angles) <= 0):
            raise ValueError("angles non strictement croissants")
        if angles[0] < self.offset - 1e-12 or angles[-1] >= self.offset + 2 * math.pi:
            raise ValueError("angles hors de [offset, offset + 2π)")
        return self

    @property
    def n_views(self) -> int:
        return len(self.angles)

    @property
    def offset_degrees(self) -> float:
        return math.degrees(self.offset)


def make_geometry(preset: Optional[str] = None, **fields: Any) -> ConeBeamGeometry:
    """Construit une géométrie depuis un preset et/ou des champs explicites"""
    values: Dict[str, Any] = {}
    if preset is not None:
        if preset not in PRESETS:
            raise GeometryError(f"preset inconnu '{preset}' (disponibles: {', '.join(PRESETS)})")
        values.update(PRESETS[preset])
    values.update({k: v for k, v in fields.items() if v is not None})

    missing = [name for name in GEOMETRY_FIELDS if name not in values and name != "require_full_fov"]
    if missing:
        raise GeometryError(f"champs de géométrie manquants: {', '.join(missing)}")

    try:
        geometry = ConeBeamGeometry(**values)
    except ValidationError as e:
        messages = "; ".join(err["msg"].removeprefix("Value error, ") for err in e.errors())
        raise GeometryError(messages) from None

    if not geometry.require_full_fov:
        logger.info("Géométrie sans contrainte de champ de vue complet (objet supposé central)")
    return geometry


def view_angles(n_views: int, offset: float = 0.0) -> ViewSet:
    """Vues équiréparties sur 360°, décalées de `offset` degrés"""
    if n_views < 1:
        raise GeometryError(f"n_views >= 1 violé (n_views={n_views})")
    step = 360.0 / n_views
    angles = tuple(math.radians(offset + i * step) for i in range(n_views))
    return ViewSet(angles=angles, offset=math.radians(offset))


def source_position(geometry: ConeBeamGeometry, angle: float) -> np.ndarray:
    return np.array([geometry.dso * math.cos(angle), geometry.dso * math.sin(angle), 0.0])


def detector_frame(geometry: ConeBeamGeometry, angle: float) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Centre du détecteur et axes (u, v) pour un angle donné"""
    c, s = math.cos(angle), math.sin(angle)
    center = -(geometry.dsd - geometry.dso) * np.array([c, s, 0.0])
    return center, np.array([-s, c, 0.0]), np.array([0.0, 0.0, 1.0])


def geometry_hash(geometry: ConeBeamGeometry) -> str:
    """Empreinte sha256 de la forme texte canonique"""
    return hashlib.sha256(format_key_values(geometry.to_dict()).encode()).hexdigest()


def load_geometry_config(path: Union[str, Path]) -> Dict[str, Any]:
    """Lit un fichier clé=valeur de géométrie (valeurs typées, non validées)"""
    path = Path(path)
    try:
        raw = parse_key_values(path.read_text(), source=str(path))
    except OSError as e:
        raise ConfigError(f"lecture impossible de {path}: {e}") from None
    return coerce_geometry_fields(raw, source=str(path))


def coerce_geometry_fields(raw: Dict[str, str], source: str = "config") -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    for key, value in raw.items():
        if key == "preset":
            values["preset"] = value
            continue
        if key not in GEOMETRY_FIELDS:
            raise ConfigError(f"{source}: clé de géométrie inconnue '{key}'")
        try:
            if key == "require_full_fov":
                values[key] = value.lower() in ("1", "true", "yes", "oui")
            elif key.startswith(("det_rows", "det_cols", "vol_")):
                values[key] = int(value)
            else:
                values[key] = float(value)
        except ValueError:
            raise ConfigError(f"{source}: valeur invalide pour {key}: '{value}'") from None
    return values


def save_geometry_config(geometry: ConeBeamGeometry, path: Union[str, Path]) -> None:
    Path(path).write_text(format_key_values(geometry.to_dict()))
