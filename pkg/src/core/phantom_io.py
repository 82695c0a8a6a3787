"""Fantômes synthétiques type noix, simulation des projections et formats de fichiers

Format binaire commun (volumes, sinogrammes, checkpoints):

    magic (12 octets) | version uint32 LE | longueur de l'en-tête uint32 LE
    | en-tête texte clé=valeur (UTF-8) | charge utile float32 LE

Les volumes sont écrits x le plus rapide, les sinogrammes colonne la plus rapide.
"""

import logging
import math
import struct
from pathlib import Path
from typing import Any, Dict, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.ndimage import map_coordinates
from scipy.spatial.transform import Rotation

from ..errors import ArgumentError, DimensionError, FileFormatError
from ..utils.parsers import format_key_values, parse_float_list, parse_key_values
from .geometry import GEOMETRY_FIELDS, ConeBeamGeometry, ViewSet, coerce_geometry_fields, make_geometry
from .projector import Sinogram, Volume3D, check_volume, forward_project

logger = logging.getLogger("sparse-ct.phantom")

SHELL_ATTENUATION = 0.04
GAP_ATTENUATION = 0.004
SUPPORT_MARGIN = 3

VOLUME_MAGIC = b"SPARSECT-VOL"
SINOGRAM_MAGIC = b"SPARSECT-SIN"
FORMAT_VERSION = 1
_PREFIX = struct.Struct("<12sII")

PathLike = Union[str, Path]


# --- Phantom ---------------------------------------------------------------

def _rotation(rng: np.random.Generator) -> np.ndarray:
    yaw = rng.uniform(0.0, 2.0 * math.pi)
    pitch, roll = rng.uniform(-0.25, 0.25, size=2)
    return Rotation.from_euler("zyx", [yaw, pitch, roll]).as_matrix()


def make_phantom(seed: int, geometry: ConeBeamGeometry) -> Volume3D:
    """Coque ellipsoïdale dense, 2 à 4 lobes texturés, interstices peu atténuants"""
    rng = np.random.default_rng(seed)
    d = geometry.voxel
    half = (min(geometry.volume_shape) / 2.0 - SUPPORT_MARGIN) * d

    semi = np.sort(rng.uniform(0.72, 0.95, size=3))[::-1] * half
    rot = _rotation(rng)
    thickness = max(2.0 * d, 0.08 * float(semi.min()))
    n_lobes = int(rng.integers(2, 5))
    lobe_phase = rng.uniform(0.0, 2.0 * math.pi)
    lobe_scale = rng.uniform(0.38, 0.5, size=(n_lobes, 3))
    lobe_offset = rng.uniform(0.35, 0.5, size=n_lobes)
    freq = rng.uniform(2.5, 5.0, size=(n_lobes, 3)) * 2.0 * math.pi / float(semi.min())
    phase = rng.uniform(0.0, 2.0 * math.pi, size=(n_lobes, 3))
    gap = 1.5 * d

    x = geometry.voxel_centers(0)[:, None, None]
    y = geometry.voxel_centers(1)[None, :, None]
    z = geometry.voxel_centers(2)[None, None, :]
    # Object frame coordinates
    u = rot[0, 0] * x + rot[1, 0] * y + rot[2, 0] * z
    v = rot[0, 1] * x + rot[1, 1] * y + rot[2, 1] * z
    w = rot[0, 2] * x + rot[1, 2] * y + rot[2, 2] * z

    radius = np.sqrt((u / semi[0]) ** 2 + (v / semi[1]) ** 2 + (w / semi[2]) ** 2)
    inner = radius <= 1.0
    shell = inner & (radius > 1.0 - thickness / float(semi.min()))
    cavity = inner & ~shell

    volume = np.zeros(geometry.volume_shape, dtype=np.float64)
    volume[cavity] = GAP_ATTENUATION

    azimuth = np.arctan2(v / semi[1], u / semi[0])
    sector = 2.0 * math.pi / n_lobes
    for k in range(n_lobes):
        mid = lobe_phase + (k + 0.5) * sector
        center = lobe_offset[k] * np.array([semi[0] * math.cos(mid), semi[1] * math.sin(mid), 0.0])
        axes = lobe_scale[k] * semi
        lobe_r = np.sqrt(((u - center[0]) / axes[0]) ** 2 + ((v - center[1]) / axes[1]) ** 2
                         + ((w - center[2]) / axes[2]) ** 2)
        # Angular distance to the sector middle, wrapped to [-π, π)
        delta = np.angle(np.exp(1j * (azimuth - mid)))
        in_sector = np.abs(delta) * np.hypot(u, v) <= (sector / 2.0) * np.hypot(u, v) - gap / 2.0
        lobe = cavity & (lobe_r <= 1.0) & in_sector
        ridge = 1.0 - np.abs(np.sin(freq[k, 0] * u + phase[k, 0])
                             * np.sin(freq[k, 1] * v + phase[k, 1])
                             * np.sin(freq[k, 2] * w + phase[k, 2]))
        texture = 0.018 + 0.012 * ridge
        volume = np.where(lobe, texture, volume)

    volume[shell] = SHELL_ATTENUATION
    volume = np.clip(volume, 0.0, SHELL_ATTENUATION)
    logger.info(f"Fantôme seed={seed}: {n_lobes} lobes, demi-axes {np.round(semi, 2).tolist()} mm")
    return Volume3D(data=volume.astype(np.float32), voxel=d)


def support_margin(volume: Volume3D) -> int:
    """Plus petit nombre de voxels nuls entre le support et un bord de la grille"""
    nonzero = np.argwhere(volume.data != 0)
    if nonzero.size == 0:
        return min(volume.shape)
    lo = nonzero.min(axis=0)
    hi = np.asarray(volume.shape) - 1 - nonzero.max(axis=0)
    return int(min(lo.min(), hi.min()))


# --- Simulation ------------------------------------------------------------

def simulate_sinogram(volume: Volume3D, geometry: ConeBeamGeometry, views: ViewSet,
                      noise_seed: int = 0, dose: Optional[float] = None) -> Sinogram:
    """y = A x, avec bruit de Poisson sur les comptages si `dose` (I0) est fourni"""
    if dose is not None and not dose > 0:
        raise ArgumentError("dose", f"dose > 0 attendue, reçu {dose}")
    sinogram = forward_project(volume, geometry, views)
    if dose is None:
        return sinogram

    rng = np.random.default_rng(noise_seed)
    clean = np.asarray(sinogram.data, dtype=np.float64)
    counts = rng.poisson(dose * np.exp(-clean)).astype(np.float64)
    # Zero counts would give an infinite line integral
    counts = np.maximum(counts, 1.0)
    noisy = -np.log(counts / dose)
    logger.info(f"Bruit de Poisson: I0={dose:g}, écart-type {float(np.std(noisy - clean)):.3g}")
    return Sinogram(data=noisy.astype(sinogram.data.dtype), geometry=geometry, views=views)


# --- Transforms ------------------------------------------------------------

def _support_radius(volume: Volume3D) -> np.ndarray:
    """Demi-étendue (en voxels) du support autour du centre de la grille, par axe"""
    nonzero = np.argwhere(volume.data != 0)
    if nonzero.size == 0:
        return np.zeros(3)
    center = (np.asarray(volume.shape) - 1) / 2.0
    return np.maximum(np.abs(nonzero.min(axis=0) - center), np.abs(nonzero.max(axis=0) - center))


def rescale_volume(volume: Volume3D, scale: float) -> Volume3D:
    """Homothétie trilinéaire de l'objet autour de l'isocentre, grille fixe"""
    if not 0.5 <= scale <= 1.5:
        raise ArgumentError("scale", f"facteur d'échelle hors de [0.5, 1.5]: {scale}")
    if scale == 1.0:
        return volume.like(volume.data.copy())

    limit = (np.asarray(volume.shape) - 1) / 2.0
    extent = _support_radius(volume) * scale
    if np.any(extent > limit):
        raise DimensionError(f"objet hors de la grille à l'échelle {scale} (étendue {extent.max():.1f} voxels)")

    center = limit
    coords = np.indices(volume.shape, dtype=np.float64)
    for axis in range(3):
        coords[axis] = center[axis] + (coords[axis] - center[axis]) / scale
    data = map_coordinates(np.asarray(volume.data, dtype=np.float64), coords, order=1, mode="constant", cval=0.0)
    return volume.like(data.astype(volume.data.dtype))


# --- Files -----------------------------------------------------------------

def write_container(path: PathLike, magic: bytes, header: Dict[str, Any], payload: bytes) -> None:
    text = format_key_values(header).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as f:
        f.write(_PREFIX.pack(magic, FORMAT_VERSION, len(text)))
        f.write(text)
        f.write(payload)
    logger.info(f"Écrit {path} ({len(payload)} octets de données)")


def read_container(path: PathLike, magic: bytes) -> Tuple[Dict[str, str], bytes]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise FileFormatError("path", f"lecture impossible de {path}: {e}") from None
    if len(blob) < _PREFIX.size:
        raise FileFormatError("magic", f"{path}: fichier tronqué ({len(blob)} octets)")
    found, version, length = _PREFIX.unpack_from(blob)
    if found != magic:
        raise FileFormatError("magic", f"{path}: signature {found!r}, attendu {magic!r}")
    if version != FORMAT_VERSION:
        raise FileFormatError("version", f"{path}: version {version} inconnue")
    end = _PREFIX.size + length
    if end > len(blob):
        raise FileFormatError("header_length", f"{path}: en-tête de {length} octets au-delà de la fin du fichier")
    try:
        header = parse_key_values(blob[_PREFIX.size:end].decode("utf-8"), source=str(path))
    except (UnicodeDecodeError, ValueError) as e:
        raise FileFormatError("header", f"{path}: en-tête illisible: {e}") from None
    return header, blob[end:]


def _field(header: Dict[str, str], name: str, kind=int):
    if name not in header:
        raise FileFormatError(name, "champ absent de l'en-tête")
    try:
        return kind(header[name])
    except ValueError:
        raise FileFormatError(name, f"valeur invalide '{header[name]}'") from None


def _payload(payload: bytes, count: int) -> np.ndarray:
    if len(payload) != 4 * count:
        raise FileFormatError("payload", f"{len(payload)} octets, attendu {4 * count} (dimensions x 4)")
    return np.frombuffer(payload, dtype="<f4", count=count)


def save_volume(volume: Volume3D, path: PathLike) -> None:
    nx, ny, nz = volume.shape
    header = {"kind": "volume", "nx": nx, "ny": ny, "nz": nz, "voxel": float(volume.voxel),
              "units": "mm^-1", "order": "x-fastest"}
    payload = np.ascontiguousarray(volume.data.transpose(2, 1, 0), dtype="<f4").tobytes()
    write_container(path, VOLUME_MAGIC, header, payload)


def load_volume(path: PathLike) -> Volume3D:
    header, payload = read_container(path, VOLUME_MAGIC)
    nx, ny, nz = (_field(header, name) for name in ("nx", "ny", "nz"))
    voxel = _field(header, "voxel", float)
    if min(nx, ny, nz) < 1 or voxel <= 0:
        raise FileFormatError("nx", f"dimensions invalides {nx}x{ny}x{nz} @ {voxel}")
    flat = _payload(payload, nx * ny * nz)
    data = np.ascontiguousarray(flat.reshape(nz, ny, nx).transpose(2, 1, 0)).astype(np.float32)
    try:
        return Volume3D(data=data, voxel=voxel)
    except DimensionError as e:
        raise FileFormatError("payload", e.message) from None


def save_sinogram(sinogram: Sinogram, path: PathLike) -> None:
    views = sinogram.views
    header: Dict[str, Any] = {"kind": "sinogram", "n_views": views.n_views}
    header.update(sinogram.geometry.to_dict())
    header["offset"] = float(views.offset)
    header["angles"] = [float(a) for a in views.angles]
    header["units"] = "line-integral"
    payload = np.ascontiguousarray(sinogram.data, dtype="<f4").tobytes()
    write_container(path, SINOGRAM_MAGIC, header, payload)


def load_sinogram(path: PathLike) -> Sinogram:
    header, payload = read_container(path, SINOGRAM_MAGIC)
    n_views = _field(header, "n_views")
    try:
        fields = coerce_geometry_fields({k: header[k] for k in GEOMETRY_FIELDS if k in header}, source=str(path))
        geometry = make_geometry(**fields)
    except ValueError as e:
        raise FileFormatError("geometry", str(e)) from None
    angles = _field(header, "angles", parse_float_list)
    if len(angles) != n_views:
        raise FileFormatError("angles", f"{len(angles)} angles pour n_views={n_views}")
    try:
        views = ViewSet(angles=tuple(angles), offset=_field(header, "offset", float))
    except ValueError as e:
        raise FileFormatError("angles", str(e)) from None

    flat = _payload(payload, n_views * geometry.det_rows * geometry.det_cols)
    data = flat.reshape(n_views, geometry.det_rows, geometry.det_cols).astype(np.float32)
    try:
        return Sinogram(data=data, geometry=geometry, views=views)
    except DimensionError as e:
        raise FileFormatError("payload", e.message) from None


RAW_ORDERS = ("x-fastest", "z-fastest")


def load_raw_volume(path: PathLike, dims: Sequence[int], dtype: str = "<f4", voxel: float = 1.0,
                    order: str = "x-fastest", scale: float = 1.0) -> Volume3D:
    """Import d'un volume brut sans en-tête (dimensions et type fournis par l'utilisateur)"""
    if len(dims) != 3 or min(dims) < 1:
        raise ArgumentError("dims", f"trois dimensions >= 1 attendues, reçu {list(dims)}")
    if order not in RAW_ORDERS:
        raise ArgumentError("order", f"ordre inconnu '{order}' ({', '.join(RAW_ORDERS)})")
    try:
        kind = np.dtype(dtype)
    except TypeError:
        raise ArgumentError("dtype", f"type numpy inconnu '{dtype}'") from None

    nx, ny, nz = (int(n) for n in dims)
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as e:
        raise FileFormatError("path", f"lecture impossible de {path}: {e}") from None
    expected = nx * ny * nz * kind.itemsize
    if len(blob) != expected:
        raise FileFormatError("payload", f"{path}: {len(blob)} octets, attendu {expected}")

    flat = np.frombuffer(blob, dtype=kind).astype(np.float64) * scale
    if order == "x-fastest":
        data = flat.reshape(nz, ny, nx).transpose(2, 1, 0)
    else:
        data = flat.reshape(nx, ny, nz)
    logger.info(f"Import brut {path}: {nx}x{ny}x{nz} {kind}")
    return Volume3D(data=np.ascontiguousarray(data, dtype=np.float32), voxel=voxel)


def fit_volume(volume: Volume3D, geometry: ConeBeamGeometry) -> Volume3D:
    """Vérifie qu'un volume chargé correspond à la grille de la géométrie"""
    check_volume(geometry, volume.shape)
    if not math.isclose(volume.voxel, geometry.voxel, rel_tol=1e-9):
        raise DimensionError(f"pas voxel {volume.voxel} mm, géométrie {geometry.voxel} mm")
    return volume
