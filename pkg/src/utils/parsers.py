import re
from typing import Any, Dict, List

from ..errors import ArgumentError, ConfigError

_NUMBER = r'[-+]?(?:\d+(?:\.\d*)?|\.\d+)(?:[eE][-+]?\d+)?'
_RANGE_PATTERN = re.compile(rf'^\s*({_NUMBER})\s*:\s*({_NUMBER})\s*:\s*({_NUMBER})\s*$')


def parse_range(text: str, flag: str = "range") -> List[float]:
    """Parse une plage `start:step:stop`, bornes incluses quand le pas divise l'écart"""
    match = _RANGE_PATTERN.match(text)
    if not match:
        # A single value or a comma separated list is accepted as well
        try:
            return [float(part) for part in text.split(',') if part.strip()]
        except ValueError:
            raise ArgumentError(flag, f"plage invalide '{text}' (attendu start:step:stop)")

    start, step, stop = (float(match.group(i)) for i in (1, 2, 3))
    if step <= 0:
        raise ArgumentError(flag, f"le pas doit être positif: {step}")
    if stop < start:
        raise ArgumentError(flag, f"borne haute {stop} inférieure à la borne basse {start}")

    count = int((stop - start) / step + 1e-9) + 1
    # Rounding keeps 7.5-spaced grids free of 1e-15 drift
    return [round(start + k * step, 12) for k in range(count)]


def parse_key_values(text: str, source: str = "config") -> Dict[str, str]:
    """Parse un texte `clé = valeur` (commentaires #, lignes vides ignorées)"""
    result: Dict[str, str] = {}

    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = raw_line.split('#', 1)[0].strip()
        if not line:
            continue
        if '=' not in line:
            raise ConfigError(f"{source}:{lineno}: ligne sans '=': {raw_line.strip()}")
        key, value = (part.strip() for part in line.split('=', 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: clé vide")
        if key in result:
            raise ConfigError(f"{source}:{lineno}: clé dupliquée '{key}'")
        result[key] = value

    return result


def format_key_values(values: Dict[str, Any]) -> str:
    """Formate un dictionnaire en lignes `clé=valeur` (repr exact pour les flottants)"""
    lines = []
    for key, value in values.items():
        if isinstance(value, float):
            value = repr(value)
        elif isinstance(value, (list, tuple)):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        lines.append(f"{key}={value}")
    return "\n".join(lines) + "\n"


def parse_float_list(value: str) -> List[float]:
    if not value.strip():
        return []
    return [float(part) for part in value.split(',')]


def parse_int_list(value: str) -> List[int]:
    if not value.strip():
        return []
    return [int(part) for part in value.split(',')]
