"""Exceptions du pipeline de reconstruction"""

from typing import Optional


class ReconError(Exception):
    """Erreur de base, porte un code court lisible par machine"""

    code = "recon"

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message


class GeometryError(ReconError, ValueError):
    code = "geometry"


class DimensionError(ReconError, ValueError):
    code = "dimension"


class ConfigError(ReconError, ValueError):
    code = "config"


class ArgumentError(ReconError, ValueError):
    """Drapeau CLI hors plage ou incohérent"""

    code = "argument"

    def __init__(self, flag: str, message: str):
        super().__init__(f"{flag}: {message}")
        self.flag = flag


class FileFormatError(ReconError, ValueError):
    """Fichier illisible; `field` nomme le champ d'en-tête fautif"""

    code = "file_format"

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class ConvergenceError(ReconError):
    code = "convergence"

    def __init__(self, message: str, iteration: Optional[int] = None):
        super().__init__(message if iteration is None else f"iteration {iteration}: {message}")
        self.iteration = iteration


class TrainingError(ReconError):
    code = "training"

    def __init__(self, message: str, batch: Optional[int] = None):
        super().__init__(message if batch is None else f"batch {batch}: {message}")
        self.batch = batch


class CheckpointError(ReconError):
    code = "checkpoint"


class MetricError(ReconError, ValueError):
    code = "metric"
