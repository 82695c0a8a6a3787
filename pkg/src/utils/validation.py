import math
import os
from typing import Any, Dict, Iterable, Optional

import validators

from ..errors import ArgumentError

FILTERS = ("ramlak", "hann")
LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")
RAW_DTYPES = ("<f4", ">f4", "<f8", ">f8", "<u2", ">u2", "<i2", ">i2", "u1", "<u4", "<i4")


class ArgumentValidator:
    """Validateur des arguments des sous-commandes (plages et fichiers d'entrée)"""

    def validate_arguments(self, tool_name: str, args: Dict[str, Any]) -> bool:
        """Valide les arguments selon l'outil; lève ArgumentError en nommant le drapeau fautif"""
        self._validate_common_args(args)
        handler = getattr(self, f"_validate_{tool_name.replace('-', '_')}_args", None)
        if handler is not None:
            handler(args)
        return True

    def _validate_common_args(self, args: Dict[str, Any]) -> None:
        check_range(args, "threads", 1, 1024, optional=True)
        if args.get("log_level") is not None and args["log_level"].upper() not in LOG_LEVELS:
            raise ArgumentError("--log-level", f"niveau inconnu '{args['log_level']}'")
        check_file(args, "config", optional=True)

    def _validate_phantom_args(self, args: Dict[str, Any]) -> None:
        check_range(args, "seed", 0, 2 ** 32 - 1)
        check_output(args, "output")

    def _validate_simulate_args(self, args: Dict[str, Any]) -> None:
        check_file(args, "input")
        check_range(args, "views", 1, 720)
        check_range(args, "offset", -360.0, 360.0)
        check_positive(args, "dose", optional=True)
        check_range(args, "noise_seed", 0, 2 ** 32 - 1)
        check_output(args, "output")

    def _validate_fdk_args(self, args: Dict[str, Any]) -> None:
        check_file(args, "input")
        check_choice(args, "filter", FILTERS)
        check_output(args, "output")

    def _validate_ep_args(self, args: Dict[str, Any]) -> None:
        check_file(args, "input")
        if args.get("init", "fdk") != "fdk":
            check_file(args, "init")
        self._validate_ep_settings(args)
        if args.get("tune_beta"):
            if not args.get("gt"):
                raise ArgumentError("--gt", "requis avec --tune-beta")
            check_file(args, "gt")
            check_range(args, "dilation", 0, 20)
        check_output(args, "output")

    def _validate_ep_settings(self, args: Dict[str, Any]) -> None:
        check_positive(args, "beta_ep", optional=True)
        check_positive(args, "delta", optional=True)
        check_range(args, "iters", 1, 10000, optional=True)

    def _validate_dc_args(self, args: Dict[str, Any]) -> None:
        check_file(args, "input")
        check_file(args, "prior")
        check_positive(args, "beta")
        check_range(args, "cg_iters", 1, 10000)
        check_output(args, "output")

    def _validate_train_args(self, args: Dict[str, Any]) -> None:
        check_file(args, "gt")
        check_file(args, "sino")
        check_range(args, "stages", 1, 16)
        check_range(args, "epochs", 1, 10000)
        check_range(args, "batch", 1, 1024)
        check_range(args, "disc_every", 1, 1000)
        check_range(args, "seed", 0, 2 ** 32 - 1)
        check_range(args, "lr_g", 1e-8, 1.0)
        check_range(args, "lr_d", 1e-8, 1.0)
        check_range(args, "dilation", 0, 20)
        check_positive(args, "dc_beta")
        check_range(args, "cg_iters", 1, 10000)
        self._validate_ep_settings(args)
        check_output(args, "output")

    def _validate_reconstruct_args(self, args: Dict[str, Any]) -> None:
        check_file(args, "sino")
        check_dir(args, "ckpt")
        check_file(args, "gt", optional=True)
        check_output(args, "output")

    def _validate_eval_args(self, args: Dict[str, Any]) -> None:
        check_file(args, "gt")
        check_file(args, "recon")
        check_range(args, "dilate", 0, 20)

    def _validate_compare_args(self, args: Dict[str, Any]) -> None:
        check_file(args, "gt")
        check_file(args, "sino")
        check_dir(args, "ckpt")
        check_range(args, "dilate", 0, 20)

    def _validate_experiment_args(self, args: Dict[str, Any]) -> None:
        check_choice(args, "kind", ("rotation", "scale"))
        check_dir(args, "ckpt")
        phantoms = args.get("phantoms") or []
        if not phantoms:
            raise ArgumentError("--phantoms", "au moins un volume de test est requis")
        for path in phantoms:
            if not os.path.isfile(path):
                raise ArgumentError("--phantoms", f"fichier introuvable: {path}")
        check_range(args, "views", 1, 720, optional=True)
        check_positive(args, "dose", optional=True)
        check_range(args, "dilate", 0, 20)
        for offset in args.get("offsets") or []:
            check_value("--offsets", offset, -360.0, 360.0)
        for scale in args.get("scales") or []:
            check_value("--scales", scale, 0.5, 1.5)

    def _validate_slices_args(self, args: Dict[str, Any]) -> None:
        check_file(args, "input")
        window = args.get("window")
        if window is not None and not window[0] < window[1]:
            raise ArgumentError("--window", f"fenêtre vide [{window[0]}, {window[1]}]")
        check_output(args, "output")

    def _validate_import_raw_args(self, args: Dict[str, Any]) -> None:
        check_file(args, "input")
        dims = args.get("dims") or []
        if len(dims) != 3:
            raise ArgumentError("--dims", f"trois dimensions attendues (nx,ny,nz), reçu {dims}")
        for n in dims:
            check_value("--dims", n, 1, 100000)
        check_choice(args, "dtype", RAW_DTYPES)
        check_choice(args, "order", ("x-fastest", "z-fastest"))
        check_positive(args, "voxel")
        check_positive(args, "scale")
        check_output(args, "output")


def _flag(name: str) -> str:
    return "--" + name.replace("_", "-")


def _check_number(flag: str, value: Any) -> None:
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        raise ArgumentError(flag, f"valeur numérique attendue, reçu {value!r}")


def check_value(flag: str, value: Any, low: float, high: float) -> None:
    _check_number(flag, value)
    if validators.between(value, min_val=low, max_val=high) is not True:
        raise ArgumentError(flag, f"{value} hors de [{low}, {high}]")


def check_range(args: Dict[str, Any], name: str, low: float, high: float, optional: bool = False) -> None:
    value = args.get(name)
    if value is None:
        if optional:
            return
        raise ArgumentError(_flag(name), "valeur requise")
    check_value(_flag(name), value, low, high)


def check_positive(args: Dict[str, Any], name: str, optional: bool = False) -> None:
    value = args.get(name)
    if value is None:
        if optional:
            return
        raise ArgumentError(_flag(name), "valeur requise")
    _check_number(_flag(name), value)
    if not value > 0:
        raise ArgumentError(_flag(name), f"valeur > 0 attendue, reçu {value}")


def check_choice(args: Dict[str, Any], name: str, choices: Iterable[str]) -> None:
    choices = tuple(choices)
    if args.get(name) not in choices:
        raise ArgumentError(_flag(name), f"'{args.get(name)}' invalide ({', '.join(choices)})")


def check_file(args: Dict[str, Any], name: str, optional: bool = False) -> None:
    path: Optional[str] = args.get(name)
    if not path:
        if optional:
            return
        raise ArgumentError(_flag(name), "chemin requis")
    if not os.path.isfile(path):
        raise ArgumentError(_flag(name), f"fichier introuvable: {path}")


def check_dir(args: Dict[str, Any], name: str) -> None:
    path = args.get(name)
    if not path or not os.path.isdir(path):
        raise ArgumentError(_flag(name), f"répertoire introuvable: {path}")


def check_output(args: Dict[str, Any], name: str) -> None:
    if not args.get(name):
        raise ArgumentError("-o/--output", "chemin de sortie requis")
