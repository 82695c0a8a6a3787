#!/usr/bin/env python3
"""
Reconstruction CT cône à vues éparses
Sous-commandes: fantômes, simulation, FDK, EP, cohérence aux données,
entraînement et reconstruction multi-étages, évaluation et expériences
"""

import argparse
import logging
import sys
from typing import Any, Dict, List, Optional

from .core.geometry import PRESETS
from .errors import ArgumentError, ReconError
from .tools.dc import DcTool
from .tools.ep import EpTool
from .tools.evaluate import CompareTool, EvalTool
from .tools.experiment import ExperimentTool
from .tools.fdk import FdkTool
from .tools.import_raw import ImportRawTool
from .tools.phantom import PhantomTool
from .tools.reconstruct import ReconstructTool
from .tools.simulate import SimulateTool
from .tools.slices import SlicesTool
from .tools.train import TrainTool
from .utils.parsers import parse_int_list, parse_range
from .utils.runtime import set_threads
from .utils.validation import FILTERS, RAW_DTYPES, ArgumentValidator

logger = logging.getLogger("sparse-ct")

tools = {
    "phantom": PhantomTool(),
    "simulate": SimulateTool(),
    "fdk": FdkTool(),
    "ep": EpTool(),
    "dc": DcTool(),
    "train": TrainTool(),
    "reconstruct": ReconstructTool(),
    "eval": EvalTool(),
    "compare": CompareTool(),
    "experiment": ExperimentTool(),
    "slices": SlicesTool(),
    "import-raw": ImportRawTool(),
}

validator = ArgumentValidator()

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_INTERNAL = 3


class CliParser(argparse.ArgumentParser):
    """ArgumentParser qui lève ArgumentError au lieu d'imprimer l'usage et quitter"""

    def error(self, message: str):
        raise ArgumentError("usage", message)


def _geometry_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("géométrie (drapeaux > --config > --preset)")
    group.add_argument("--preset", choices=sorted(PRESETS), default=None,
                       help="Géométrie prédéfinie (défaut: desk)")
    group.add_argument("--config", default=None, help="Fichier clé=valeur de géométrie")
    group.add_argument("--dso", type=float, help="Distance source-isocentre (mm)")
    group.add_argument("--dsd", type=float, help="Distance source-détecteur (mm)")
    group.add_argument("--det-rows", type=int, help="Lignes du détecteur")
    group.add_argument("--det-cols", type=int, help="Colonnes du détecteur")
    group.add_argument("--det-pixel", type=float, help="Pas du détecteur (mm)")
    group.add_argument("--vol-nx", type=int, help="Voxels selon x")
    group.add_argument("--vol-ny", type=int, help="Voxels selon y")
    group.add_argument("--vol-nz", type=int, help="Voxels selon z")
    group.add_argument("--voxel", type=float, help="Pas voxel (mm)")


def _ep_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--beta-ep", type=float, default=None, help="Poids de régularisation EP")
    parser.add_argument("--delta", type=float, default=None, help="Seuil du potentiel EP (mm⁻¹)")
    parser.add_argument("--iters", type=int, default=None, help="Itérations NCG (défaut: 50)")


def build_parser() -> CliParser:
    parser = CliParser(prog="sparse-ct", description="Reconstruction CT cône à vues éparses")
    parser.add_argument("--threads", type=int, default=None, help="Nombre de workers (défaut: tous les coeurs)")
    parser.add_argument("--log-level", default="INFO", help="DEBUG, INFO, WARNING ou ERROR")
    parser.add_argument("--quiet", action="store_true", help="Sans barres de progression")
    sub = parser.add_subparsers(dest="command", metavar="COMMANDE")
    sub.required = True

    p = sub.add_parser("phantom", help="Génère un fantôme synthétique")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    _geometry_flags(p)

    p = sub.add_parser("simulate", help="Projette un volume sur N vues")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--views", type=int, required=True)
    p.add_argument("--offset", type=float, default=0.0, help="Décalage angulaire (degrés)")
    p.add_argument("--dose", type=float, default=None, help="I0 pour le bruit de Poisson")
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("-o", "--output", required=True)
    _geometry_flags(p)

    p = sub.add_parser("fdk", help="Reconstruction FDK")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--filter", choices=FILTERS, default="hann")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("ep", help="Reconstruction itérative EP")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--init", default="fdk", help="'fdk' ou chemin d'un volume")
    _ep_flags(p)
    p.add_argument("--tune-beta", action="store_true",
                   help="Recherche de beta_ep sur une grille (requiert --gt); valeur à passer à train --beta-ep")
    p.add_argument("--gt", default=None)
    p.add_argument("--dilation", type=int, default=3)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("dc", help="Cohérence aux données par CG")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--prior", required=True)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--cg-iters", type=int, default=50)
    p.add_argument("--no-clamp", action="store_true", help="Sans projection sur x >= 0")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("train", help="Entraîne les étages")
    p.add_argument("--gt", required=True)
    p.add_argument("--sino", required=True)
    p.add_argument("--stages", type=int, default=4)
    p.add_argument("--epochs", type=int, default=40)
    p.add_argument("--batch", type=int, default=6)
    p.add_argument("--disc-every", type=int, default=10)
    p.add_argument("--lr-g", type=float, default=1e-3)
    p.add_argument("--lr-d", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dc-beta", type=float, default=1.0)
    p.add_argument("--cg-iters", type=int, default=50)
    p.add_argument("--dilation", type=int, default=3)
    _ep_flags(p)
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("reconstruct", help="Reconstruction multi-étages")
    p.add_argument("--sino", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--gt", default=None, help="Vérité terrain pour la NMAE par étage")
    p.add_argument("--cnn-only", action="store_true", help="Un seul débruitage sans cohérence aux données")
    p.add_argument("--dump-intermediates", default=None, metavar="DIR")
    p.add_argument("-o", "--output", required=True)

    p = sub.add_parser("eval", help="NMAE et NHFEN")
    p.add_argument("--gt", required=True)
    p.add_argument("--recon", required=True)
    p.add_argument("--dilate", type=int, default=3)

    p = sub.add_parser("compare", help="FDK, EP, CNN seul et pipeline complet")
    p.add_argument("--gt", required=True)
    p.add_argument("--sino", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--dilate", type=int, default=3)

    p = sub.add_parser("experiment", help="Robustesse en rotation ou en échelle")
    p.add_argument("kind", choices=("rotation", "scale"))
    p.add_argument("--ckpt", required=True)
    p.add_argument("--phantoms", nargs="+", required=True)
    p.add_argument("--views", type=int, default=None, help="Défaut: nombre de vues d'entraînement")
    p.add_argument("--offsets", default=None, help="start:step:stop en degrés (ex: --offsets=-22.5:7.5:22.5)")
    p.add_argument("--scales", default=None, help="start:step:stop (ex: 0.7:0.1:1.3)")
    p.add_argument("--dose", type=float, default=None)
    p.add_argument("--noise-seed", type=int, default=0)
    p.add_argument("--dilate", type=int, default=3)

    p = sub.add_parser("slices", help="Coupes centrales en PGM")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--window", type=float, nargs=2, default=None, metavar=("LOW", "HIGH"))
    p.add_argument("-o", "--output", required=True, help="Répertoire de sortie")

    p = sub.add_parser("import-raw", help="Importe un volume brut")
    p.add_argument("-i", "--input", required=True)
    p.add_argument("--dims", required=True, help="nx,ny,nz")
    p.add_argument("--dtype", default="<f4", help=f"Type numpy ({', '.join(RAW_DTYPES)})")
    p.add_argument("--voxel", type=float, default=1.0)
    p.add_argument("--order", default="x-fastest")
    p.add_argument("--scale", type=float, default=1.0, help="Facteur appliqué aux valeurs")
    p.add_argument("-o", "--output", required=True)

    return parser


def to_arguments(namespace: argparse.Namespace) -> Dict[str, Any]:
    """Namespace argparse -> dict d'arguments de l'outil (plages et listes décodées)"""
    args = {key: value for key, value in vars(namespace).items() if key != "command"}
    if args.get("offsets") is not None:
        args["offsets"] = parse_range(args["offsets"], "--offsets")
    if args.get("scales") is not None:
        args["scales"] = parse_range(args["scales"], "--scales")
    if namespace.command == "import-raw":
        try:
            args["dims"] = parse_int_list(args["dims"])
        except ValueError:
            raise ArgumentError("--dims", f"entiers séparés par des virgules attendus, reçu '{args['dims']}'") from None
    if args.get("window") is not None:
        args["window"] = tuple(args["window"])
    return args


def run(argv: Optional[List[str]] = None) -> str:
    parser = build_parser()
    namespace = parser.parse_args(argv)
    name = namespace.command
    args = to_arguments(namespace)

    validator.validate_arguments(name, args)
    logging.basicConfig(level=args["log_level"].upper())
    set_threads(args.get("threads"))
    logger.debug(f"{name}: {args}")
    return tools[name].execute(args)


def _fail(code: str, message: str) -> None:
    text = message.replace("\\", "\\\\").replace('"', '\\"').replace("\n", " ")
    print(f'error={code} message="{text}"', file=sys.stderr)


def main(argv: Optional[List[str]] = None) -> int:
    """Point d'entrée principal: une ligne `error=... message="..."` sur stderr en cas d'échec"""
    try:
        output = run(argv)
    except ArgumentError as e:
        _fail(e.code, e.message)
        return EXIT_USAGE
    except ReconError as e:
        _fail(e.code, e.message)
        return EXIT_FAILURE
    except KeyboardInterrupt:
        _fail("interrupted", "interrompu")
        return EXIT_INTERNAL
    except Exception as e:
        logger.debug("Erreur inattendue", exc_info=True)
        _fail("internal", f"{type(e).__name__}: {e}")
        return EXIT_INTERNAL

    print(output)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
