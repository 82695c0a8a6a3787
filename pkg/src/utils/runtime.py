"""Politique de parallélisme partagée par les opérateurs par vue"""

import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

import psutil

logger = logging.getLogger("sparse-ct.runtime")

T = TypeVar("T")
R = TypeVar("R")

_thread_limit: Optional[int] = None


def default_threads() -> int:
    """Nombre de coeurs logiques disponibles"""
    return psutil.cpu_count(logical=True) or 1


def set_threads(n: Optional[int]) -> None:
    """Plafonne le nombre de workers (None = tous les coeurs)"""
    global _thread_limit
    if n is not None and n < 1:
        raise ValueError(f"Nombre de threads invalide: {n}")
    _thread_limit = n
    logger.debug(f"Workers: {get_threads()}")


def get_threads() -> int:
    return _thread_limit if _thread_limit is not None else default_threads()


def ordered_map(func: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """map parallèle dont le résultat suit toujours l'ordre des entrées"""
    items = list(items)
    workers = min(get_threads(), len(items))
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))
