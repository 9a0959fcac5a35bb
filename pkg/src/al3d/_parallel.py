"""Thread-mapped helper whose output never depends on the thread count."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def map_ordered(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """Map ``fn`` over items, preserving input order exactly.

    ``threads <= 1`` runs inline; larger values use a thread pool whose
    results are collected in submission order, so outputs are byte-for-byte
    identical regardless of thread count.
    """
    seq: Sequence[T] = list(items)
    if threads <= 1 or len(seq) <= 1:
        return [fn(x) for x in seq]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, seq))
