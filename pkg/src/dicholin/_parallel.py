"""Thread fan-out for independent queries, capped by ``DICHOLIN_THREADS``."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def thread_count() -> int:
    """``DICHOLIN_THREADS`` (0 or unset = auto, 1 = serial)."""
    raw = os.environ.get("DICHOLIN_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError:
        raise ValueError(f"DICHOLIN_THREADS must be an integer, got {raw!r}") from None
    if k < 0:
        raise ValueError("DICHOLIN_THREADS must be >= 0")
    return k if k > 0 else min(8, os.cpu_count() or 1)


def ordered_map(fn: Callable[[T], R], items: Iterable[T]) -> list[R]:
    """``[fn(x) for x in items]``, possibly concurrent, results in input order."""
    items = list(items)
    k = min(thread_count(), len(items))
    if k <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=k) as pool:
        return list(pool.map(fn, items))
