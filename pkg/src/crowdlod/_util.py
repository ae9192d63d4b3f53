"""Small helpers shared across modules."""
from __future__ import annotations

import os
import re
from concurrent.futures import ThreadPoolExecutor

THREADS_ENV = "CROWDLOD_THREADS"

_SIZE_UNITS = {
    "": 1, "b": 1,
    "kb": 10**3, "mb": 10**6, "gb": 10**9,
    "kib": 2**10, "mib": 2**20, "gib": 2**30,
}


def thread_count() -> int:
    """Worker count from ``$CROWDLOD_THREADS`` (default 1)."""
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    return max(1, n)


def pmap(fn, items):
    """``list(map(fn, items))``, threaded when more than one worker is configured.

    Result order always follows ``items``.
    """
    items = list(items)
    n = thread_count()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def parse_size(text) -> int:
    """Parse ``"64MB"``, ``"12 KiB"``, ``"1000"`` into bytes (decimal KB/MB/GB)."""
    if isinstance(text, (int, float)):
        return int(text)
    m = re.fullmatch(r"\s*([0-9]*\.?[0-9]+)\s*([A-Za-z]*)\s*", str(text))
    if not m or m.group(2).lower() not in _SIZE_UNITS:
        raise ValueError(f"cannot parse size {text!r}")
    return int(round(float(m.group(1)) * _SIZE_UNITS[m.group(2).lower()]))


def format_size(n: int) -> str:
    for unit, scale in (("GB", 10**9), ("MB", 10**6), ("KB", 10**3)):
        if n >= scale:
            return f"{n / scale:.3g} {unit}"
    return f"{n} B"


def parse_list(text, cast=float):
    """Comma separated values, e.g. ``"1080,540,270"``."""
    if isinstance(text, (list, tuple)):
        return [cast(x) for x in text]
    return [cast(x) for x in str(text).split(",") if x.strip()]
