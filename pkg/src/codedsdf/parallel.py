"""Deterministic chunked parallelism.

Work is always split into chunks whose boundaries depend only on the problem
size, never on the worker count, and chunk results are merged in chunk order.
Outputs are therefore bitwise identical for any number of workers; workers
only affect wall time.
"""

from concurrent.futures import ThreadPoolExecutor

_workers = 1


def set_workers(n: int) -> None:
    global _workers
    if n < 1:
        raise ValueError(f"worker count must be >= 1, got {n}")
    _workers = int(n)


def get_workers() -> int:
    return _workers


def chunk_ranges(total: int, chunk: int) -> list[tuple[int, int]]:
    """Fixed [start, end) ranges covering ``total`` items, ``chunk`` apiece."""
    if total <= 0:
        return []
    return [(s, min(s + chunk, total)) for s in range(0, total, chunk)]


def run_chunks(fn, ranges, workers: int | None = None) -> list:
    """Apply ``fn(start, end)`` to every range; results in range order.

    ``fn`` must not mutate shared state outside its own output. With one
    worker this degenerates to a plain loop (no pool overhead).
    """
    w = _workers if workers is None else workers
    if w <= 1 or len(ranges) <= 1:
        return [fn(s, e) for s, e in ranges]
    with ThreadPoolExecutor(max_workers=w) as pool:
        futures = [pool.submit(fn, s, e) for s, e in ranges]
        return [f.result() for f in futures]
