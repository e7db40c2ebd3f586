from __future__ import annotations

from collections.abc import Callable, Sequence
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def derive_seed(seed: int, index: int) -> int:
    """Stable child seed for task `index` under master `seed`."""
    return int(np.random.SeedSequence([int(seed), int(index)]).generate_state(1)[0])


def map_ordered(fn: Callable[[T], R], items: Sequence[T], n_jobs: int = 1) -> list[R]:
    # Results come back in input order whatever the completion order is.
    if n_jobs <= 1 or len(items) <= 1:
        return [fn(x) for x in items]

    out: list[R | None] = [None] * len(items)
    with ThreadPoolExecutor(max_workers=min(n_jobs, len(items))) as pool:
        futures = {pool.submit(fn, x): i for i, x in enumerate(items)}
        for fut in as_completed(futures):
            out[futures[fut]] = fut.result()
    return out  # type: ignore[return-value]
