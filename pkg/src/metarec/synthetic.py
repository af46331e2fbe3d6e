"""Synthetic corpus generator for desk-scale verification.

Sequences follow a Markov item process: each state (the last ``order``
items) owns a small set of likely successors with Dirichlet weights, drawn
from a Zipf-like popularity prior, and every step mixes in popularity noise.
That gives next-item structure a sequence encoder can learn quickly, while
the noise leaves room for the contrastive machinery to matter.  Output is
byte-exact under a fixed seed.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .rng import child_seed, numpy_rng


def make_synthetic_fixture(
    path: str,
    n_users: int = 2000,
    n_items: int = 500,
    order: int = 1,
    seed: int = 0,
    min_len: int = 5,
    max_len: int = 40,
    n_successors: int = 8,
    noise: float = 0.2,
    zipf_a: float = 1.1,
    length_p: float = 0.3,
) -> str:
    """Write a corpus file of ``n_users`` Markov random walks and return its
    path.  Lengths are ``min_len`` plus a geometric tail, so the three
    canonical length groups (=5, 6-8, >8) are all populated."""
    if n_users < 1 or n_items < 2:
        raise ValueError("need at least 1 user and 2 items")
    if order < 1:
        raise ValueError(f"markov order must be >= 1, got {order}")
    if not 0.0 <= noise <= 1.0:
        raise ValueError(f"noise must be in [0, 1], got {noise}")
    rng = numpy_rng(child_seed(seed, "walk"))
    popularity = 1.0 / np.arange(1, n_items + 1, dtype=np.float64) ** zipf_a
    popularity /= popularity.sum()
    successors: dict[tuple[int, ...], tuple[np.ndarray, np.ndarray]] = {}

    def successor_table(state: tuple[int, ...]) -> tuple[np.ndarray, np.ndarray]:
        cached = successors.get(state)
        if cached is None:
            # Per-state stream keyed by the state itself, so the table is
            # independent of visit order.
            srng = numpy_rng(child_seed(seed, "transitions", *state))
            count = min(n_successors, n_items)
            candidates = srng.choice(n_items, size=count, replace=False, p=popularity)
            weights = srng.dirichlet(np.ones(count))
            cached = (candidates, weights)
            successors[state] = cached
        return cached

    lines: list[str] = []
    for user in range(1, n_users + 1):
        length = min(max_len, min_len + int(rng.geometric(length_p)) - 1)
        seq = [int(rng.choice(n_items, p=popularity)) + 1]
        while len(seq) < length:
            if rng.random() < noise:
                nxt = int(rng.choice(n_items, p=popularity)) + 1
            else:
                candidates, weights = successor_table(tuple(seq[-order:]))
                nxt = int(rng.choice(candidates, p=weights)) + 1
            seq.append(nxt)
        lines.append(str(user) + " " + " ".join(str(i) for i in seq))
    text = "\n".join(lines) + "\n"
    with open(path, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(text)
    return path
