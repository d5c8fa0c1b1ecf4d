"""Seed-derived random streams.

Every simulation draws from four independent generators spawned from one
``SeedSequence``: initial state, process noise, P1 scheduling and P2
scheduling. Ensemble members use the entropy pair (seed_base, member) so a
member's draws do not depend on how many members run or in which order.
"""
from __future__ import annotations

from typing import NamedTuple, Optional

import numpy as np


class Streams(NamedTuple):
    init: np.random.Generator
    noise: np.random.Generator
    sched1: np.random.Generator
    sched2: np.random.Generator


def make_streams(seed: int, member: Optional[int] = None) -> Streams:
    entropy = seed if member is None else [seed, member]
    children = np.random.SeedSequence(entropy).spawn(4)
    return Streams(*(np.random.default_rng(c) for c in children))
