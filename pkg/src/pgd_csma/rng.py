"""Replayable RNG streams.

Every simulation consumes three independent counter-based streams
(decision draws, activation coins, arrivals), each keyed by
(master_seed, replica_index, stream_tag).  Runs are byte-reproducible
across platforms because Philox output is fixed by its key.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

GENERATOR_NAME = "philox4x64"

STREAM_TAGS = {"intent": 0, "coins": 1, "arrivals": 2}


def make_stream(master_seed: int, replica: int, tag: str) -> np.random.Generator:
    try:
        tag_id = STREAM_TAGS[tag]
    except KeyError:
        raise KeyError(f"unknown stream tag {tag!r}; expected one of {sorted(STREAM_TAGS)}") from None
    seq = np.random.SeedSequence([int(master_seed), int(replica), tag_id])
    return np.random.Generator(np.random.Philox(seq))


@dataclass
class SimStreams:
    """The three streams of one simulation replica."""

    intent: np.random.Generator
    coins: np.random.Generator
    arrivals: np.random.Generator

    @classmethod
    def make(cls, master_seed: int, replica: int = 0) -> "SimStreams":
        return cls(
            intent=make_stream(master_seed, replica, "intent"),
            coins=make_stream(master_seed, replica, "coins"),
            arrivals=make_stream(master_seed, replica, "arrivals"),
        )
