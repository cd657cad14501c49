"""Counter-based random streams.

Every random draw in the package comes from a Philox generator keyed by
``(master_seed, stream_id)``. Philox is a counter-based construction, so a
stream depends only on its key and the draw index, never on which other
streams were consumed first or on how work was scheduled across threads.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import ValidationError

_U64 = (1 << 64) - 1


def derive_stream(parent: int, *names: object) -> int:
    """Hash a parent stream id and a path of names into a new 64-bit id."""
    h = hashlib.blake2b(digest_size=8)
    h.update(int(parent).to_bytes(8, "little"))
    for name in names:
        # enum and numpy-scalar reprs vary across versions; hash plain values
        if isinstance(name, Enum):
            name = name.name
        elif isinstance(name, np.integer):
            name = int(name)
        h.update(b"\x1f")
        h.update(repr(name).encode("utf-8"))
    return int.from_bytes(h.digest(), "little")


@dataclass(frozen=True)
class SeedSpec:
    master_seed: int
    stream_id: int = 0

    def __post_init__(self):
        for name in ("master_seed", "stream_id"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or not 0 <= int(v) <= _U64:
                raise ValidationError(f"{name} must be a 64-bit unsigned integer, got {v!r}")

    def generator(self) -> np.random.Generator:
        return np.random.Generator(np.random.Philox(key=[int(self.master_seed), int(self.stream_id)]))

    def child(self, *names: object) -> "SeedSpec":
        """Substream for a named sub-task (sample index, candidate index, ...)."""
        return SeedSpec(self.master_seed, derive_stream(self.stream_id, *names))

    def to_dict(self) -> dict:
        return {"master_seed": int(self.master_seed), "stream_id": int(self.stream_id)}

    @classmethod
    def from_dict(cls, d: dict) -> "SeedSpec":
        return cls(int(d["master_seed"]), int(d["stream_id"]))


def root_seed(master_seed: int) -> SeedSpec:
    return SeedSpec(int(master_seed) & _U64, 0)
