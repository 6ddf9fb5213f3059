"""Reproducible, splittable random streams.

Every stream is identified by ``(master_seed, rep, sensor, purpose, sub)``
and backed by a Philox generator keyed through ``SeedSequence``. Two streams
with the same identity produce bit-identical draws; streams with distinct
identities are independent for all practical purposes.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass, field, replace

import numpy as np

_MASK64 = (1 << 64) - 1


def _purpose_code(purpose: str) -> int:
    return zlib.crc32(purpose.encode("utf-8"))


@dataclass
class RngStream:
    master_seed: int
    rep: int = 0
    sensor: int = 0
    purpose: str = "walk"
    sub: tuple[int, ...] = ()
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.rep < 0 or self.sensor < 0 or any(s < 0 for s in self.sub):
            raise ValueError("stream id components must be non-negative")

    @property
    def key(self) -> tuple[int, ...]:
        return (_purpose_code(self.purpose), self.rep, self.sensor, *self.sub)

    @property
    def gen(self) -> np.random.Generator:
        """The generator behind this stream; advances as it is used."""
        if self._gen is None:
            seq = np.random.SeedSequence(self.master_seed & _MASK64, spawn_key=self.key)
            self._gen = np.random.Generator(np.random.Philox(seq))
        return self._gen

    def fresh(self) -> RngStream:
        """Same identity, rewound to the start of the sequence."""
        return replace(self, _gen=None)

    def derive(self, **changes) -> RngStream:
        return replace(self, _gen=None, **changes)

    def child(self, *keys: int) -> RngStream:
        return replace(self, _gen=None, sub=self.sub + tuple(int(k) for k in keys))
