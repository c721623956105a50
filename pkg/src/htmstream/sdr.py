"""Fixed-width sparse binary vectors stored as sorted index arrays."""

from __future__ import annotations

import re
from typing import Iterable, Sequence

import numpy as np


class SdrError(ValueError):
    """Raised for malformed or incompatible sparse codes."""


class Sdr:
    """Immutable sparse binary vector.

    ``active`` holds the indices of the 1-bits, strictly ascending, each in
    ``[0, width)``.  Two codes are equal when width and active set match.
    """

    __slots__ = ("width", "active")

    def __init__(self, width: int, active: Iterable[int] | np.ndarray = ()):
        width = int(width)
        if width <= 0:
            raise SdrError(f"width must be positive, got {width}")
        if not isinstance(active, np.ndarray):
            active = list(active)
        arr = np.unique(np.asarray(active, dtype=np.int64)).astype(np.int32)
        if arr.size and (arr[0] < 0 or arr[-1] >= width):
            raise SdrError(f"active index out of range [0, {width})")
        arr.setflags(write=False)
        object.__setattr__(self, "width", width)
        object.__setattr__(self, "active", arr)

    @classmethod
    def _trusted(cls, width: int, active: np.ndarray) -> "Sdr":
        # caller guarantees sorted, unique, in range int32
        self = object.__new__(cls)
        active = np.asarray(active, dtype=np.int32)
        if active.flags.writeable:
            active = active.copy()
            active.setflags(write=False)
        object.__setattr__(self, "width", int(width))
        object.__setattr__(self, "active", active)
        return self

    def __setattr__(self, name, value):
        raise AttributeError("Sdr is immutable")

    def __len__(self) -> int:
        return int(self.active.size)

    def __iter__(self):
        return iter(self.active.tolist())

    def __contains__(self, bit) -> bool:
        i = np.searchsorted(self.active, bit)
        return bool(i < self.active.size and self.active[i] == bit)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Sdr):
            return NotImplemented
        return self.width == other.width and np.array_equal(self.active, other.active)

    def __hash__(self) -> int:
        return hash((self.width, self.active.tobytes()))

    def __repr__(self) -> str:
        return f"Sdr({self.dumps()})"

    @property
    def sparsity(self) -> float:
        return self.active.size / self.width

    def dense(self) -> np.ndarray:
        out = np.zeros(self.width, dtype=bool)
        out[self.active] = True
        return out

    def dumps(self) -> str:
        """Debug text form ``width:[i0,i1,...]``."""
        return f"{self.width}:[{','.join(map(str, self.active.tolist()))}]"

    @classmethod
    def loads(cls, text: str) -> "Sdr":
        m = re.fullmatch(r"\s*(\d+)\s*:\s*\[([\d,\s]*)\]\s*", text)
        if not m:
            raise SdrError(f"cannot parse sdr text {text!r}")
        body = m.group(2).strip()
        bits = [int(tok) for tok in body.split(",")] if body else []
        if len(set(bits)) != len(bits) or bits != sorted(bits):
            raise SdrError("indices must be unique and ascending")
        return cls(int(m.group(1)), bits)


def _check_width(a: Sdr, b: Sdr) -> None:
    if a.width != b.width:
        raise SdrError(f"incompatible codes: width {a.width} vs {b.width}")


def overlap(a: Sdr, b: Sdr) -> int:
    """Number of shared active bits (dot product of the binary vectors)."""
    _check_width(a, b)
    return int(np.intersect1d(a.active, b.active, assume_unique=True).size)


def union(vs: Sequence[Sdr]) -> Sdr:
    if not vs:
        raise SdrError("union of an empty list")
    first = vs[0]
    for v in vs[1:]:
        _check_width(first, v)
    if len(vs) == 1:
        return first
    merged = np.unique(np.concatenate([v.active for v in vs]))
    return Sdr._trusted(first.width, merged)
