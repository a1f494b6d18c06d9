"""Subcubes of one tree level: sets of equal-length strings with some
positions pinned to fixed bits and the rest free.

A cube is (length, ((pos, bit), ...)) with 1-based positions sorted
ascending. Cubes support exact intersection, difference (as a disjoint
cube list), membership, and counting, which is everything the sparse
frame representation needs. A level with 2^n vertices costs nothing to
describe as long as the number of distinct regions stays small.
"""

from __future__ import annotations

from typing import Iterator, Optional

from treeflow.bitseq import BitString


class Cube:
    __slots__ = ("length", "fixed", "_hash")

    def __init__(self, length: int, fixed: tuple[tuple[int, int], ...] = ()):
        fixed = tuple(sorted(fixed))
        seen = set()
        for pos, bit in fixed:
            if not 1 <= pos <= length:
                raise ValueError(f"position {pos} outside level {length}")
            if bit not in (0, 1):
                raise ValueError(f"bad bit {bit}")
            if pos in seen:
                raise ValueError(f"position {pos} pinned twice")
            seen.add(pos)
        object.__setattr__(self, "length", length)
        object.__setattr__(self, "fixed", fixed)
        object.__setattr__(self, "_hash", hash((length, fixed)))

    def __setattr__(self, name, val):
        raise AttributeError("Cube is immutable")

    def __hash__(self):
        return self._hash

    def __eq__(self, other):
        return (
            isinstance(other, Cube)
            and self.length == other.length
            and self.fixed == other.fixed
        )

    def pattern(self) -> str:
        pat = ["*"] * self.length
        for pos, bit in self.fixed:
            pat[pos - 1] = str(bit)
        return "".join(pat)

    def __repr__(self):
        return f"Cube({self.pattern()!r})"

    @classmethod
    def from_pattern(cls, pattern: str) -> "Cube":
        fixed = tuple(
            (i + 1, int(c)) for i, c in enumerate(pattern) if c in "01"
        )
        return cls(len(pattern), fixed)

    @classmethod
    def vertex(cls, x: BitString) -> "Cube":
        return cls(len(x), tuple((p, x.bit(p)) for p in range(1, len(x) + 1)))

    @classmethod
    def subtree(cls, root: BitString, length: int) -> "Cube":
        """Level-`length` strings extending root."""
        if length < len(root):
            raise ValueError("subtree level above the root")
        return cls(length, tuple((p, root.bit(p)) for p in range(1, len(root) + 1)))

    @classmethod
    def whole_level(cls, length: int) -> "Cube":
        return cls(length)

    @classmethod
    def suffix_pattern(cls, length: int, start: int, bits: BitString) -> "Cube":
        """Pins positions start .. start+len(bits)-1 to the given bits."""
        return cls(
            length,
            tuple((start + t - 1, bits.bit(t)) for t in range(1, len(bits) + 1)),
        )

    def count(self) -> int:
        return 1 << (self.length - len(self.fixed))

    def contains(self, x: BitString) -> bool:
        if len(x) != self.length:
            return False
        return all(x.bit(pos) == bit for pos, bit in self.fixed)

    def intersect(self, other: "Cube") -> Optional["Cube"]:
        if self.length != other.length:
            raise ValueError("cube lengths differ")
        merged = dict(self.fixed)
        for pos, bit in other.fixed:
            if merged.setdefault(pos, bit) != bit:
                return None
        return Cube(self.length, tuple(merged.items()))

    def subtract(self, other: "Cube") -> list["Cube"]:
        """self minus other, as disjoint cubes (standard peel, one cube per
        position pinned by the other cube but free here)."""
        if self.intersect(other) is None:
            return [self]
        mine = dict(self.fixed)
        pieces = []
        acc = dict(mine)
        for pos, bit in other.fixed:
            if pos in mine:
                continue
            flipped = dict(acc)
            flipped[pos] = 1 - bit
            pieces.append(Cube(self.length, tuple(flipped.items())))
            acc[pos] = bit
        return pieces

    def representative(self) -> BitString:
        v = 0
        for pos, bit in self.fixed:
            v |= bit << (self.length - pos)
        return BitString(self.length, v)

    def members(self, cap: int = 1 << 20) -> Iterator[BitString]:
        free = [p for p in range(1, self.length + 1) if p not in dict(self.fixed)]
        if self.count() > cap:
            raise ValueError(f"cube too large to enumerate ({self.count()} members)")
        base = self.representative().value
        for mask in range(1 << len(free)):
            v = base
            for k, pos in enumerate(free):
                if (mask >> k) & 1:
                    v |= 1 << (self.length - pos)
            yield BitString(self.length, v)

    def extend(self, extra: int) -> "Cube":
        """Same pins, `extra` more free low positions (the level below)."""
        return Cube(self.length + extra, self.fixed)

    def append_bits(self, bits: BitString) -> "Cube":
        """Pins positions length+1 .. length+len(bits) to the given bits."""
        new = self.fixed + tuple(
            (self.length + t, bits.bit(t)) for t in range(1, len(bits) + 1)
        )
        return Cube(self.length + len(bits), new)


def subtract_many(base: Cube, holes: list[Cube]) -> list[Cube]:
    """base minus the union of holes, as disjoint cubes."""
    parts = [base]
    for hole in holes:
        parts = [piece for cube in parts for piece in cube.subtract(hole)]
    return parts
