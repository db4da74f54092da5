"""Cluster decompositions of {1, ..., N} and their refinement order.

Particles are labelled 1..N.  Blocks inside a decomposition and the
intercluster links between blocks are addressed by 0-based position in the
canonical ordering (blocks sorted by their least element, links sorted
lexicographically by block position).
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from itertools import combinations
from typing import Iterable, Sequence

MAX_PARTICLES = 8


@dataclass(frozen=True, order=True)
class PairIndex:
    """A pair {i, j} of particle labels with i < j."""

    i: int
    j: int

    def __post_init__(self):
        if not (1 <= self.i < self.j):
            raise ValueError(f"pair needs 1 <= i < j, got ({self.i}, {self.j})")

    @classmethod
    def of(cls, a: int, b: int) -> "PairIndex":
        return cls(min(a, b), max(a, b))


@dataclass(frozen=True)
class InterclusterLink:
    """Link k joining blocks ``from_block`` < ``to_block`` of a decomposition."""

    k: int
    from_block: int
    to_block: int

    def __post_init__(self):
        if self.from_block == self.to_block:
            raise ValueError("a link must join two different blocks")


@dataclass(frozen=True)
class ClusterDecomposition:
    """A set partition of {1..n} stored in canonical form."""

    blocks: tuple[tuple[int, ...], ...]
    n: int

    def __init__(self, blocks: Iterable[Iterable[int]], n: int | None = None):
        canon = tuple(sorted(tuple(sorted(int(i) for i in blk)) for blk in blocks))
        if any(len(blk) == 0 for blk in canon):
            raise ValueError("blocks must be nonempty")
        flat = [i for blk in canon for i in blk]
        if n is None:
            n = max(flat) if flat else 0
        if sorted(flat) != list(range(1, n + 1)):
            raise ValueError(f"blocks {canon} do not partition 1..{n}")
        object.__setattr__(self, "blocks", canon)
        object.__setattr__(self, "n", n)

    @property
    def size(self) -> int:
        """Number of clusters |a|."""
        return len(self.blocks)

    def __len__(self) -> int:
        return len(self.blocks)

    def __repr__(self) -> str:
        inner = ",".join("{" + ",".join(map(str, b)) + "}" for b in self.blocks)
        return f"ClusterDecomposition({{{inner}}})"

    def block_of(self, particle: int) -> int:
        for pos, blk in enumerate(self.blocks):
            if particle in blk:
                return pos
        raise ValueError(f"particle {particle} not in 1..{self.n}")

    def pairs(self) -> list[PairIndex]:
        """All pairs alpha with alpha <= self (both ends in one block)."""
        return [PairIndex(i, j) for blk in self.blocks for i, j in combinations(blk, 2)]

    def crossing_pairs(self) -> list[PairIndex]:
        """All pairs alpha that are not <= self."""
        return [
            PairIndex(i, j)
            for i, j in combinations(range(1, self.n + 1), 2)
            if self.block_of(i) != self.block_of(j)
        ]

    def to_json(self) -> str:
        return json.dumps([list(b) for b in self.blocks])

    @classmethod
    def from_json(cls, text: str | Sequence[Sequence[int]]) -> "ClusterDecomposition":
        data = json.loads(text) if isinstance(text, str) else text
        return cls(data)

    @classmethod
    def singletons(cls, n: int) -> "ClusterDecomposition":
        return cls([[i] for i in range(1, n + 1)], n)

    @classmethod
    def whole(cls, n: int) -> "ClusterDecomposition":
        return cls([list(range(1, n + 1))], n)


def _check_n(n: int) -> None:
    if not isinstance(n, int) or not 2 <= n <= MAX_PARTICLES:
        raise ValueError(f"particle count must be an integer in [2, {MAX_PARTICLES}], got {n!r}")


def enumerate_decompositions(n: int) -> list[ClusterDecomposition]:
    """All set partitions of {1..n}, generated from restricted growth strings.

    Ordered by number of blocks, then by canonical block tuple.
    """
    _check_n(n)
    out = []
    rgs = [0] * n
    maxes = [0] * n

    def rec(pos: int) -> None:
        if pos == n:
            blocks: dict[int, list[int]] = {}
            for idx, label in enumerate(rgs):
                blocks.setdefault(label, []).append(idx + 1)
            out.append(ClusterDecomposition(blocks.values(), n))
            return
        top = maxes[pos - 1] + 1
        for label in range(top + 1):
            rgs[pos] = label
            maxes[pos] = max(maxes[pos - 1], label)
            rec(pos + 1)

    rgs[0] = 0
    maxes[0] = 0
    rec(1)
    out.sort(key=lambda d: (d.size, d.blocks))
    return out


def decompositions_of_size(n: int, k: int) -> list[ClusterDecomposition]:
    return [d for d in enumerate_decompositions(n) if d.size == k]


def _same_n(b: ClusterDecomposition, a: ClusterDecomposition) -> None:
    if b.n != a.n:
        raise ValueError(f"decompositions over different N ({b.n} vs {a.n})")


def is_refinement(b: ClusterDecomposition, a: ClusterDecomposition) -> bool:
    """b <= a: every block of b lies inside a block of a."""
    _same_n(b, a)
    return all(any(set(cb) <= set(da) for da in a.blocks) for cb in b.blocks)


def is_strict_refinement(b: ClusterDecomposition, a: ClusterDecomposition) -> bool:
    return b != a and is_refinement(b, a)


def pair_leq(alpha: PairIndex, a: ClusterDecomposition) -> bool:
    """alpha <= a: both particles of the pair sit in one block of a."""
    if alpha.j > a.n:
        raise ValueError(f"pair {alpha} out of range for N={a.n}")
    return a.block_of(alpha.i) == a.block_of(alpha.j)


def pair_as_decomposition(alpha: PairIndex, n: int) -> ClusterDecomposition:
    rest = [[i] for i in range(1, n + 1) if i not in (alpha.i, alpha.j)]
    return ClusterDecomposition([[alpha.i, alpha.j], *rest], n)


def intercluster_links(b: ClusterDecomposition) -> list[InterclusterLink]:
    """The C(|b|, 2) links between blocks of b, in lexicographic block order."""
    if b.size < 2:
        raise ValueError("a one-cluster decomposition has no intercluster links")
    return [
        InterclusterLink(k, lo, hi)
        for k, (lo, hi) in enumerate(combinations(range(b.size), 2))
    ]


def merge_blocks(c: ClusterDecomposition, link: InterclusterLink) -> ClusterDecomposition:
    """Join the two blocks of c connected by ``link``."""
    lo, hi = sorted((link.from_block, link.to_block))
    if lo < 0 or hi >= c.size:
        raise ValueError(f"link {link} invalid for a decomposition with {c.size} blocks")
    merged = c.blocks[lo] + c.blocks[hi]
    rest = [blk for pos, blk in enumerate(c.blocks) if pos not in (lo, hi)]
    return ClusterDecomposition([merged, *rest], c.n)


def split_link(b: ClusterDecomposition, c: ClusterDecomposition) -> InterclusterLink:
    """For c < b with |c| = |b| + 1, the link of c whose merge gives b."""
    _same_n(b, c)
    if c.size != b.size + 1 or not is_refinement(c, b):
        raise ValueError("c must be an immediate refinement of b")
    for link in intercluster_links(c):
        if merge_blocks(c, link) == b:
            return link
    raise AssertionError("unreachable: immediate refinement without a merging link")
