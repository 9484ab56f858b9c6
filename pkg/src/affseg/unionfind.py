"""Disjoint-set forest shared by the sweep, watershed, and stitching code."""

from __future__ import annotations


class UnionFind:
    """Union-find over dense integer ids 0..n-1 with path halving.

    Two union flavours: `union` picks the root by component size (fastest,
    use when the surviving root does not matter), `union_into` forces a
    chosen root to survive (replay and stitching semantics).
    """

    __slots__ = ("parent", "size", "n_sets")

    def __init__(self, n: int):
        self.parent = list(range(n))
        self.size = [1] * n
        self.n_sets = n

    def find(self, a: int) -> int:
        parent = self.parent
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    def union(self, a: int, b: int) -> int:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return ra
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.n_sets -= 1
        return ra

    def union_into(self, winner: int, loser: int) -> int:
        """Union that keeps `winner`'s root as the root of the merged set."""
        rw, rl = self.find(winner), self.find(loser)
        if rw == rl:
            return rw
        self.parent[rl] = rw
        self.size[rw] += self.size[rl]
        self.n_sets -= 1
        return rw

    def connected(self, a: int, b: int) -> bool:
        return self.find(a) == self.find(b)
