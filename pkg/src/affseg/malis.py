"""Maximin affinities and per-edge pair counts for affinity training signals.

For a pair of voxels the maximin affinity is the best achievable bottleneck:
the maximum over all connecting paths of the minimum edge affinity along the
path.  Every ordered-once pair of ground-truth-labeled voxels contributes one
count to its unique maximin edge -- to the positive channel when the labels
agree, to the negative channel when they differ.  Counts fall out of a single
Kruskal-style sweep over edges in decreasing affinity, carrying per-component
label histograms through a union-find.

Ties are broken by processing edges in (affinity desc, channel asc, z asc,
y asc, x asc) order, which pins down the maximin edge of every pair exactly.
All in-bounds lattice edges take part in the sweep, including ones with zero
affinity, so every labeled pair lands on some edge.

Voxels labeled 0 are glue: paths may run through them but they never pair.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from affseg.unionfind import UnionFind
from affseg.volume import AffinityVolume, LabelVolume, require_same_shape


class OutOfBounds(Exception):
    """A voxel coordinate lies outside the volume (or a degenerate pair was given)."""


@dataclass(frozen=True)
class PairCounts:
    """Per-edge positive / negative pair counts, each shaped like the affinities."""

    pos: np.ndarray  # (3, z, y, x) uint64
    neg: np.ndarray  # (3, z, y, x) uint64

    @property
    def total_pairs(self) -> int:
        return int(self.pos.sum()) + int(self.neg.sum())


@dataclass(frozen=True)
class MalisResult:
    loss: float
    gradient: AffinityVolume  # d loss / d affinity, unrestricted range


def edge_list(aff: AffinityVolume):
    """All in-bounds edges as flat arrays (c, z, y, x, affinity, u, v).

    u and v are flat voxel ids of the two endpoints (v is the +1 neighbour
    along the channel axis).  Order is canonical: channel-major, then z, y, x.
    """
    shape = aff.shape3
    Z, Y, X = shape.as_tuple()
    cs, zs, ys, xs, vals = [], [], [], [], []
    for c in range(3):
        stops = [Z, Y, X]
        stops[c] -= 1
        gz, gy, gx = np.meshgrid(
            np.arange(stops[0]), np.arange(stops[1]), np.arange(stops[2]),
            indexing="ij",
        )
        cs.append(np.full(gz.size, c, dtype=np.int64))
        zs.append(gz.ravel())
        ys.append(gy.ravel())
        xs.append(gx.ravel())
        vals.append(aff.data[c, : stops[0], : stops[1], : stops[2]].ravel())
    c = np.concatenate(cs)
    z = np.concatenate(zs).astype(np.int64)
    y = np.concatenate(ys).astype(np.int64)
    x = np.concatenate(xs).astype(np.int64)
    a = np.concatenate(vals)
    u = (z * Y + y) * X + x
    step = np.array([Y * X, X, 1], dtype=np.int64)
    v = u + step[c]
    return c, z, y, x, a, u, v


def sweep_order(c, z, y, x, a) -> np.ndarray:
    """Indices ordering edges by (affinity desc, channel asc, z, y, x asc)."""
    return np.lexsort((x, y, z, c, -a.astype(np.float64)))


def maximin_affinity(aff: AffinityVolume, v1, v2) -> float:
    """Best bottleneck affinity between two voxels.

    Widest-path search over the 6-neighbour lattice; every in-bounds edge
    exists (zero-affinity edges included), so the result is always defined.
    """
    shape = aff.shape3
    for v in (v1, v2):
        if not shape.contains(*v):
            raise OutOfBounds(f"voxel {tuple(v)} outside {shape}")
    if tuple(v1) == tuple(v2):
        raise OutOfBounds("maximin affinity requires two distinct voxels")
    Z, Y, X = shape.as_tuple()
    start = shape.flat_index(*v1)
    goal = shape.flat_index(*v2)
    a = aff.data
    best = np.full(shape.voxels, -1.0, dtype=np.float64)
    best[start] = 2.0  # above any affinity; the source has no bottleneck yet
    heap = [(-2.0, start)]
    while heap:
        nb, u = heapq.heappop(heap)
        b = -nb
        if b < best[u]:
            continue
        if u == goal:
            return float(b)
        uz, ux = divmod(u, Y * X)
        uy, ux = divmod(ux, X)
        for ch, dz, dy, dx, off in ((0, 1, 0, 0, Y * X), (1, 0, 1, 0, X), (2, 0, 0, 1, 1)):
            nz, ny, nx = uz + dz, uy + dy, ux + dx
            if nz < Z and ny < Y and nx < X:
                w = float(a[ch, uz, uy, ux])
                cand = min(b, w)
                if cand > best[u + off]:
                    best[u + off] = cand
                    heapq.heappush(heap, (-cand, u + off))
            nz, ny, nx = uz - dz, uy - dy, ux - dx
            if nz >= 0 and ny >= 0 and nx >= 0:
                w = float(a[ch, nz, ny, nx])
                cand = min(b, w)
                if cand > best[u - off]:
                    best[u - off] = cand
                    heapq.heappush(heap, (-cand, u - off))
    return float(best[goal])  # unreachable in practice: the lattice is connected


def malis_edge_counts(aff: AffinityVolume, gt: LabelVolume) -> PairCounts:
    """Attribute every labeled voxel pair to its maximin edge.

    Single Kruskal sweep in decreasing affinity.  When an edge joins two
    components it is, by construction, the maximin edge of exactly the pairs
    that straddle it, so the pair counts are products of the components'
    label histograms.
    """
    shape = require_same_shape(aff, gt)
    c, z, y, x, a, u, v = edge_list(aff)
    order = sweep_order(c, z, y, x, a)

    n = shape.voxels
    uf = UnionFind(n)
    labels = gt.data.ravel()
    # per-root histogram of nonzero gt labels: dict label -> count
    hist: list[dict[int, int] | None] = [None] * n
    labeled_n = [0] * n
    for i in range(n):
        lab = int(labels[i])
        if lab != 0:
            hist[i] = {lab: 1}
            labeled_n[i] = 1

    pos = np.zeros((3,) + shape.as_tuple(), dtype=np.uint64)
    neg = np.zeros((3,) + shape.as_tuple(), dtype=np.uint64)
    pos_flat = pos.reshape(3, -1)
    neg_flat = neg.reshape(3, -1)

    find = uf.find
    for idx in order:
        ei = int(idx)
        ru = find(int(u[ei]))
        rv = find(int(v[ei]))
        if ru == rv:
            continue
        nu, nv = labeled_n[ru], labeled_n[rv]
        if nu and nv:
            hu, hv = hist[ru], hist[rv]
            if len(hu) > len(hv):
                hu, hv = hv, hu
            p = 0
            for lab, cnt in hu.items():
                o = hv.get(lab)
                if o:
                    p += cnt * o
            slot = int(u[ei])  # edge slot == flat index of lower endpoint
            ch = int(c[ei])
            if p:
                pos_flat[ch, slot] += p
            if nu * nv - p:
                neg_flat[ch, slot] += nu * nv - p
        root = uf.union(ru, rv)
        absorbed = rv if root == ru else ru
        ho, hr = hist[absorbed], hist[root]
        if ho is not None:
            if hr is None:
                hist[root] = ho
            else:
                if len(hr) < len(ho):
                    hr, ho = ho, hr
                    hist[root] = hr
                for lab, cnt in ho.items():
                    hr[lab] = hr.get(lab, 0) + cnt
            hist[absorbed] = None
        labeled_n[root] = nu + nv
    return PairCounts(pos=pos, neg=neg)


def malis_gradient(aff: AffinityVolume, gt: LabelVolume, normalize: bool = False) -> MalisResult:
    """Quadratic pair loss and its gradient over the affinity volume.

    loss = sum_e pos(e) * (a_e - 1)^2 + neg(e) * a_e^2
    grad_e = 2 * pos(e) * (a_e - 1) + 2 * neg(e) * a_e

    With ``normalize`` both are divided by the total pair count;
    a volume with no labeled pairs has loss 0 and a zero gradient.
    """
    counts = malis_edge_counts(aff, gt)
    a = aff.data.astype(np.float64)
    pos = counts.pos.astype(np.float64)
    neg = counts.neg.astype(np.float64)
    loss = float(np.sum(pos * (a - 1.0) ** 2) + np.sum(neg * a**2))
    grad = 2.0 * pos * (a - 1.0) + 2.0 * neg * a
    if normalize:
        total = counts.total_pairs
        if total == 0:
            loss = 0.0
            grad = np.zeros_like(grad)
        else:
            loss /= total
            grad /= total
    return MalisResult(
        loss=loss,
        gradient=AffinityVolume(grad.astype(np.float32), check_range=False),
    )
