"""Over-segmentation of an affinity volume by thresholded union and ascent.

The segmentation is built in four fixed stages:

  (a) every edge with affinity >= t_high is unioned unconditionally;
  (b) every voxel is unioned with the far end of its single strongest
      incident edge when that affinity is >= t_low (ties: lower channel
      first, then the neighbour at the lower coordinate);
  (c) voxels with no incident edge >= t_low stay background (label 0);
  (d) basins smaller than size_min merge into the neighbour behind their
      strongest boundary edge, provided that edge is >= t_merge, processed
      to a fixpoint in decreasing order of that boundary affinity (ties:
      smaller label first); leftovers below size_min with no qualifying
      neighbour drop to background.

Output labels are densified to 1..K in order of each segment's first voxel
(flat index, x fastest), so identical inputs give identical volumes.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from affseg.unionfind import UnionFind
from affseg.volume import AffinityVolume, LabelVolume, require_same_shape


@dataclass(frozen=True)
class WatershedParams:
    t_high: float = 0.98
    t_low: float = 0.2
    size_min: int = 25
    t_merge: float = 0.3

    def __post_init__(self):
        for name in ("t_high", "t_low", "t_merge"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if not self.t_low <= self.t_merge <= self.t_high:
            raise ValueError(
                f"need t_low <= t_merge <= t_high, got "
                f"{self.t_low}, {self.t_merge}, {self.t_high}"
            )
        if self.size_min < 0:
            raise ValueError(f"size_min must be >= 0, got {self.size_min}")


@dataclass(frozen=True)
class BasinStats:
    """Voxel counts per output label, plus the background count."""

    sizes: dict[int, int]
    background: int

    @property
    def total(self) -> int:
        return self.background + sum(self.sizes.values())

    @property
    def n_segments(self) -> int:
        return len(self.sizes)


def _incident_best(aff: AffinityVolume):
    """Per voxel: the strongest incident edge and the step to its far end.

    Returns (best_aff, best_offset) flat arrays.  Candidate order encodes
    the tie rule: channel ascending, minus direction before plus.  Absent
    edges are marked -1 so any real edge beats them.
    """
    a = aff.data
    Z, Y, X = a.shape[1:]
    n = Z * Y * X
    cand = np.empty((6, n), dtype=np.float32)
    offs = np.empty(6, dtype=np.int64)
    k = 0
    for c, off in ((0, Y * X), (1, X), (2, 1)):
        minus = np.full((Z, Y, X), -1.0, dtype=np.float32)
        if c == 0:
            minus[1:, :, :] = a[0, : Z - 1, :, :]
        elif c == 1:
            minus[:, 1:, :] = a[1, :, : Y - 1, :]
        else:
            minus[:, :, 1:] = a[2, :, :, : X - 1]
        cand[k] = minus.ravel()
        offs[k] = -off
        k += 1
        plus = a[c].copy()
        if c == 0:
            plus[Z - 1, :, :] = -1.0
        elif c == 1:
            plus[:, Y - 1, :] = -1.0
        else:
            plus[:, :, X - 1] = -1.0
        cand[k] = plus.ravel()
        offs[k] = off
        k += 1
    pick = np.argmax(cand, axis=0)
    best = cand[pick, np.arange(n)]
    return best.astype(np.float64), offs[pick]


def _dense_relabel(flat_labels: np.ndarray) -> np.ndarray:
    """Map nonzero labels to 1..K by order of first occurrence; 0 stays 0."""
    uniq, first, inv = np.unique(flat_labels, return_index=True, return_inverse=True)
    new_ids = np.empty(len(uniq), dtype=np.uint64)
    order = np.argsort(first, kind="stable")
    nxt = 1
    for pos in order:
        if uniq[pos] == 0:
            new_ids[pos] = 0
        else:
            new_ids[pos] = nxt
            nxt += 1
    return new_ids[inv]


def _boundary_pairs(flat_labels: np.ndarray, aff: AffinityVolume):
    """All affinity edges whose endpoints carry two different nonzero labels.

    Returns (lo_label, hi_label, affinity) flat arrays over every such edge.
    """
    a = aff.data
    Z, Y, X = a.shape[1:]
    lab = flat_labels.reshape(Z, Y, X)
    lows, highs, vals = [], [], []
    for c, sl in ((0, np.s_[: Z - 1, :, :]), (1, np.s_[:, : Y - 1, :]), (2, np.s_[:, :, : X - 1])):
        la = lab[sl].ravel()
        if c == 0:
            lb = lab[1:, :, :].ravel()
        elif c == 1:
            lb = lab[:, 1:, :].ravel()
        else:
            lb = lab[:, :, 1:].ravel()
        av = a[c][sl].ravel()
        m = (la != lb) & (la != 0) & (lb != 0)
        if m.any():
            la, lb, av = la[m], lb[m], av[m]
            lo = np.minimum(la, lb)
            hi = np.maximum(la, lb)
            lows.append(lo)
            highs.append(hi)
            vals.append(av)
    if not lows:
        e = np.empty(0, dtype=np.uint64)
        return e, e.copy(), np.empty(0, dtype=np.float32)
    return np.concatenate(lows), np.concatenate(highs), np.concatenate(vals)


def _size_filter_flat(flat_labels: np.ndarray, aff: AffinityVolume,
                      size_min: int, t_merge: float) -> np.ndarray:
    """Rule (d): absorb under-sized segments, then drop unsalvageable ones."""
    u_all, inv_all, cnt_all = np.unique(flat_labels, return_inverse=True,
                                        return_counts=True)
    nz = u_all != 0
    uniq = u_all[nz]
    if len(uniq) == 0:
        return flat_labels.copy()
    idx_of = {int(l): i for i, l in enumerate(uniq)}
    sizes = cnt_all[nz].astype(np.int64).tolist()

    lo, hi, av = _boundary_pairs(flat_labels, aff)
    adj: list[dict[int, float]] = [dict() for _ in range(len(uniq))]
    for l, h, v in zip(lo.tolist(), hi.tolist(), av.tolist()):
        i, j = idx_of[l], idx_of[h]
        if v > adj[i].get(j, -1.0):
            adj[i][j] = v
            adj[j][i] = v

    uf = UnionFind(len(uniq))
    alive = [True] * len(uniq)
    version = [0] * len(uniq)

    def best_neighbour(i):
        """Strongest live boundary of i; ties go to the smaller neighbour id."""
        bv, bj = -1.0, -1
        for j, v in adj[i].items():
            if v > bv or (v == bv and j < bj):
                bv, bj = v, j
        return bv, bj

    heap = []
    for i in range(len(uniq)):
        if sizes[i] < size_min:
            bv, bj = best_neighbour(i)
            if bj >= 0 and bv >= t_merge:
                heapq.heappush(heap, (-bv, i, version[i]))

    while heap:
        negv, i, ver = heapq.heappop(heap)
        if not alive[i] or ver != version[i] or sizes[i] >= size_min:
            continue
        bv, bj = best_neighbour(i)
        if bj < 0 or bv < t_merge:
            continue
        if -negv != bv:
            heapq.heappush(heap, (-bv, i, ver))
            continue
        # absorb i into bj
        uf.union_into(bj, i)
        alive[i] = False
        sizes[bj] += sizes[i]
        nbrs = adj[i]
        adj[i] = {}
        for k, v in nbrs.items():
            del adj[k][i]
            if k == bj:
                continue
            merged = max(v, adj[bj].get(k, -1.0))
            adj[bj][k] = merged
            adj[k][bj] = merged
        version[bj] += 1
        if sizes[bj] < size_min:
            bv2, bj2 = best_neighbour(bj)
            if bj2 >= 0 and bv2 >= t_merge:
                heapq.heappush(heap, (-bv2, bj, version[bj]))

    # resolve every original label through the union-find; survivors below
    # size_min had no qualifying neighbour and drop to background
    mapping = np.zeros(len(u_all), dtype=np.uint64)
    dense_pos = np.nonzero(nz)[0]
    for i in range(len(uniq)):
        r = uf.find(i)
        mapping[dense_pos[i]] = 0 if sizes[r] < size_min else uniq[r]
    return mapping[inv_all]


def size_filter(labels: LabelVolume, aff: AffinityVolume,
                size_min: int, t_merge: float) -> LabelVolume:
    """Re-apply the size filter (rules d/e) to an existing labeling.

    size_min == 0 is a no-op and returns the input labels unchanged.
    """
    shape = require_same_shape(labels, aff)
    if size_min == 0:
        return LabelVolume(labels.data.copy())
    flat = labels.data.ravel()
    filtered = _size_filter_flat(flat, aff, size_min, t_merge)
    dense = _dense_relabel(filtered)
    return LabelVolume(dense.reshape(shape.as_tuple()))


def zwatershed(aff: AffinityVolume, params: WatershedParams) -> tuple[LabelVolume, BasinStats]:
    """Run the full four-stage watershed on an affinity volume."""
    shape = aff.shape3
    Z, Y, X = shape.as_tuple()
    n = shape.voxels
    uf = UnionFind(n)

    # (a) unconditional unions above t_high
    a = aff.data
    for c, off in ((0, Y * X), (1, X), (2, 1)):
        stops = [Z, Y, X]
        stops[c] -= 1
        region = a[c, : stops[0], : stops[1], : stops[2]]
        strong = region >= params.t_high
        if strong.any():
            zz, yy, xx = np.nonzero(strong)
            us = ((zz * Y + yy) * X + xx).tolist()
            union = uf.union
            for uu in us:
                union(uu, uu + off)

    # (b) steepest-ascent joins down to t_low
    best, step = _incident_best(aff)
    grow = best >= params.t_low
    union = uf.union
    for v, s in zip(np.nonzero(grow)[0].tolist(), step[grow].tolist()):
        union(v, v + s)

    # (c) voxels with nothing >= t_low stay background
    roots = np.fromiter((uf.find(i) for i in range(n)), dtype=np.int64, count=n)
    root_labels = roots.astype(np.uint64) + 1
    root_labels[~grow] = 0
    dense = _dense_relabel(root_labels)

    # (d)/(e) size filtering and final densification
    if params.size_min > 0:
        filtered = _size_filter_flat(dense, aff, params.size_min, params.t_merge)
        dense = _dense_relabel(filtered)

    vol = LabelVolume(dense.reshape(shape.as_tuple()))
    u, cnts = np.unique(dense, return_counts=True)
    sizes = {int(lab): int(cnt) for lab, cnt in zip(u, cnts) if lab != 0}
    background = int(cnts[u == 0][0]) if (u == 0).any() else 0
    return vol, BasinStats(sizes=sizes, background=background)
