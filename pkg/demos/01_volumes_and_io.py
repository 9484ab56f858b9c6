"""
Volumes and the VOLB file format
================================

The two data containers everything else builds on: label volumes
(one uint64 segment id per voxel, 0 = background) and affinity volumes
(one float32 weight per lattice edge, channels z/y/x).  Both serialize
to the same little-endian VOLB container, bit-exactly.
"""

import tempfile
from pathlib import Path

import numpy as np

from affseg import AffinityVolume, LabelVolume, Shape3, read_volume, write_volume

# %%
# A label volume is just a (z, y, x) array of segment ids.

labels = LabelVolume(np.array(
    [[[1, 1, 2],
      [1, 2, 2]]], dtype=np.uint64))
print("labels:", labels, "- background voxels:", int((labels.data == 0).sum()))

# %%
# An affinity volume stores one weight per edge of the voxel lattice.
# Slot (c, z, y, x) is the edge from (z, y, x) to its +1 neighbour along
# axis c (0=z, 1=y, 2=x).  Slots whose neighbour would fall outside the
# volume are forced to zero on construction -- there is no edge there.

raw = np.random.default_rng(0).random((3, 1, 2, 3)).astype(np.float32)
aff = AffinityVolume(raw)
print("affinities:", aff)
print("x-channel slots at the right face are zeroed:", aff.data[2, :, :, -1])

# %%
# Round-tripping through the VOLB format preserves every byte.

with tempfile.TemporaryDirectory() as d:
    path = Path(d) / "labels.volb"
    write_volume(labels, path)
    print("header starts with:", path.read_bytes()[:4])
    back = read_volume(path)
    print("round-trip exact:", bool(np.array_equal(back.data, labels.data)))

# %%
# Shapes know their flat-index layout: x fastest, then y, then z.

shape = Shape3(2, 3, 4)
print("voxels:", shape.voxels)
print("flat index of (1, 2, 3):", shape.flat_index(1, 2, 3))
print("back to coordinates:", shape.unflatten(23))
