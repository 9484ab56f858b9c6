"""Dense volumetric containers and the VOLB on-disk format.

Everything in this package works on two arrays:

* label volumes -- one uint64 segment id per voxel, ``0`` meaning
  background / unlabeled, stored ``(z, y, x)`` with x fastest;
* affinity volumes -- one float32 weight per lattice edge, stored
  ``(3, z, y, x)`` with channel 0 = z, 1 = y, 2 = x.  Slot ``(c, z, y, x)``
  is the undirected edge between voxel ``(z, y, x)`` and its ``+1``
  neighbour along axis ``c``.  Slots whose neighbour falls outside the
  volume carry no edge and are forced to 0.0 on every construction path.

Both are serialized to a single little-endian container format ("VOLB"):

    bytes  0..3   magic b"VOLB"
    bytes  4..7   version, u32 (currently 1)
    byte   8      dtype code: 1 = u64 labels, 2 = f32 affinities
    byte   9      channel count: 1 for labels, 3 for affinities
    bytes 10..15  reserved, must be zero
    bytes 16..39  dims z, y, x as u64
    then the raw payload, channel slowest, x fastest.

Writes are deterministic: equal volumes produce byte-identical files.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"VOLB"
VERSION = 1
DTYPE_LABELS = 1
DTYPE_AFFINITIES = 2
HEADER_SIZE = 40

_HEADER = struct.Struct("<4sIBB6sQQQ")


class VolumeError(Exception):
    """Base class for volume container and file format errors."""


class BadMagic(VolumeError):
    """File does not start with the VOLB magic."""


class TruncatedPayload(VolumeError):
    """Payload length disagrees with the header dimensions."""


class UnknownDtype(VolumeError):
    """Header carries a dtype code this version does not know."""


class ShapeMismatch(VolumeError):
    """Two volumes that must be aligned have different shapes."""


@dataclass(frozen=True)
class Shape3:
    """Volume dimensions in voxels, (z, y, x)."""

    z: int
    y: int
    x: int

    def __post_init__(self):
        for name in ("z", "y", "x"):
            v = getattr(self, name)
            if not isinstance(v, (int, np.integer)) or v < 1:
                raise ValueError(f"dimension {name} must be a positive integer, got {v!r}")
        if self.z * self.y * self.x >= 2**63:
            raise ValueError("total voxel count does not fit in 64 bits")

    @property
    def voxels(self) -> int:
        return self.z * self.y * self.x

    def as_tuple(self) -> tuple[int, int, int]:
        return (self.z, self.y, self.x)

    def flat_index(self, z: int, y: int, x: int) -> int:
        """Row-major flat index, x fastest."""
        if not (0 <= z < self.z and 0 <= y < self.y and 0 <= x < self.x):
            raise IndexError(f"voxel ({z}, {y}, {x}) outside {self}")
        return (z * self.y + y) * self.x + x

    def unflatten(self, i: int) -> tuple[int, int, int]:
        if not (0 <= i < self.voxels):
            raise IndexError(f"flat index {i} outside {self}")
        x = i % self.x
        y = (i // self.x) % self.y
        z = i // (self.x * self.y)
        return (z, y, x)

    def contains(self, z: int, y: int, x: int) -> bool:
        return 0 <= z < self.z and 0 <= y < self.y and 0 <= x < self.x


def oob_edge_mask(shape: Shape3) -> np.ndarray:
    """Boolean (3, z, y, x) mask of affinity slots whose neighbour is out of bounds."""
    mask = np.zeros((3, shape.z, shape.y, shape.x), dtype=bool)
    mask[0, shape.z - 1, :, :] = True
    mask[1, :, shape.y - 1, :] = True
    mask[2, :, :, shape.x - 1] = True
    return mask


def inbounds_edge_region(channel: int, shape: Shape3) -> tuple[slice, slice, slice]:
    """(z, y, x) slices selecting the in-bounds edge slots of one channel."""
    stops = [shape.z, shape.y, shape.x]
    stops[channel] -= 1
    return (slice(0, stops[0]), slice(0, stops[1]), slice(0, stops[2]))


class LabelVolume:
    """Dense uint64 segment ids over a (z, y, x) grid; 0 = background.

    The backing array is made read-only so volumes can be shared freely
    between threads after construction.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray):
        arr = np.asarray(data)
        if arr.ndim != 3:
            raise ValueError(f"label volume must be 3-d, got shape {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.uint64)
        if arr is data:
            arr = arr.copy()
        arr.flags.writeable = False
        self.data = arr

    @classmethod
    def zeros(cls, shape: Shape3) -> "LabelVolume":
        return cls(np.zeros(shape.as_tuple(), dtype=np.uint64))

    @property
    def shape3(self) -> Shape3:
        return Shape3(*self.data.shape)

    def label_at(self, z: int, y: int, x: int) -> int:
        return int(self.data[z, y, x])

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabelVolume):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self) -> str:
        return f"LabelVolume(shape={self.data.shape})"


class AffinityVolume:
    """Float32 edge weights over the voxel lattice, shape (3, z, y, x).

    Affinities proper live in [0, 1]; the same container also carries
    per-edge gradient volumes, which is what ``check_range=False`` is for.
    Out-of-bounds slots are zeroed on construction, always.
    """

    __slots__ = ("data",)

    def __init__(self, data: np.ndarray, check_range: bool = True):
        arr = np.asarray(data)
        if arr.ndim != 4 or arr.shape[0] != 3:
            raise ValueError(f"affinity volume must have shape (3, z, y, x), got {arr.shape}")
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if arr is data:
            arr = arr.copy()
        if not arr.flags.writeable:
            arr = arr.copy()
        mask = oob_edge_mask(Shape3(*arr.shape[1:]))
        arr[mask] = 0.0
        if check_range:
            inb = arr[~mask]
            if inb.size and (inb.min() < 0.0 or inb.max() > 1.0):
                raise ValueError("affinities must lie in [0, 1]")
        arr.flags.writeable = False
        self.data = arr

    @classmethod
    def zeros(cls, shape: Shape3) -> "AffinityVolume":
        return cls(np.zeros((3,) + shape.as_tuple(), dtype=np.float32))

    @property
    def shape3(self) -> Shape3:
        return Shape3(*self.data.shape[1:])

    def __eq__(self, other) -> bool:
        if not isinstance(other, AffinityVolume):
            return NotImplemented
        return self.data.shape == other.data.shape and bool(np.array_equal(self.data, other.data))

    def __repr__(self) -> str:
        return f"AffinityVolume(shape={self.data.shape[1:]})"


def require_same_shape(a, b) -> Shape3:
    """Raise ShapeMismatch unless both volumes cover the same grid."""
    sa, sb = a.shape3, b.shape3
    if sa != sb:
        raise ShapeMismatch(f"volume shapes differ: {sa} vs {sb}")
    return sa


def write_volume(vol: LabelVolume | AffinityVolume, path) -> None:
    """Write a volume to `path` in VOLB format. Deterministic bytes."""
    if isinstance(vol, LabelVolume):
        dtype_code, channels = DTYPE_LABELS, 1
        payload = np.ascontiguousarray(vol.data, dtype="<u8").tobytes()
        shape = vol.shape3
    elif isinstance(vol, AffinityVolume):
        dtype_code, channels = DTYPE_AFFINITIES, 3
        payload = np.ascontiguousarray(vol.data, dtype="<f4").tobytes()
        shape = vol.shape3
    else:
        raise TypeError(f"cannot serialize {type(vol).__name__}")
    header = _HEADER.pack(MAGIC, VERSION, dtype_code, channels, b"\x00" * 6,
                          shape.z, shape.y, shape.x)
    with open(path, "wb") as f:
        f.write(header)
        f.write(payload)


def read_volume(path) -> LabelVolume | AffinityVolume:
    """Read a VOLB file back into memory, bit-for-bit."""
    with open(path, "rb") as f:
        raw = f.read()
    if len(raw) < 4 or raw[:4] != MAGIC:
        raise BadMagic(f"{path}: not a VOLB file")
    if len(raw) < HEADER_SIZE:
        raise TruncatedPayload(f"{path}: header truncated at {len(raw)} bytes")
    magic, version, dtype_code, channels, reserved, z, y, x = _HEADER.unpack_from(raw)
    if version != VERSION:
        raise VolumeError(f"{path}: unsupported format version {version}")
    if reserved != b"\x00" * 6:
        raise VolumeError(f"{path}: reserved header bytes are not zero")
    if dtype_code == DTYPE_LABELS:
        if channels != 1:
            raise VolumeError(f"{path}: label file declares {channels} channels")
        np_dtype, itemsize = "<u8", 8
    elif dtype_code == DTYPE_AFFINITIES:
        if channels != 3:
            raise VolumeError(f"{path}: affinity file declares {channels} channels")
        np_dtype, itemsize = "<f4", 4
    else:
        raise UnknownDtype(f"{path}: dtype code {dtype_code}")
    shape = Shape3(int(z), int(y), int(x))
    expected = channels * shape.voxels * itemsize
    got = len(raw) - HEADER_SIZE
    if got != expected:
        raise TruncatedPayload(f"{path}: payload is {got} bytes, header implies {expected}")
    flat = np.frombuffer(raw, dtype=np_dtype, offset=HEADER_SIZE)
    if dtype_code == DTYPE_LABELS:
        return LabelVolume(flat.astype(np.uint64, copy=True).reshape(shape.as_tuple()))
    arr = flat.astype(np.float32, copy=True).reshape((3,) + shape.as_tuple())
    return AffinityVolume(arr, check_range=False)
