"""
Volumetric data model shared by every stage.

Arrays are indexed ``data[x, y, z]``. The linear voxel order used for
serialization and for "first encountered" rules is x-fastest, i.e.
``i = x + nx * (y + ny * z)``, which is numpy's Fortran order for an
``(nx, ny, nz)`` array.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from typing import Sequence, Tuple

import numpy as np

Triple = Tuple[int, int, int]

HU_SHIFT = 1024


class Kind(str, Enum):
    HU = "HU"
    PROBABILITY = "Probability"
    LABEL = "Label"


class SourceTag(str, Enum):
    """Acquisition source of a scan; K and R store lumen near +1000."""

    K = "K"
    R = "R"
    D = "D"
    UNKNOWN = "Unknown"

    @classmethod
    def parse(cls, text: str) -> "SourceTag":
        for tag in cls:
            if text.strip().lower() == tag.value.lower():
                return tag
        raise ValueError(f"unknown source tag {text!r}")


@dataclass(frozen=True, eq=False)
class Volume:
    """An immutable 3D scalar grid with physical geometry.

    Attributes:
        data: array of shape (nx, ny, nz).
        spacing: millimeters per voxel along x, y, z.
        origin: physical position of voxel (0, 0, 0) in millimeters.
        kind: what the voxel values mean.
        harmonized: provenance flag set once the source intensity shift was applied.
    """

    data: np.ndarray
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    kind: Kind = Kind.HU
    harmonized: bool = False

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume data must be a non-empty 3D array, got shape {data.shape}")
        if not np.issubdtype(data.dtype, np.number) and data.dtype != np.bool_:
            raise ValueError(f"non-numeric voxel dtype {data.dtype}")
        spacing = tuple(float(s) for s in self.spacing)
        origin = tuple(float(o) for o in self.origin)
        if len(spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in spacing):
            raise ValueError(f"spacing must be three positive finite values, got {self.spacing}")
        if len(origin) != 3 or not all(np.isfinite(o) for o in origin):
            raise ValueError(f"origin must be three finite values, got {self.origin}")
        kind = Kind(self.kind)

        if kind is Kind.LABEL:
            if data.dtype != np.uint8:
                if not np.all((data == 0) | (data == 1)):
                    raise ValueError("label volume values must be 0 or 1")
                data = data.astype(np.uint8)
            elif data.size and data.max() > 1:
                raise ValueError("label volume values must be 0 or 1")
        elif kind is Kind.PROBABILITY:
            data = data.astype(np.float64, copy=False)
            if not np.all((data >= 0.0) & (data <= 1.0)):
                raise ValueError("probability volume values must lie in [0, 1]")
        elif data.dtype == np.bool_:
            data = data.astype(np.int16)

        if data is self.data and data.flags.writeable:
            data = data.copy()
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "kind", kind)

    @property
    def dims(self) -> Triple:
        return tuple(int(n) for n in self.data.shape)

    def linear(self) -> np.ndarray:
        """Voxel values in x-fastest order."""
        return self.data.ravel(order="F")

    @classmethod
    def from_linear(cls, values: Sequence, dims: Sequence[int], **kwargs) -> "Volume":
        arr = np.asarray(values)
        if arr.size != int(np.prod(dims)):
            raise ValueError(f"{arr.size} values do not fill dims {tuple(dims)}")
        return cls(arr.reshape(tuple(dims), order="F"), **kwargs)

    def with_data(self, data: np.ndarray, kind: Kind | None = None, **changes) -> "Volume":
        """Same geometry, new values."""
        return replace(self, data=data, kind=self.kind if kind is None else kind, **changes)

    def same_grid(self, other: "Volume") -> bool:
        return self.dims == other.dims and np.allclose(self.spacing, other.spacing)


@dataclass(frozen=True)
class PatchSpec:
    """Axis-aligned subgrid: ``start`` corner plus ``size`` voxels per axis."""

    start: Triple
    size: Triple

    def __post_init__(self):
        start = tuple(int(s) for s in self.start)
        size = tuple(int(s) for s in self.size)
        if len(start) != 3 or len(size) != 3:
            raise ValueError("patch start and size must be triples")
        if min(start) < 0:
            raise ValueError(f"negative patch start {start}")
        if min(size) < 1:
            raise ValueError(f"patch size must be positive, got {size}")
        object.__setattr__(self, "start", start)
        object.__setattr__(self, "size", size)

    @property
    def stop(self) -> Triple:
        return tuple(s + n for s, n in zip(self.start, self.size))

    @property
    def slices(self) -> Tuple[slice, slice, slice]:
        return tuple(slice(s, e) for s, e in zip(self.start, self.stop))

    def fits(self, dims: Sequence[int]) -> bool:
        return all(e <= d for e, d in zip(self.stop, dims))

    def zyx_key(self) -> tuple:
        """Sort key for z-major, then y, then x enumeration."""
        return self.start[::-1] + self.size[::-1]


def harmonize(v: Volume, tag: SourceTag) -> Volume:
    """Subtract 1024 from K and R scans so lumen intensities match D scans.

    Pure: applying it twice to a K/R volume shifts by 2048. Callers that may
    see an already shifted volume check ``v.harmonized`` first.
    """
    if v.kind is not Kind.HU:
        raise ValueError(f"harmonize expects an HU volume, got {v.kind.value}")
    tag = SourceTag(tag)
    if tag in (SourceTag.K, SourceTag.R):
        data = v.data
        if np.issubdtype(data.dtype, np.integer):
            data = data.astype(np.int32)
        return v.with_data(data - HU_SHIFT, harmonized=True)
    return v.with_data(v.data, harmonized=True)


def suggest_shift(v: Volume) -> bool:
    """Advisory check: does the bright tail sit near +1000 (raw K/R convention)?

    Looks at the median of values above the 99th percentile. Never applied
    automatically.
    """
    if v.kind is not Kind.HU:
        raise ValueError("suggest_shift expects an HU volume")
    values = v.data.ravel()
    p99 = np.percentile(values, 99)
    tail = values[values > p99]
    if tail.size == 0:
        tail = values[values >= p99]
    return bool(np.median(tail) > 500)


def extract_patch(v: Volume, p: PatchSpec) -> Volume:
    if not p.fits(v.dims):
        raise ValueError(f"patch {p} exceeds volume dims {v.dims}")
    origin = tuple(o + s * sp for o, s, sp in zip(v.origin, p.start, v.spacing))
    return replace(v, data=v.data[p.slices], origin=origin)


def clamp_patch_at(center: Sequence[int], size: Sequence[int], dims: Sequence[int]) -> PatchSpec:
    """Patch of ``size`` centred on ``center``, shifted back inside the volume."""
    center = tuple(int(c) for c in center)
    size = tuple(int(s) for s in size)
    dims = tuple(int(d) for d in dims)
    if any(s > d for s, d in zip(size, dims)):
        raise ValueError(f"patch size {size} larger than dims {dims}")
    if any(c < 0 or c >= d for c, d in zip(center, dims)):
        raise ValueError(f"center {center} outside dims {dims}")
    start = tuple(min(max(c - s // 2, 0), d - s) for c, s, d in zip(center, size, dims))
    return PatchSpec(start, size)
