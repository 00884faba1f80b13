"""
Connected components, centroids and boundary voxels for binary masks.

Labels are dense ``1..k`` and numbered by the first voxel met in an
x-fastest linear scan, for both 2D slices and 3D volumes.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from scipy import ndimage

from .volume import Kind, Volume

_FULL = {2: 8, 3: 26}
_FACE = {2: 4, 3: 6}


@dataclass(frozen=True, eq=False)
class ComponentLabeling:
    labels: np.ndarray
    count: int
    sizes: np.ndarray  # sizes[i] is the voxel count of label i + 1
    connectivity: int


def _structure(ndim: int, connectivity: int) -> np.ndarray:
    if connectivity == _FULL[ndim]:
        return ndimage.generate_binary_structure(ndim, ndim)
    if connectivity == _FACE[ndim]:
        return ndimage.generate_binary_structure(ndim, 1)
    raise ValueError(f"connectivity {connectivity} invalid for {ndim}D; use {_FACE[ndim]} or {_FULL[ndim]}")


def label_components(mask: np.ndarray, connectivity: int) -> ComponentLabeling:
    """Label a 2D or 3D binary array indexed ``[x, y(, z)]``."""
    mask = np.asarray(mask) != 0
    if mask.ndim not in (2, 3):
        raise ValueError(f"expected a 2D or 3D mask, got {mask.ndim}D")
    raw, count = ndimage.label(mask, structure=_structure(mask.ndim, connectivity))
    if count == 0:
        return ComponentLabeling(raw.astype(np.int32), 0, np.zeros(0, dtype=np.int64), connectivity)
    flat = raw.ravel(order="F")
    _, first = np.unique(flat, return_index=True)
    # first[0] belongs to background label 0
    order = np.argsort(first[1:], kind="stable") + 1
    remap = np.zeros(count + 1, dtype=np.int32)
    remap[order] = np.arange(1, count + 1, dtype=np.int32)
    labels = remap[raw]
    sizes = np.bincount(labels.ravel(), minlength=count + 1)[1:]
    return ComponentLabeling(labels, int(count), sizes, connectivity)


def label_components_3d(m: Volume, connectivity: int = 26) -> ComponentLabeling:
    if m.kind is not Kind.LABEL:
        raise ValueError("component labeling expects a label volume")
    return label_components(m.data, connectivity)


def label_components_2d(slice_mask: np.ndarray, connectivity: int = 8) -> ComponentLabeling:
    slice_mask = np.asarray(slice_mask)
    if slice_mask.ndim != 2:
        raise ValueError("expected a 2D slice")
    return label_components(slice_mask, connectivity)


def centroids(c: ComponentLabeling) -> np.ndarray:
    """Mean member index per axis for every label; row ``i`` is label ``i + 1``."""
    if c.count == 0:
        return np.zeros((0, c.labels.ndim))
    flat = c.labels.ravel()
    coords = np.indices(c.labels.shape).reshape(c.labels.ndim, -1)
    counts = np.bincount(flat, minlength=c.count + 1)[1:].astype(np.float64)
    out = np.empty((c.count, c.labels.ndim))
    for axis in range(c.labels.ndim):
        out[:, axis] = np.bincount(flat, weights=coords[axis], minlength=c.count + 1)[1:] / counts
    return out


def centroid(c: ComponentLabeling, label: int) -> Tuple[float, ...]:
    if not 1 <= label <= c.count:
        raise ValueError(f"label {label} not in 1..{c.count}")
    idx = np.nonzero(c.labels == label)
    return tuple(float(np.mean(i)) for i in idx)


def filter_components(c: ComponentLabeling, min_size: int) -> np.ndarray:
    """Binary mask of the components with at least ``min_size`` voxels."""
    if min_size < 0:
        raise ValueError("min_size must be >= 0")
    keep = np.zeros(c.count + 1, dtype=bool)
    keep[1:] = c.sizes >= min_size
    return keep[c.labels].astype(np.uint8)


def filter_mask(m: Volume, min_size: int, connectivity: int = 26) -> Volume:
    if min_size == 0:
        return m
    return m.with_data(filter_components(label_components_3d(m, connectivity), min_size))


def boundary_mask(mask: np.ndarray) -> np.ndarray:
    """Foreground voxels with a background face neighbour; outside the grid counts as background."""
    fg = np.asarray(mask) != 0
    interior = ndimage.binary_erosion(fg, structure=ndimage.generate_binary_structure(fg.ndim, 1), border_value=0)
    return fg & ~interior


def boundary_voxels(m: Volume) -> np.ndarray:
    """(N, 3) integer coordinates of boundary voxels in x-fastest order."""
    if m.kind is not Kind.LABEL:
        raise ValueError("boundary extraction expects a label volume")
    return mask_coords(boundary_mask(m.data))


def mask_coords(mask: np.ndarray) -> np.ndarray:
    """Coordinates of nonzero voxels, sorted in x-fastest linear order."""
    flat = np.flatnonzero(np.asarray(mask).ravel(order="F"))
    return np.stack(np.unravel_index(flat, mask.shape, order="F"), axis=1)
