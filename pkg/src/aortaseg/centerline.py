"""
Pseudo-centerline proposal and sparse patch-center selection.

Instead of skeletonizing the coarse mask, each axial, coronal and
sagittal slice is split into 2D components whose centroids are lifted
back to 3D. The union of the three sweeps is a dense point cloud along
the vessels; a greedy distance filter thins it to fine-stage patch
centers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence, Union

import numpy as np
from scipy import ndimage

from .morphology import centroids, label_components_2d
from .volume import Kind, Volume, clamp_patch_at


class EmptyMaskError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class CenterSet:
    points: np.ndarray  # (N, 3) int64 voxel coordinates, canonical order
    d_min: float = 0.0

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.int64).reshape(-1, 3)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __iter__(self):
        return (tuple(int(c) for c in p) for p in self.points)

    def to_text(self) -> str:
        return "".join(f"{x} {y} {z}\n" for x, y, z in self)

    @classmethod
    def from_text(cls, text: str, d_min: float = 0.0) -> "CenterSet":
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"line {lineno}: expected 'x y z', got {line!r}")
            rows.append([int(p) for p in parts])
        return cls(np.array(rows, dtype=np.int64).reshape(-1, 3), d_min)

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_text())

    @classmethod
    def load(cls, path: Union[str, Path], d_min: float = 0.0) -> "CenterSet":
        return cls.from_text(Path(path).read_text(), d_min)


# (sweep axis, in-plane axes) in canonical sweep order: axial, coronal, sagittal
_SWEEPS = ((2, (0, 1)), (1, (0, 2)), (0, (1, 2)))


def slice_centroids(mask: np.ndarray, axis: int, connectivity: int = 8) -> np.ndarray:
    """Real-valued 3D centroids of the 2D components of every slice normal to ``axis``.

    Rows are ordered by slice index, then by 2D label.
    """
    in_plane = [a for a in range(3) if a != axis]
    occupied = np.flatnonzero(mask.any(axis=tuple(in_plane)))
    rows = []
    for k in occupied:
        lab = label_components_2d(np.take(mask, k, axis=axis), connectivity)
        cents = centroids(lab)
        pts = np.empty((lab.count, 3))
        pts[:, axis] = k
        pts[:, in_plane[0]] = cents[:, 0]
        pts[:, in_plane[1]] = cents[:, 1]
        rows.append(pts)
    if not rows:
        return np.zeros((0, 3))
    return np.concatenate(rows)


def pseudo_centerline(coarse_mask: Volume, connectivity: int = 8) -> CenterSet:
    """Dense pseudo-centerline of a binary mask.

    Centroids are rounded half-up to voxels; points with no foreground in
    their 3x3x3 neighbourhood are dropped, then duplicates are removed
    keeping the first occurrence.
    """
    if coarse_mask.kind is not Kind.LABEL:
        raise ValueError("pseudo_centerline expects a label volume")
    mask = coarse_mask.data != 0
    if not mask.any():
        raise EmptyMaskError("cannot build a centerline from an empty mask")

    sweeps = [slice_centroids(mask, axis, connectivity) for axis, _ in _SWEEPS]
    pts = np.floor(np.concatenate(sweeps) + 0.5).astype(np.int64)
    pts = np.clip(pts, 0, np.array(mask.shape) - 1)

    near = ndimage.binary_dilation(mask, structure=np.ones((3, 3, 3), dtype=bool))
    pts = pts[near[pts[:, 0], pts[:, 1], pts[:, 2]]]

    _, first = np.unique(pts, axis=0, return_index=True)
    return CenterSet(pts[np.sort(first)], 0.0)


def sparsify(dense: CenterSet, d_min: float) -> CenterSet:
    """Greedy thinning: keep a point iff it is at least ``d_min`` from every kept point."""
    if d_min < 0:
        raise ValueError("d_min must be >= 0")
    if d_min == 0 or len(dense) == 0:
        return CenterSet(dense.points, d_min)
    pts = dense.points.astype(np.float64)
    kept = np.empty_like(pts)
    n = 0
    limit = float(d_min) ** 2
    for p in pts:
        if n == 0 or np.min(np.sum((kept[:n] - p) ** 2, axis=1)) >= limit:
            kept[n] = p
            n += 1
    return CenterSet(kept[:n].astype(np.int64), d_min)


def default_d_min(fine_patch: Sequence[int]) -> int:
    return int(min(fine_patch)) // 2


def footprint_mask(centers: Iterable, patch: Sequence[int], dims: Sequence[int]) -> np.ndarray:
    covered = np.zeros(tuple(dims), dtype=bool)
    for c in centers:
        covered[clamp_patch_at(c, patch, dims).slices] = True
    return covered


def coverage_check(centers: CenterSet, mask: Volume, fine_patch: Sequence[int]) -> np.ndarray:
    """Foreground voxels outside every clamped fine-patch footprint, as (N, 3) coordinates."""
    fg = mask.data != 0
    uncovered = fg & ~footprint_mask(centers, fine_patch, mask.dims)
    return np.argwhere(uncovered)
