"""
Synthetic vessel-tree phantoms with exact ground truth.

A phantom is a union of capsules (all points within a radius of a line
segment): one trunk running through the whole volume roughly along z and
straight side branches that start on the trunk axis.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .volume import HU_SHIFT, Kind, SourceTag, Volume

Segment = Tuple[np.ndarray, np.ndarray, float]


@dataclass(frozen=True)
class PhantomSpec:
    """Phantom geometry and intensities.

    Radii are in voxels of the finest axis. ``trunk_tilt`` bounds the
    seeded lateral offset of each trunk end; set it to 0 for a tube
    exactly parallel to z.
    """

    dims: Tuple[int, int, int] = (128, 128, 128)
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    seed: int = 0
    trunk_radius: float = 8.0
    branch_count: int = 3
    branch_radius_ratio: float = 0.5
    lumen_hu: float = 276.0
    background_hu: float = 40.0
    noise_sd: float = 20.0
    source_style: SourceTag = SourceTag.D
    trunk_tilt: float = 8.0
    branch_length: Tuple[float, float] = field(default=(0.25, 0.45))

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "source_style", SourceTag(self.source_style))
        if len(self.dims) != 3 or min(self.dims) < 1:
            raise ValueError(f"bad dims {self.dims}")
        if min(self.spacing) <= 0:
            raise ValueError("spacing must be positive")
        if self.trunk_radius <= 0:
            raise ValueError("trunk_radius must be positive")
        if self.branch_count < 0:
            raise ValueError("branch_count must be >= 0")
        if not 0 < self.branch_radius_ratio <= 1:
            raise ValueError("branch_radius_ratio must lie in (0, 1]")
        if self.lumen_hu == self.background_hu:
            raise ValueError("lumen and background intensities must differ")
        if self.noise_sd < 0 or self.trunk_tilt < 0:
            raise ValueError("noise_sd and trunk_tilt must be >= 0")
        nx, ny, _ = self.dims
        if 2 * (self.trunk_radius + self.trunk_tilt + 1) > min(nx, ny):
            raise ValueError(f"trunk of radius {self.trunk_radius} does not fit in {self.dims}")


def _unit_radius(spec: PhantomSpec) -> float:
    return min(spec.spacing)


def segments(spec: PhantomSpec) -> List[Segment]:
    """(start, end, radius) of every capsule in voxel index coordinates; trunk first."""
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(2)[0])
    nx, ny, nz = spec.dims
    r = spec.trunk_radius
    cx, cy = (nx - 1) / 2.0, (ny - 1) / 2.0
    # the trunk runs past both z faces so no slice sees an end cap
    off = rng.uniform(-spec.trunk_tilt, spec.trunk_tilt, size=4)
    a = np.array([cx + off[0], cy + off[1], -(r + 2.0)])
    b = np.array([cx + off[2], cy + off[3], nz - 1 + r + 2.0])
    out = [(a, b, r)]

    br = r * spec.branch_radius_ratio
    lo = np.full(3, br + 1.0)
    hi = np.array(spec.dims, dtype=float) - 1.0 - br - 1.0
    scale = min(spec.dims)
    for _ in range(spec.branch_count):
        for _attempt in range(200):
            t = rng.uniform(0.25, 0.75)
            root = a + t * (b - a)
            phi = rng.uniform(0.0, 2 * np.pi)
            theta = np.deg2rad(rng.uniform(-30.0, 45.0))
            direction = np.array([np.cos(theta) * np.cos(phi), np.cos(theta) * np.sin(phi), np.sin(theta)])
            length = rng.uniform(*spec.branch_length) * scale
            limit = _max_extent(root, direction, lo, hi)
            length = min(length, limit)
            if length > r + br + 2.0:
                out.append((root, root + length * direction, br))
                break
        else:
            raise ValueError("could not place a branch inside the volume; enlarge dims or shrink radii")
    return out


def _max_extent(p: np.ndarray, d: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> float:
    """Largest s with lo <= p + s d <= hi per axis."""
    s = np.inf
    for i in range(3):
        if d[i] > 1e-12:
            s = min(s, (hi[i] - p[i]) / d[i])
        elif d[i] < -1e-12:
            s = min(s, (lo[i] - p[i]) / d[i])
    return max(float(s), 0.0)


def axis_points(spec: PhantomSpec) -> np.ndarray:
    """Polyline vertices: trunk ends, then (root, tip) per branch."""
    return np.array([v for a, b, _ in segments(spec) for v in (a, b)])


def segment_distance(points: np.ndarray, a: np.ndarray, b: np.ndarray, spacing=(1.0, 1.0, 1.0)) -> np.ndarray:
    """Physical distance from each of ``points`` (N, 3 index coords) to segment ab."""
    s = np.asarray(spacing, dtype=float)
    p = np.asarray(points, dtype=float) * s
    a = np.asarray(a, dtype=float) * s
    ab = np.asarray(b, dtype=float) * s - a
    t = np.clip((p - a) @ ab / (ab @ ab), 0.0, 1.0)
    return np.linalg.norm(p - a - t[:, None] * ab, axis=1)


def distance_to_axes(points: np.ndarray, spec: PhantomSpec) -> np.ndarray:
    """Distance (in voxels of the finest axis) from each point to the nearest capsule axis."""
    d = np.stack([segment_distance(points, a, b, spec.spacing) for a, b, _ in segments(spec)])
    return d.min(axis=0) / _unit_radius(spec)


def _capsule_mask(dims, spacing, a, b, radius_mm) -> np.ndarray:
    s = np.asarray(spacing, dtype=float)
    axes = [np.arange(n, dtype=float) * s[i] for i, n in enumerate(dims)]
    px, py, pz = axes[0][:, None, None], axes[1][None, :, None], axes[2][None, None, :]
    a = np.asarray(a) * s
    ab = np.asarray(b) * s - a
    t = ((px - a[0]) * ab[0] + (py - a[1]) * ab[1] + (pz - a[2]) * ab[2]) / (ab @ ab)
    np.clip(t, 0.0, 1.0, out=t)
    d2 = (px - a[0] - t * ab[0]) ** 2
    d2 += (py - a[1] - t * ab[1]) ** 2
    d2 += (pz - a[2] - t * ab[2]) ** 2
    return d2 <= radius_mm ** 2


def generate(spec: PhantomSpec) -> Tuple[Volume, Volume]:
    """Returns (HU volume, ground-truth label volume)."""
    unit = _unit_radius(spec)
    mask = np.zeros(spec.dims, dtype=bool)
    for a, b, radius in segments(spec):
        mask |= _capsule_mask(spec.dims, spec.spacing, a, b, radius * unit)

    hu = np.where(mask, float(spec.lumen_hu), float(spec.background_hu))
    if spec.noise_sd > 0:
        noise_rng = np.random.default_rng(np.random.SeedSequence(spec.seed).spawn(2)[1])
        hu = hu + noise_rng.normal(0.0, spec.noise_sd, size=spec.dims)
    if spec.source_style in (SourceTag.K, SourceTag.R):
        hu = hu + HU_SHIFT
    info = np.iinfo(np.int16)
    hu = np.clip(np.floor(hu + 0.5), info.min, info.max).astype(np.int16)

    image = Volume(hu, spec.spacing, kind=Kind.HU)
    truth = Volume(mask.astype(np.uint8), spec.spacing, kind=Kind.LABEL)
    return image, truth
