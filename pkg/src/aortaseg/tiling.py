"""
Sliding-window tiling and overlap fusion.

Tile predictions are independent and may run on a thread pool. Fusion is
order independent: the accumulator keeps each contribution and sums them
in one canonical order at finalization, so the fused volume is
bit-identical whatever the worker count or submission order.
"""

from __future__ import annotations

import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Iterable, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from .volume import Kind, PatchSpec, Triple, Volume, extract_patch

WeightProfile = Callable[[Triple], np.ndarray]

WORKERS_ENV = "AORTASEG_WORKERS"


def uniform_profile(size: Triple) -> np.ndarray:
    return np.ones(size, dtype=np.float64)


def gaussian_profile(size: Triple, sigma_scale: float = 0.125) -> np.ndarray:
    """Centre-weighted alternative to the default uniform profile."""
    axes = []
    for n in size:
        x = np.arange(n, dtype=np.float64) - (n - 1) / 2.0
        sigma = max(n * sigma_scale, 1e-6)
        axes.append(np.exp(-0.5 * (x / sigma) ** 2))
    w = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    w /= w.max()
    return np.maximum(w, 1e-6)


def _axis_starts(dim: int, patch: int, stride: int) -> List[int]:
    starts = list(range(0, dim - patch + 1, stride))
    if starts[-1] != dim - patch:
        starts.append(dim - patch)
    return starts


@dataclass(frozen=True)
class TilingPlan:
    patch_size: Triple
    stride: Triple
    starts: Tuple[PatchSpec, ...]

    def __len__(self):
        return len(self.starts)


def plan_tiling(dims: Sequence[int], patch_size: Sequence[int], stride: Sequence[int]) -> TilingPlan:
    """Tiles covering ``dims``, enumerated z-major, then y, then x.

    Per axis the starts are 0, t, 2t, ... with the last start clamped to
    ``dim - patch``.
    """
    dims = tuple(int(d) for d in dims)
    patch_size = tuple(int(p) for p in patch_size)
    stride = tuple(int(t) for t in stride)
    for d, p, t in zip(dims, patch_size, stride):
        if p > d:
            raise ValueError(f"patch {patch_size} larger than volume {dims}")
        if t < 1:
            raise ValueError(f"stride must be >= 1, got {stride}")
        if t > p:
            raise ValueError(f"stride {stride} exceeds patch size {patch_size}; voxels would be skipped")
    xs, ys, zs = (_axis_starts(d, p, t) for d, p, t in zip(dims, patch_size, stride))
    starts = tuple(PatchSpec((x, y, z), patch_size) for z in zs for y in ys for x in xs)
    return TilingPlan(patch_size, stride, starts)


@dataclass
class FusionAccumulator:
    """Weighted average of overlapping patch predictions.

    Contributions are buffered and reduced in canonical order (patch start
    z-major, then content digest) by :meth:`finalize`.
    """

    dims: Triple
    spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)
    origin: Tuple[float, float, float] = (0.0, 0.0, 0.0)
    _parts: list = field(default_factory=list, repr=False)

    @classmethod
    def like(cls, v: Volume) -> "FusionAccumulator":
        return cls(v.dims, v.spacing, v.origin)

    def __len__(self):
        return len(self._parts)

    def accumulate(self, patch_prob: Volume, loc: PatchSpec, weight_profile: WeightProfile = uniform_profile):
        if not loc.fits(self.dims):
            raise ValueError(f"patch {loc} outside accumulator dims {self.dims}")
        if patch_prob.dims != loc.size:
            raise ValueError(f"patch dims {patch_prob.dims} do not match location size {loc.size}")
        if patch_prob.kind is not Kind.PROBABILITY:
            raise ValueError("only probability patches can be fused")
        w = np.asarray(weight_profile(loc.size), dtype=np.float64)
        if w.shape != loc.size or np.any(w < 0):
            raise ValueError("weight profile must be non-negative with the patch shape")
        p = np.asarray(patch_prob.data, dtype=np.float64)
        digest = hashlib.blake2b(p.tobytes() + w.tobytes(), digest_size=16).digest()
        self._parts.append((loc.zyx_key(), digest, loc, p, w))
        return self

    def sums(self) -> Tuple[np.ndarray, np.ndarray]:
        """(weighted_sum, weight) grids, reduced in canonical order."""
        weighted_sum = np.zeros(self.dims, dtype=np.float64)
        weight = np.zeros(self.dims, dtype=np.float64)
        for _, _, loc, p, w in sorted(self._parts, key=lambda part: (part[0], part[1])):
            weighted_sum[loc.slices] += w * p
            weight[loc.slices] += w
        return weighted_sum, weight

    def finalize(self) -> Volume:
        weighted_sum, weight = self.sums()
        return Volume(_divide(weighted_sum, weight), self.spacing, self.origin, Kind.PROBABILITY)

    def covered(self) -> np.ndarray:
        mask = np.zeros(self.dims, dtype=bool)
        for _, _, loc, _, w in self._parts:
            mask[loc.slices] |= w > 0
        return mask


def accumulate(acc: FusionAccumulator, patch_prob: Volume, loc: PatchSpec,
               weight_profile: WeightProfile = uniform_profile) -> FusionAccumulator:
    return acc.accumulate(patch_prob, loc, weight_profile)


def finalize(acc: FusionAccumulator) -> Volume:
    return acc.finalize()


def _divide(weighted_sum: np.ndarray, weight: np.ndarray) -> np.ndarray:
    out = np.zeros_like(weighted_sum)
    np.divide(weighted_sum, weight, out=out, where=weight > 0)
    return np.clip(out, 0.0, 1.0)


def resolve_workers(workers: Optional[int] = None) -> int:
    if workers is None:
        workers = int(os.environ.get(WORKERS_ENV, "1") or 1)
    return max(1, int(workers))


def predict_patches(predictor, v: Volume, locs: Sequence[PatchSpec], workers: Optional[int] = None) -> Iterator[Tuple[PatchSpec, Volume]]:
    """Yield (loc, probability patch) in the order of ``locs``.

    With more than one worker, patches are predicted concurrently in
    bounded batches; the yield order never changes.
    """
    workers = resolve_workers(workers)
    if workers == 1:
        for loc in locs:
            yield loc, predictor.predict(extract_patch(v, loc), loc)
        return
    batch = 4 * workers
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for i in range(0, len(locs), batch):
            chunk = locs[i:i + batch]
            results = pool.map(lambda loc: predictor.predict(extract_patch(v, loc), loc), chunk)
            yield from zip(chunk, results)


def fuse(predictor, v: Volume, locs: Iterable[PatchSpec], workers: Optional[int] = None,
         weight_profile: WeightProfile = uniform_profile) -> FusionAccumulator:
    acc = FusionAccumulator.like(v)
    for loc, prob in predict_patches(predictor, v, list(locs), workers):
        acc.accumulate(prob, loc, weight_profile)
    return acc


def run_coarse(v: Volume, predictor, patch_size: Sequence[int], stride: Sequence[int],
               workers: Optional[int] = None, weight_profile: WeightProfile = uniform_profile):
    """Sliding-window pass over the whole volume.

    Returns:
        (probability volume, tiling plan).
    """
    if v.kind is not Kind.HU:
        raise ValueError("coarse stage expects an HU volume")
    predictor.check_target(v.dims)
    plan = plan_tiling(v.dims, patch_size, stride)
    acc = fuse(predictor, v, plan.starts, workers, weight_profile)
    return acc.finalize(), plan
