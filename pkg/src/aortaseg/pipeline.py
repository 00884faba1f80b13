"""
Two-stage vessel segmentation.

harmonize -> coarse sliding window -> threshold -> pseudo-centerline ->
sparse centers -> fine patches at the centers -> fusion -> threshold ->
optional small-component removal.

Inside the union of fine-patch footprints the fine average replaces the
coarse probability; elsewhere the coarse probability is kept.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Dict, Optional, Sequence

import numpy as np

from .centerline import CenterSet, pseudo_centerline, sparsify
from .config import PipelineConfig, resolved
from .morphology import filter_mask, label_components_3d
from .tiling import fuse, run_coarse
from .volume import Kind, PatchSpec, Triple, Volume, clamp_patch_at, harmonize


class NoProposalError(RuntimeError):
    """The coarse stage found no vessel voxels."""

    def __init__(self, coarse_prob: Volume, coarse_mask: Volume, timings: Optional[dict] = None):
        super().__init__("coarse stage produced an empty mask; no fine-stage proposals")
        self.coarse_prob = coarse_prob
        self.coarse_mask = coarse_mask
        self.timings = timings or {}


@dataclass
class PipelineResult:
    coarse_prob: Volume
    coarse_mask: Volume
    dense_centers: CenterSet
    centers: CenterSet
    fine_prob: Volume  # fine-only average, 0 outside fine coverage
    final_prob: Volume
    final_mask: Volume
    fine_locations: list
    timings: Dict[str, float] = field(default_factory=dict)
    stats: Dict[str, int] = field(default_factory=dict)


def binarize(p: Volume, threshold: float) -> Volume:
    if not 0 < threshold < 1:
        raise ValueError("threshold must lie in (0, 1)")
    if p.kind is not Kind.PROBABILITY:
        raise ValueError("binarize expects a probability volume")
    return p.with_data((p.data >= threshold).astype(np.uint8), kind=Kind.LABEL)


def fit_patch(patch: Sequence[int], dims: Sequence[int]) -> Triple:
    """Shrink a patch to the volume on axes where the volume is smaller."""
    return tuple(min(int(p), int(d)) for p, d in zip(patch, dims))


def prepare(v: Volume, cfg: PipelineConfig) -> Volume:
    """Harmonize once; a volume already flagged as harmonized passes through."""
    if v.kind is not Kind.HU:
        raise ValueError("pipeline input must be an HU volume")
    return v if v.harmonized else harmonize(v, cfg.source_tag)


def coarse_stage(hu: Volume, cfg: PipelineConfig, workers: Optional[int] = None):
    """Returns (coarse probability, coarse mask, tile count)."""
    patch = fit_patch(cfg.coarse_patch, hu.dims)
    stride = fit_patch(cfg.coarse_stride, patch)
    prob, plan = run_coarse(hu, cfg.predictor("coarse"), patch, stride, workers)
    return prob, binarize(prob, cfg.coarse_threshold), len(plan)


def center_stage(coarse_mask: Volume, cfg: PipelineConfig):
    """Returns (dense pseudo-centerline, sparse centers)."""
    dense = pseudo_centerline(coarse_mask)
    return dense, sparsify(dense, cfg.effective_d_min)


def fine_locations(centers: CenterSet, fine_patch: Sequence[int], dims: Sequence[int]):
    patch = fit_patch(fine_patch, dims)
    return [clamp_patch_at(c, patch, dims) for c in centers]


def refine_stage(hu: Volume, coarse_prob: Volume, centers: CenterSet, cfg: PipelineConfig,
                 workers: Optional[int] = None):
    """Fine predictions at ``centers`` merged over the coarse probability.

    Returns:
        (fine-only probability, merged probability, final mask, patch locations)
    """
    if coarse_prob.dims != hu.dims:
        raise ValueError(f"coarse probability dims {coarse_prob.dims} do not match volume {hu.dims}")
    predictor = cfg.predictor("fine")
    predictor.check_target(hu.dims)
    locs = fine_locations(centers, cfg.fine_patch, hu.dims)
    acc = fuse(predictor, hu, locs, workers)
    weighted_sum, weight = acc.sums()
    fine = np.zeros(hu.dims)
    np.divide(weighted_sum, weight, out=fine, where=weight > 0)
    fine = np.clip(fine, 0.0, 1.0)
    merged = np.where(weight > 0, fine, coarse_prob.data)
    fine_prob = coarse_prob.with_data(fine, kind=Kind.PROBABILITY)
    final_prob = coarse_prob.with_data(merged, kind=Kind.PROBABILITY)
    mask = filter_mask(binarize(final_prob, cfg.fine_threshold), cfg.min_component_size)
    return fine_prob, final_prob, mask, locs


def run(v: Volume, cfg: PipelineConfig = PipelineConfig(), workers: Optional[int] = None) -> PipelineResult:
    """Full two-stage segmentation of one HU volume.

    Raises:
        NoProposalError: the coarse mask is empty.
    """
    cfg = resolved(cfg)
    timings = {}
    t0 = time.perf_counter()
    hu = prepare(v, cfg)
    t1 = time.perf_counter()
    timings["harmonize"] = t1 - t0

    coarse_prob, coarse_mask, n_tiles = coarse_stage(hu, cfg, workers)
    t2 = time.perf_counter()
    timings["coarse"] = t2 - t1
    if not coarse_mask.data.any():
        raise NoProposalError(coarse_prob, coarse_mask, timings)

    dense, centers = center_stage(coarse_mask, cfg)
    t3 = time.perf_counter()
    timings["centerline"] = t3 - t2

    fine_prob, final_prob, final_mask, locs = refine_stage(hu, coarse_prob, centers, cfg, workers)
    t4 = time.perf_counter()
    timings["refine"] = t4 - t3

    stats = {
        "tiles": n_tiles,
        "dense_centers": len(dense),
        "sparse_centers": len(centers),
        "fine_patches": len(locs),
        "coarse_foreground": int(np.count_nonzero(coarse_mask.data)),
        "final_foreground": int(np.count_nonzero(final_mask.data)),
        "components": label_components_3d(final_mask).count,
    }
    return PipelineResult(coarse_prob, coarse_mask, dense, centers, fine_prob, final_prob, final_mask,
                          locs, timings, stats)


def footprint_union(locs: Sequence[PatchSpec], dims: Sequence[int]) -> np.ndarray:
    out = np.zeros(tuple(dims), dtype=bool)
    for loc in locs:
        out[loc.slices] = True
    return out
