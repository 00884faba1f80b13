"""
Overlap and surface-distance metrics, fold splitting and fold aggregation.

All computation is full precision; percentages are rounded (half-up, one
decimal) only when reports are formatted.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass
from decimal import ROUND_HALF_UP, Decimal
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .morphology import boundary_voxels
from .volume import Kind, Volume

METRIC_NAMES = ("dsc", "iou", "recall", "precision", "hd", "hd95")


@dataclass
class MetricsRow:
    case_id: str
    dsc: float
    iou: float
    recall: float
    precision: float
    hd: Optional[float] = None
    hd95: Optional[float] = None
    both_empty: bool = False

    def as_dict(self) -> dict:
        return asdict(self)


@dataclass
class FoldSplit:
    case_ids: List[str]
    fold_of: Dict[str, int]
    seed: int
    k: int

    def folds(self) -> List[List[str]]:
        out = [[] for _ in range(self.k)]
        for cid in self.case_ids:
            out[self.fold_of[cid]].append(cid)
        return out

    def to_text(self) -> str:
        lines = [f"# k={self.k} seed={self.seed}"]
        lines += [f"{cid}\t{self.fold_of[cid]}" for cid in self.case_ids]
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "FoldSplit":
        k, seed = None, 0
        ids, fold_of = [], {}
        for line in text.splitlines():
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    key, _, val = tok.partition("=")
                    if key == "k":
                        k = int(val)
                    elif key == "seed":
                        seed = int(val)
                continue
            cid, fold = line.split("\t")
            ids.append(cid)
            fold_of[cid] = int(fold)
        if k is None:
            k = max(fold_of.values()) + 1 if fold_of else 0
        return cls(ids, fold_of, seed, k)


def _check_pair(pred: Volume, truth: Volume) -> None:
    if pred.kind is not Kind.LABEL or truth.kind is not Kind.LABEL:
        raise ValueError("metrics compare two label volumes")
    if pred.dims != truth.dims:
        raise ValueError(f"dims mismatch: {pred.dims} vs {truth.dims}")


def confusion(pred: Volume, truth: Volume) -> Tuple[int, int, int, int]:
    """Voxel counts (TP, FP, FN, TN)."""
    _check_pair(pred, truth)
    p = pred.data != 0
    t = truth.data != 0
    tp = int(np.count_nonzero(p & t))
    fp = int(np.count_nonzero(p & ~t))
    fn = int(np.count_nonzero(~p & t))
    tn = p.size - tp - fp - fn
    return tp, fp, fn, tn


def counting_metrics(tp: int, fp: int, fn: int) -> Tuple[float, float, float, float]:
    """(dsc, iou, recall, precision).

    Two empty masks score 1 on everything. An empty denominator for
    recall or precision alone gives 0.
    """
    if tp + fp + fn == 0:
        return 1.0, 1.0, 1.0, 1.0
    dsc = 2 * tp / (2 * tp + fp + fn)
    iou = tp / (tp + fp + fn)
    recall = tp / (tp + fn) if tp + fn else 0.0
    precision = tp / (tp + fp) if tp + fp else 0.0
    return dsc, iou, recall, precision


def _nearest_rank(sorted_values: np.ndarray, percentile: float) -> float:
    rank = max(1, math.ceil(percentile / 100.0 * len(sorted_values)))
    return float(sorted_values[rank - 1])


def directed_distances(a_pts: np.ndarray, b_pts: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    """Physical distance from each point of ``a_pts`` to its nearest point in ``b_pts``."""
    s = np.asarray(spacing, dtype=float)
    tree = cKDTree(b_pts * s)
    d, _ = tree.query(a_pts * s, k=1)
    return np.asarray(d, dtype=float)


def hausdorff(a: Volume, b: Volume, percentile: float = 100.0) -> float:
    """Boundary Hausdorff distance in millimeters.

    For ``percentile < 100`` each direction uses the nearest-rank
    percentile of its distances and the larger direction is returned.
    """
    _check_pair(a, b)
    if not np.allclose(a.spacing, b.spacing):
        raise ValueError("spacing mismatch")
    if not 0 < percentile <= 100:
        raise ValueError("percentile must lie in (0, 100]")
    pa, pb = boundary_voxels(a), boundary_voxels(b)
    if len(pa) == 0 or len(pb) == 0:
        raise ValueError("hausdorff distance needs two non-empty masks")
    dab = np.sort(directed_distances(pa, pb, a.spacing))
    dba = np.sort(directed_distances(pb, pa, a.spacing))
    return max(_nearest_rank(dab, percentile), _nearest_rank(dba, percentile))


def evaluate_case(case_id: str, pred: Volume, truth: Volume, distances: bool = True) -> MetricsRow:
    tp, fp, fn, _ = confusion(pred, truth)
    dsc, iou, recall, precision = counting_metrics(tp, fp, fn)
    row = MetricsRow(case_id, dsc, iou, recall, precision, both_empty=(tp + fp + fn == 0))
    if distances and tp + fp > 0 and tp + fn > 0:
        row.hd = hausdorff(pred, truth, 100.0)
        row.hd95 = hausdorff(pred, truth, 95.0)
    return row


def aggregate_folds(rows: Sequence[MetricsRow], case_id: str = "average") -> MetricsRow:
    """Arithmetic mean of each metric; distances average over rows that have them."""
    if not rows:
        raise ValueError("nothing to aggregate")
    out = {}
    for name in METRIC_NAMES:
        vals = [getattr(r, name) for r in rows if getattr(r, name) is not None]
        out[name] = float(np.mean(vals)) if vals else None
    return MetricsRow(case_id, **out)


def make_folds(case_ids: Sequence[str], k: int, seed: int) -> FoldSplit:
    """Seeded shuffle followed by round-robin assignment to ``k`` folds."""
    case_ids = [str(c) for c in case_ids]
    if k < 2:
        raise ValueError("k must be >= 2")
    if len(set(case_ids)) != len(case_ids):
        raise ValueError("duplicate case ids")
    if len(case_ids) < k:
        raise ValueError(f"{len(case_ids)} cases cannot fill {k} folds")
    order = np.random.default_rng(seed).permutation(len(case_ids))
    fold_of = {case_ids[j]: i % k for i, j in enumerate(order)}
    return FoldSplit(case_ids, fold_of, seed, k)


def round_half_up(x: float, digits: int = 1) -> float:
    q = Decimal(1).scaleb(-digits)
    return float(Decimal(repr(x)).quantize(q, rounding=ROUND_HALF_UP))


def percent(row: MetricsRow, digits: int = 1) -> Dict[str, Optional[float]]:
    """Overlap metrics as rounded percentages; distances rounded in millimeters."""
    out = {}
    for name in METRIC_NAMES:
        v = getattr(row, name)
        if v is None:
            out[name] = None
        elif name in ("hd", "hd95"):
            out[name] = round_half_up(v, digits)
        else:
            out[name] = round_half_up(100.0 * v, digits)
    return out


def report_lines(rows: Sequence[MetricsRow], split: Optional[FoldSplit] = None,
                 errors: Iterable[Tuple[str, str]] = ()) -> List[str]:
    """Metrics report as JSON lines.

    Record types, in order: ``case`` (one per row, input order), ``error``
    (cases that could not be scored), ``fold`` (mean of each fold's cases,
    when a split is given), ``overall`` (mean of the fold means, or of all
    cases without a split).
    """
    lines = []
    for r in rows:
        lines.append(_json({"record": "case", **r.as_dict()}))
    for cid, msg in errors:
        lines.append(_json({"record": "error", "case_id": cid, "message": msg}))
    if not rows:
        return lines
    if split is not None:
        by_id = {r.case_id: r for r in rows}
        fold_rows = []
        for f, ids in enumerate(split.folds()):
            members = [by_id[c] for c in ids if c in by_id]
            if not members:
                continue
            fr = aggregate_folds(members, case_id=f"fold{f}")
            fold_rows.append(fr)
            lines.append(_json({"record": "fold", "fold": f, "n": len(members), **fr.as_dict(),
                                "percent": percent(fr)}))
        overall = aggregate_folds(fold_rows, case_id="overall")
    else:
        overall = aggregate_folds(rows, case_id="overall")
    lines.append(_json({"record": "overall", "n": len(rows), **overall.as_dict(), "percent": percent(overall)}))
    return lines


def _json(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, allow_nan=False)
