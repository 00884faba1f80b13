import json
import math

import numpy as np
import pytest

from aortaseg.metrics import (FoldSplit, MetricsRow, aggregate_folds, confusion, counting_metrics, evaluate_case,
                              hausdorff, make_folds, percent, report_lines, round_half_up)
from aortaseg.volume import Kind, Volume
from oracles import all_pairs_hausdorff, voxel_confusion

# reference per-fold means (dataset B), in percent
TABLE_FOLDS = {
    "dsc": [93.4, 93.2, 94.8, 95.0, 83.7],
    "iou": [87.8, 87.4, 90.2, 90.4, 74.8],
    "recall": [93.2, 94.0, 94.5, 95.3, 84.0],
    "precision": [93.9, 92.7, 95.3, 94.8, 86.4],
}
TABLE_AVERAGE = {"dsc": 92.0, "iou": 86.1, "recall": 92.2, "precision": 92.6}


def label(arr, spacing=(1.0, 1.0, 1.0)):
    return Volume(np.asarray(arr, dtype=np.uint8), spacing=spacing, kind=Kind.LABEL)


def table_rows():
    return [MetricsRow(f"fold{i}", *(TABLE_FOLDS[k][i] / 100 for k in ("dsc", "iou", "recall", "precision")))
            for i in range(5)]


def test_confusion_examples():
    t = np.zeros((4, 4, 4), dtype=np.uint8)
    t[0:2, 0:2, 0:2] = 1
    assert confusion(label(t), label(t)) == (8, 0, 0, 56)
    assert confusion(label(np.zeros_like(t)), label(t)) == (0, 0, 8, 56)
    p = np.zeros_like(t)
    p[1:3, 0:2, 0:2] = 1
    assert confusion(label(p), label(t))[:3] == (4, 4, 4)
    with pytest.raises(ValueError):
        confusion(label(np.zeros((2, 2, 2))), label(t))


def test_counting_examples():
    assert counting_metrics(10, 0, 0) == (1.0, 1.0, 1.0, 1.0)
    assert counting_metrics(0, 3, 4) == (0.0, 0.0, 0.0, 0.0)
    dsc, iou, recall, precision = counting_metrics(4, 4, 4)
    assert dsc == 0.5 and recall == 0.5 and precision == 0.5
    assert iou == pytest.approx(1 / 3, abs=1e-15)


def test_both_empty_flagged():
    z = label(np.zeros((3, 3, 3)))
    row = evaluate_case("c", z, z)
    assert row.both_empty and row.dsc == 1.0 and row.iou == 1.0
    assert row.hd is None and row.hd95 is None


@pytest.mark.parametrize("seed", range(200))
def test_counting_matches_voxel_oracle(seed):
    rng = np.random.default_rng(seed)
    a = (rng.random((16, 16, 16)) < rng.uniform(0.05, 0.6)).astype(np.uint8)
    b = (rng.random((16, 16, 16)) < rng.uniform(0.05, 0.6)).astype(np.uint8)
    assert confusion(label(a), label(b)) == voxel_confusion(a, b)


def test_hausdorff_examples():
    a = np.zeros((4, 5, 1), dtype=np.uint8)
    b = np.zeros((4, 5, 1), dtype=np.uint8)
    a[0, 0, 0] = 1
    b[3, 4, 0] = 1
    assert hausdorff(label(a), label(b)) == 5.0
    assert hausdorff(label(a, (2, 1, 1)), label(b, (2, 1, 1))) == pytest.approx(math.sqrt(52), abs=1e-12)
    assert round(math.sqrt(52), 4) == 7.2111
    assert hausdorff(label(a), label(a)) == 0.0
    with pytest.raises(ValueError):
        hausdorff(label(a), label(np.zeros_like(a)))
    with pytest.raises(ValueError):
        hausdorff(label(a), label(b), percentile=0)


@pytest.mark.parametrize("seed", range(40))
def test_hausdorff_matches_all_pairs_oracle(seed):
    rng = np.random.default_rng(seed)
    shape = tuple(int(n) for n in rng.integers(3, 13, 3))
    spacing = tuple(float(s) for s in rng.uniform(0.5, 2.5, 3))
    a = (rng.random(shape) < 0.3).astype(np.uint8)
    b = (rng.random(shape) < 0.3).astype(np.uint8)
    a[0, 0, 0] = b[-1, -1, -1] = 1
    for pct in (100, 95):
        got = hausdorff(label(a, spacing), label(b, spacing), pct)
        assert abs(got - all_pairs_hausdorff(a, b, spacing, pct)) <= 1e-9
    hd = hausdorff(label(a, spacing), label(b, spacing))
    assert hd == hausdorff(label(b, spacing), label(a, spacing))
    assert hausdorff(label(a, spacing), label(b, spacing), 95) <= hd


@pytest.mark.parametrize("seed", range(50))
def test_per_case_identities(seed):
    rng = np.random.default_rng(seed)
    a = (rng.random((10, 10, 10)) < 0.4).astype(np.uint8)
    b = (rng.random((10, 10, 10)) < 0.4).astype(np.uint8)
    r = evaluate_case("x", label(a), label(b), distances=False)
    assert abs(r.iou - r.dsc / (2 - r.dsc)) <= 1e-12
    assert abs(r.dsc - 2 * r.precision * r.recall / (r.precision + r.recall)) <= 1e-12


def test_table_aggregation_reproduced():
    avg = aggregate_folds(table_rows())
    rounded = percent(avg)
    for k, v in TABLE_AVERAGE.items():
        assert rounded[k] == v
    assert rounded["hd"] is None


def test_identities_fail_on_fold_averages():
    avg = aggregate_folds(table_rows())
    assert abs(avg.iou - avg.dsc / (2 - avg.dsc)) > 1e-4
    for r in table_rows():
        # the reference fold rows are themselves means over cases
        assert abs(r.iou - r.dsc / (2 - r.dsc)) > 1e-4 or abs(r.dsc - 2 * r.precision * r.recall /
                                                                (r.precision + r.recall)) > 1e-4


def test_aggregate_single_and_empty():
    r = table_rows()[0]
    assert aggregate_folds([r]).dsc == r.dsc
    with pytest.raises(ValueError):
        aggregate_folds([])


def test_round_half_up():
    assert round_half_up(92.05) == 92.1
    assert round_half_up(0.25) == 0.3
    assert round_half_up(86.12) == 86.1


def test_make_folds_sizes():
    s = make_folds([f"case{i:02d}" for i in range(56)], 5, seed=0)
    sizes = sorted(len(f) for f in s.folds())
    assert sizes == [11, 11, 11, 11, 12]
    flat = [c for f in s.folds() for c in f]
    assert sorted(flat) == sorted(s.case_ids) and len(set(flat)) == 56
    assert [len(f) for f in make_folds(range(10), 5, 3).folds()] == [2] * 5


def test_make_folds_deterministic_and_seeded():
    ids = [str(i) for i in range(56)]
    assert make_folds(ids, 5, 7).to_text() == make_folds(ids, 5, 7).to_text()
    assert make_folds(ids, 5, 7).to_text() != make_folds(ids, 5, 8).to_text()


def test_make_folds_errors():
    with pytest.raises(ValueError):
        make_folds(["a", "b"], 5, 0)
    with pytest.raises(ValueError):
        make_folds(["a", "a", "b"], 2, 0)
    with pytest.raises(ValueError):
        make_folds(["a", "b"], 1, 0)


def test_fold_text_round_trip():
    s = make_folds([f"c{i}" for i in range(13)], 4, 2)
    back = FoldSplit.from_text(s.to_text())
    assert back == s


def test_report_schema():
    t = np.zeros((4, 4, 4), dtype=np.uint8)
    t[1:3, 1:3, 1:3] = 1
    rows = [evaluate_case(f"c{i}", label(t), label(t)) for i in range(4)]
    split = make_folds([r.case_id for r in rows], 2, 0)
    lines = report_lines(rows, split, errors=[("c9", "dims mismatch")])
    recs = [json.loads(line) for line in lines]
    assert [r["record"] for r in recs] == ["case"] * 4 + ["error", "fold", "fold", "overall"]
    assert all(r["dsc"] == 1.0 for r in recs if r["record"] == "case")
    assert recs[-1]["percent"]["dsc"] == 100.0
    assert lines == report_lines(rows, split, errors=[("c9", "dims mismatch")])
