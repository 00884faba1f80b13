"""Acceptance criteria, one test per criterion.

Each criterion prints a single ``[criterion N] PASS|FAIL ...`` line (shown
in the terminal summary under pytest). The file also runs standalone:
``python3 tests/test_acceptance.py``.
"""

import gzip
import math
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from aortaseg.centerline import coverage_check, default_d_min, pseudo_centerline, slice_centroids, sparsify  # noqa: E402
from aortaseg.centerline import CenterSet  # noqa: E402
from aortaseg.cli import main as cli_main  # noqa: E402
from aortaseg.config import PipelineConfig  # noqa: E402
from aortaseg.metrics import (MetricsRow, aggregate_folds, confusion, counting_metrics, evaluate_case,  # noqa: E402
                              hausdorff, make_folds, percent)
from aortaseg.nifti import (DT_FLOAT32, DT_INT16, DT_UINT8, NiftiError, load, read_volume, save,  # noqa: E402
                            write_volume)
from aortaseg.phantom import PhantomSpec, distance_to_axes, generate  # noqa: E402
from aortaseg.pipeline import run  # noqa: E402
from aortaseg.predictor import Window  # noqa: E402
from aortaseg.volume import Kind, SourceTag, Volume  # noqa: E402
from oracles import all_pairs_hausdorff, handmade_nifti, voxel_confusion  # noqa: E402

RESULTS = {}

TABLE_FOLDS = {
    "dsc": [93.4, 93.2, 94.8, 95.0, 83.7],
    "iou": [87.8, 87.4, 90.2, 90.4, 74.8],
    "recall": [93.2, 94.0, 94.5, 95.3, 84.0],
    "precision": [93.9, 92.7, 95.3, 94.8, 86.4],
}
TABLE_AVERAGE = {"dsc": 92.0, "iou": 86.1, "recall": 92.2, "precision": 92.6}
PHANTOM_WINDOW = Window(158, 394, 0)  # band centred on lumen 276, cut at the lumen/background midpoint


def report(n, ok, detail):
    line = f"[criterion {n:2d}] {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    return ok


def table_rows():
    names = ("dsc", "iou", "recall", "precision")
    return [MetricsRow(f"fold{i}", *(TABLE_FOLDS[k][i] / 100 for k in names)) for i in range(5)]


def identities_hold(r, tol):
    iou_ok = abs(r.iou - r.dsc / (2 - r.dsc)) <= tol
    f1_ok = r.precision + r.recall == 0 or abs(r.dsc - 2 * r.precision * r.recall / (r.precision + r.recall)) <= tol
    return iou_ok and f1_ok


def criterion_1():
    t0 = time.perf_counter()
    rounded = percent(aggregate_folds(table_rows()))
    elapsed = time.perf_counter() - t0
    got = {k: rounded[k] for k in TABLE_AVERAGE}
    ok = got == TABLE_AVERAGE and elapsed < 1.0
    return report(1, ok, f"table average {got} expected {TABLE_AVERAGE} ({elapsed * 1000:.1f} ms)")


def _random_pairs(n, shape):
    for seed in range(n):
        rng = np.random.default_rng(seed)
        a = (rng.random(shape) < rng.uniform(0.05, 0.6)).astype(np.uint8)
        b = (rng.random(shape) < rng.uniform(0.05, 0.6)).astype(np.uint8)
        yield seed, a, b


def criterion_2():
    t0 = time.perf_counter()
    count_bad = 0
    for _, a, b in _random_pairs(200, (16, 16, 16)):
        la, lb = Volume(a, kind=Kind.LABEL), Volume(b, kind=Kind.LABEL)
        if confusion(la, lb) != voxel_confusion(a, b):
            count_bad += 1
    worst = 0.0
    n_hd = 0
    for seed in range(60):
        rng = np.random.default_rng(1000 + seed)
        shape = tuple(int(s) for s in rng.integers(4, 13, 3))
        spacing = tuple(float(s) for s in rng.uniform(0.5, 2.5, 3))
        a = (rng.random(shape) < 0.25).astype(np.uint8)
        b = (rng.random(shape) < 0.25).astype(np.uint8)
        a[0, 0, 0] = b[-1, -1, -1] = 1
        la, lb = Volume(a, spacing, kind=Kind.LABEL), Volume(b, spacing, kind=Kind.LABEL)
        for pct in (100, 95):
            worst = max(worst, abs(hausdorff(la, lb, pct) - all_pairs_hausdorff(a, b, spacing, pct)))
            n_hd += 1
    elapsed = time.perf_counter() - t0
    ok = count_bad == 0 and worst <= 1e-9 and elapsed < 30
    return report(2, ok, f"counting mismatches {count_bad}/200, HD/HD95 max error {worst:.2e} over {n_hd} "
                         f"comparisons ({elapsed:.1f} s)")


def criterion_3():
    rows = []
    for seed, a, b in _random_pairs(200, (16, 16, 16)):
        rows.append(evaluate_case(str(seed), Volume(a, kind=Kind.LABEL), Volume(b, kind=Kind.LABEL),
                                  distances=False))
    for tp, fp, fn in ((4, 4, 4), (1, 0, 0), (7, 3, 0), (5, 0, 9), (0, 2, 3)):
        rows.append(MetricsRow("counts", *counting_metrics(tp, fp, fn)))
    per_case_ok = all(identities_hold(r, 1e-12) for r in rows)
    avg = aggregate_folds(table_rows())
    averaged_fail = not identities_hold(avg, 1e-12)
    ok = per_case_ok and averaged_fail
    return report(3, ok, f"identities hold on {len(rows)} per-case rows: {per_case_ok}; "
                         f"fail on the fold-averaged table row: {averaged_fail}")


def criterion_4():
    t0 = time.perf_counter()
    cfg = PipelineConfig(coarse_predictor=PHANTOM_WINDOW, fine_predictor=PHANTOM_WINDOW)
    finals, coarses = [], []
    for seed in range(10):
        image, truth = generate(PhantomSpec(dims=(128, 128, 128), branch_count=3, noise_sd=20, seed=seed))
        res = run(image, cfg)
        for mask, out in ((res.final_mask, finals), (res.coarse_mask, coarses)):
            tp, fp, fn, _ = confusion(mask, truth)
            out.append(counting_metrics(tp, fp, fn)[0])
    elapsed = time.perf_counter() - t0
    not_worse = sum(f >= c for f, c in zip(finals, coarses))
    ok = min(finals) >= 0.95 and not_worse >= 8 and elapsed < 120
    return report(4, ok, f"min final DSC {min(finals):.4f}, final >= coarse on {not_worse}/10 seeds "
                         f"({elapsed:.1f} s)")


def criterion_5():
    worst_axis = 0.0
    uncovered = []
    fine = PipelineConfig().fine_patch
    d_min = default_d_min(fine)
    for seed in range(10):
        spec = PhantomSpec(dims=(128, 128, 128), branch_count=0, seed=seed)
        _, truth = generate(spec)
        pts = np.floor(slice_centroids(truth.data != 0, axis=2) + 0.5)
        worst_axis = max(worst_axis, float(distance_to_axes(pts, spec).max()))
        centers = sparsify(pseudo_centerline(truth), d_min)
        uncovered.append(len(coverage_check(centers, truth, fine)))
    ok = worst_axis <= 1.0 and not any(uncovered)
    return report(5, ok, f"max transverse point to axis {worst_axis:.3f} voxel, uncovered voxels per seed "
                         f"{uncovered} (d_min {d_min})")


def criterion_6():
    rng = np.random.default_rng(6)
    violations = 0
    checked = 0
    for trial in range(50):
        pts = rng.integers(0, 40, (int(rng.integers(1, 150)), 3))
        d_min = float(rng.uniform(0, 15))
        kept = sparsify(CenterSet(pts), d_min).points
        for i in range(len(kept)):
            for j in range(i):
                checked += 1
                if math.dist(kept[i], kept[j]) < d_min:
                    violations += 1
    line = sparsify(CenterSet(np.array([[i, 0, 0] for i in range(100)])), 10)
    ok = violations == 0 and len(line) == 10 and line.points[:, 0].tolist() == list(range(0, 100, 10))
    return report(6, ok, f"{violations} violations over {checked} kept pairs; collinear case kept {len(line)}")


def criterion_7():
    cfg = PipelineConfig(coarse_predictor=Window(158, 394, 60), fine_predictor=Window(170, 380, 40))
    mismatches = []
    for seed in range(3):
        image, _ = generate(PhantomSpec(dims=(128, 128, 128), seed=seed))
        ref = None
        for workers in (1, 2, 8, 1):
            res = run(image, cfg, workers=workers)
            blob = b"".join(v.data.tobytes() for v in (res.coarse_prob, res.coarse_mask, res.fine_prob,
                                                       res.final_prob, res.final_mask))
            blob += res.centers.to_text().encode() + res.dense_centers.to_text().encode()
            if ref is None:
                ref = blob
            elif blob != ref:
                mismatches.append((seed, workers))
    ok = not mismatches
    return report(7, ok, f"workers 1/2/8 and a repeat on 3 seeds, mismatches: {mismatches}")


def criterion_8():
    with tempfile.TemporaryDirectory() as tmp:
        tmp = Path(tmp)
        k_img, k_truth = generate(PhantomSpec(dims=(64, 64, 48), trunk_radius=6, trunk_tilt=4, noise_sd=0,
                                              source_style=SourceTag.K, seed=8))
        raw_lumen = set(np.unique(k_img.data[k_truth.data == 1]).tolist())
        save(tmp / "k.nii.gz", k_img)
        rc_k = cli_main(["harmonize", "--input", str(tmp / "k.nii.gz"), "--output", str(tmp / "kh.nii.gz"),
                         "--tag", "K"])
        lumen = set(np.unique(load(tmp / "kh.nii.gz").data[k_truth.data == 1]).tolist())
        d_img, _ = generate(PhantomSpec(dims=(64, 64, 48), trunk_radius=6, trunk_tilt=4, seed=8))
        save(tmp / "d.nii", d_img)
        rc_d = cli_main(["harmonize", "--input", str(tmp / "d.nii"), "--output", str(tmp / "dh.nii"), "--tag", "D"])
        same = (tmp / "d.nii").read_bytes() == (tmp / "dh.nii").read_bytes()
    ok = rc_k == 0 and rc_d == 0 and raw_lumen == {1300} and lumen == {276} and same
    return report(8, ok, f"K raw lumen {sorted(raw_lumen)} -> {sorted(lumen)}; D output byte-identical: {same}")


def _fuzz_inputs(n):
    rng = np.random.default_rng(9)
    seeds = [
        handmade_nifti((3, 2, 2), list(range(12))),
        handmade_nifti((2, 2, 2), [0, 1] * 4, datatype=DT_UINT8, bitpix=8, fmt="B"),
        handmade_nifti((2, 2, 1), [0.5] * 4, datatype=DT_FLOAT32, bitpix=32, fmt="f"),
        handmade_nifti((2, 2, 2), list(range(8)), endian=">"),
    ]
    seeds.append(gzip.compress(seeds[0], mtime=0))
    for i in range(n):
        raw = bytearray(seeds[i % len(seeds)])
        mode = i % 5
        if mode == 0:
            for _ in range(int(rng.integers(1, 8))):
                raw[int(rng.integers(0, len(raw)))] = int(rng.integers(0, 256))
        elif mode == 1:
            raw = raw[: int(rng.integers(0, len(raw)))]
        elif mode == 2:
            pos = int(rng.choice([0, 40, 42, 70, 72, 76, 80, 108, 112, 116, 344]))
            raw[pos:pos + 4] = rng.integers(0, 256, 4).astype(np.uint8).tobytes()
        elif mode == 3:
            raw = bytearray(rng.integers(0, 256, int(rng.integers(0, 600))).astype(np.uint8).tobytes())
        else:
            raw = bytearray(gzip.compress(bytes(raw), mtime=0))
            raw[int(rng.integers(10, len(raw)))] ^= 0xFF
        yield bytes(raw)


def criterion_9():
    rng = np.random.default_rng(90)
    bad_round_trips = 0
    for i in range(60):
        dims = tuple(int(d) for d in rng.integers(1, 9, 3))
        spacing = tuple(float(s) for s in rng.uniform(0.2, 4.0, 3))
        dt = (DT_UINT8, DT_INT16, DT_FLOAT32)[i % 3]
        if dt == DT_UINT8:
            v, hint = Volume(rng.integers(0, 2, dims).astype(np.uint8), spacing, kind=Kind.LABEL), Kind.HU
        elif dt == DT_INT16:
            v, hint = Volume(rng.integers(-32768, 32768, dims).astype(np.int16), spacing), Kind.HU
        else:
            v = Volume(rng.random(dims).astype(np.float32).astype(np.float64), spacing, kind=Kind.PROBABILITY)
            hint = Kind.PROBABILITY
        first, hdr1 = read_volume(write_volume(v, dt), kind_hint=hint)
        second, hdr2 = read_volume(write_volume(first, dt, template=hdr1), kind_hint=hint)
        expected_spacing = tuple(float(np.float32(s)) for s in spacing)
        if not (hdr2.dims == dims and second.spacing == expected_spacing and np.array_equal(second.data, v.data)):
            bad_round_trips += 1
    typed = untyped = accepted = 0
    for raw in _fuzz_inputs(500):
        try:
            read_volume(raw)
            read_volume(raw, kind_hint=Kind.PROBABILITY)
            accepted += 1
        except NiftiError:
            typed += 1
        except Exception:  # anything else is an untyped crash
            untyped += 1
    ok = bad_round_trips == 0 and untyped == 0
    return report(9, ok, f"round-trip failures {bad_round_trips}/60; fuzz 500 cases: {typed} typed errors, "
                         f"{accepted} accepted, {untyped} untyped")


def criterion_10():
    ids = [f"case{i:02d}" for i in range(56)]
    a = make_folds(ids, 5, seed=2024)
    b = make_folds(ids, 5, seed=2024)
    folds = a.folds()
    sizes = sorted((len(f) for f in folds), reverse=True)
    flat = [c for f in folds for c in f]
    disjoint = len(flat) == len(set(flat)) == 56
    identical = a.to_text().encode() == b.to_text().encode()
    ok = sizes == [12, 11, 11, 11, 11] and disjoint and identical
    return report(10, ok, f"fold sizes {sizes}, disjoint {disjoint}, byte-identical {identical}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9, criterion_10]


@pytest.mark.parametrize("criterion", CRITERIA, ids=[f"criterion_{i + 1}" for i in range(10)])
def test_acceptance(criterion):
    assert criterion(), RESULTS.get(CRITERIA.index(criterion) + 1)


if __name__ == "__main__":
    outcomes = [c() for c in CRITERIA]
    print(f"{sum(outcomes)}/{len(outcomes)} criteria pass")
    sys.exit(0 if all(outcomes) else 1)
