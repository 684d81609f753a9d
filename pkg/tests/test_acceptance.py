"""Acceptance criteria, one test function per criterion.

Each prints into the ``acceptance criteria`` terminal section (see conftest).
"""

import math
import time
import tracemalloc
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tabstruct.anchors import (
    AnchorConfig,
    expected_anchor_count,
    generate_column_anchors,
    generate_row_anchors,
)
from tabstruct.evaluation import FIELDS, IOU_THRESHOLDS, evaluate
from tabstruct.geometry import BBox, SizeBucket, size_bucket
from tabstruct.ingest import (
    AnnotatedImage,
    Category,
    DatasetStats,
    DetectionRecord,
    GroundTruthObject,
    dataset_stats,
    iter_voc_dir,
    load_voc_file,
    parse_voc_xml,
    to_voc_xml,
)
from tabstruct.loss import (
    BatchClassStats,
    HardnessParams,
    class_hardness,
    class_weights,
    cost_sensitive_l1,
    cost_sensitive_l1_grad,
    smooth_l1,
    weighted_cross_entropy,
    weighted_cross_entropy_grad,
)
from tabstruct.structure import export_html, export_json, grid_from_json, recognize_table, synth_table

from gradcheck import central_diff, random_residuals, rel_err
from htmlgrid import canonical, occupancy_from_html
from oracle_eval import brute_force_report
from scenes import random_scene
from strategies import boxes

HERE = Path(__file__).parent
criterion = pytest.mark.criterion

# exp(-0.75) / (exp(-0.75) + exp(-0.25)), computed independently to 30 digits
W_TWO_CAT = (0.377540668798145435361099434255, 0.622459331201854564638900565746)


@criterion(1, "loss math exactness")
def test_loss_exactness():
    stats = BatchClassStats.from_boxes([1, 1, 1, 2], [200, 150, 250, 60], [100, 150, 50, 40])
    assert stats.mean_sizes[1] == 300 and stats.mean_sizes[2] == 100
    hardness = class_hardness(stats)
    assert hardness[1] == pytest.approx(0.75, abs=1e-12)
    assert hardness[2] == pytest.approx(0.25, abs=1e-12)
    w = class_weights(hardness).w
    assert w[1:3] == pytest.approx(W_TWO_CAT, abs=1e-4)
    assert w[0] == w[3] == 0.0
    single = class_weights(class_hardness(BatchClassStats.from_boxes([2, 2], [10, 30], [5, 5]))).w
    assert single[2] == 1.0
    rng = np.random.default_rng(0)
    for _ in range(2000):
        counts = rng.integers(0, 50, 4).astype(float)
        if counts.sum() == 0:
            continue
        sizes = np.where(counts > 0, rng.uniform(1, 2000, 4), np.nan)
        w = class_weights(class_hardness(BatchClassStats(counts, sizes), HardnessParams(lam=rng.uniform()))).w
        assert abs(w.sum() - 1.0) <= 1e-12


@criterion(2, "gradient verification")
def test_gradients():
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        beta = rng.uniform(0.2, 2.0)
        present = rng.random(4) < 0.7
        present[rng.integers(4)] = True
        counts = np.where(present, rng.integers(1, 5, 4), 0)
        sizes = np.where(present, rng.uniform(10, 500, 4), np.nan)
        weights = class_weights(class_hardness(BatchClassStats(counts.astype(float), sizes)))
        res = [random_residuals(rng, int(n), beta) for n in counts]
        grads = cost_sensitive_l1_grad(res, weights, beta)
        for c in np.flatnonzero(counts):

            def f(x, c=c):
                r = list(res)
                r[c] = x
                return cost_sensitive_l1(r, weights, beta)

            worst = max(worst, rel_err(grads[c], central_diff(f, res[c])))
        logits = rng.normal(scale=3, size=(4, 4))
        labels = rng.integers(0, 4, 4)
        g = weighted_cross_entropy_grad(logits, labels, weights)
        fd = central_diff(lambda z: weighted_cross_entropy(z, labels, weights), logits)
        worst = max(worst, rel_err(g, fd))
    elapsed = time.perf_counter() - start
    assert worst < 1e-5, worst
    assert elapsed < 10, elapsed


@criterion(3, "smooth L1")
@settings(max_examples=300, deadline=None)
@given(st.floats(-1e6, 1e6), st.floats(1e-3, 100))
def test_smooth_l1(x, beta):
    assert smooth_l1(2.0, 1.0) == 1.5
    assert smooth_l1(x, beta) == smooth_l1(-x, beta)
    for side in (-beta, beta):
        at = smooth_l1(side, beta)
        for probe in (np.nextafter(side, -np.inf), np.nextafter(side, np.inf)):
            assert abs(smooth_l1(probe, beta) - at) <= 1e-12
        # the two branch formulas agree at the kink
        assert abs(0.5 * side * side / beta - (abs(side) - 0.5 * beta)) <= 1e-12


@criterion(4, "anchor invariants")
def test_anchor_invariants():
    fig3 = AnchorConfig(32, 32, levels=((32, 32),), aspect_ratios=(0.5, 1, 2), clip_to_image=False)
    out = generate_column_anchors(fig3)
    assert sorted(zip(out.widths().tolist(), out.heights().tolist())) == [(16.0, 32.0), (32.0, 32.0), (64.0, 32.0)]
    rng = np.random.default_rng(4)
    for _ in range(50):
        strides = sorted(rng.choice([4, 8, 16, 32, 64], size=rng.integers(1, 5), replace=False).tolist())
        cfg = AnchorConfig(
            int(rng.integers(64, 700)),
            int(rng.integers(64, 700)),
            levels=tuple((s, float(rng.integers(8, 512))) for s in strides),
            aspect_ratios=tuple(rng.uniform(0.1, 10, rng.integers(1, 5)).tolist()),
            clip_to_image=False,
        )
        cols, rows = generate_column_anchors(cfg), generate_row_anchors(cfg)
        want = sum(
            math.ceil(cfg.image_width / s) * math.ceil(cfg.image_height / s) * len(cfg.aspect_ratios)
            for s, _ in cfg.levels
        )
        assert len(cols) == len(rows) == want == expected_anchor_count(cfg)
        for level in range(len(cfg.levels)):
            assert len(set(cols.heights()[cols.levels == level].tolist())) == 1
            assert len(set(rows.widths()[rows.levels == level].tolist())) == 1


def _same_report(a, b, tol):
    pairs = [(getattr(a, f), getattr(b, f)) for f in FIELDS]
    for c in a.per_category:
        pairs += [(getattr(a.per_category[c], f), getattr(b.per_category[c], f)) for f in FIELDS]
    return set(a.per_category) == set(b.per_category) and all(
        (math.isnan(x) and math.isnan(y)) or abs(x - y) <= tol for x, y in pairs
    )


def _matches_oracle(report, oracle, tol=1e-9):
    def close(got, want):
        return math.isnan(got) if want is None else abs(got - want) <= tol

    if set(report.per_category) != set(oracle["per_category"]):
        return False
    ok = all(close(getattr(report, f), oracle[f]) for f in FIELDS)
    for c, vals in oracle["per_category"].items():
        ok &= all(close(getattr(report.per_category[c], f), vals[f]) for f in FIELDS)
    return ok


@criterion(5, "evaluator oracle equivalence")
def test_evaluator_oracle():
    start = time.perf_counter()
    scenes = [random_scene(s) for s in range(200)]
    bad = [s for s, scene in enumerate(scenes) if not _matches_oracle(evaluate(*scene), brute_force_report(*scene))]
    elapsed = time.perf_counter() - start
    assert bad == []
    assert elapsed < 30, elapsed
    for seed in range(20):
        gt, _ = random_scene(seed)
        if not any(img.objects for img in gt):
            continue
        perfect = [DetectionRecord(i.image_id, o.category, o.bbox, 1.0) for i in gt for o in i.objects]
        full, empty = evaluate(gt, perfect), evaluate(gt, [])
        for f in FIELDS:
            v = getattr(full, f)
            assert math.isnan(v) or v == 100.0
            v = getattr(empty, f)
            assert math.isnan(v) or v == 0.0


@criterion(6, "metric monotonicity")
def test_metric_monotonicity():
    for seed in range(200):
        gt, preds = random_scene(seed)
        report = evaluate(gt, preds)
        for values in report.per_threshold.values():
            seq = [v for v in values if not math.isnan(v)]
            assert all(b <= a + 1e-9 for a, b in zip(seq, seq[1:])), (seed, values)
        squashed = [DetectionRecord(p.image_id, p.category, p.bbox, math.sqrt(p.score) / 2) for p in preds]
        assert _same_report(report, evaluate(gt, squashed), 0.0), seed
    assert IOU_THRESHOLDS == tuple(sorted(IOU_THRESHOLDS))


def _random_tables(n):
    rng = np.random.default_rng(7)
    for i in range(n):
        n_rows, n_cols = int(rng.integers(1, 11)), int(rng.integers(1, 11))
        spans, taken = [], set()
        for _ in range(int(rng.integers(0, 4))):
            r, c = int(rng.integers(n_rows)), int(rng.integers(n_cols))
            rs, cs = int(rng.integers(1, n_rows - r + 1)), int(rng.integers(1, n_cols - c + 1))
            block = {(a, b) for a in range(r, r + rs) for b in range(c, c + cs)}
            if not block & taken:
                taken |= block
                spans.append((r, c, rs, cs))
        # every other table on a tight frame, cells 12 px on average
        frame = None if i % 2 else BBox(10, 10, 10 + 24 * n_cols, 10 + 24 * n_rows)
        yield n_rows, n_cols, spans, frame, i


def _logical(grid):
    return [(c.row, c.col, c.rowspan, c.colspan) for c in grid.cells]


@criterion(7, "structure round-trip")
def test_structure_round_trip():
    start = time.perf_counter()
    for n_rows, n_cols, spans, frame, seed in _random_tables(100):
        recs, truth = synth_table(n_rows, n_cols, spans, frame=frame, seed=seed)
        got = recognize_table(recs)
        assert got == truth
        got.check_exact_cover()
        recs, truth = synth_table(n_rows, n_cols, spans, frame=frame, seed=seed, jitter=2.0)
        assert min(b - a for a, b in truth.row_extents + truth.col_extents) >= 10
        got = recognize_table(recs)
        assert (got.n_rows, got.n_cols) == (truth.n_rows, truth.n_cols)
        assert _logical(got) == _logical(truth), seed
        got.check_exact_cover()
    assert time.perf_counter() - start < 10


@criterion(8, "export integrity")
def test_export_integrity():
    for n_rows, n_cols, spans, frame, seed in _random_tables(100):
        _, grid = synth_table(n_rows, n_cols, spans, frame=frame, seed=seed)
        lattice, _ = occupancy_from_html(export_html(grid))
        assert canonical(lattice) == canonical(grid.occupancy())
        assert grid_from_json(export_json(grid)) == grid
    from test_structure import golden_grids

    grids = golden_grids()
    assert len(grids) == 3
    for name, grid in grids.items():
        assert export_html(grid).encode() == (HERE / "golden" / f"{name}.html").read_bytes()


def _write_voc_dir(path, n, rng):
    path.mkdir()
    for i in range(n):
        objs = []
        for _ in range(int(rng.integers(1, 8))):
            x, y = rng.uniform(0, 500, 2)
            w, h = rng.uniform(1, 300, 2)
            objs.append(GroundTruthObject(list(Category)[int(rng.integers(4))], BBox(x, y, x + w, y + h)))
        (path / f"im{i:05d}.xml").write_text(to_voc_xml(AnnotatedImage(f"im{i:05d}", 900, 900, objs)))


def _peak(directory):
    tracemalloc.start()
    stats = dataset_stats(iter_voc_dir(str(directory)))
    peak = tracemalloc.get_traced_memory()[1]
    tracemalloc.stop()
    return stats, peak



@criterion(9, "ingestion")
def test_ingestion(tmp_path):
    for path in sorted((HERE / "fixtures" / "voc").glob("*.xml")):
        image = load_voc_file(str(path))
        assert parse_voc_xml(to_voc_xml(image)) == image
    rng = np.random.default_rng(9)
    _write_voc_dir(tmp_path / "small", 100, rng)
    _write_voc_dir(tmp_path / "large", 2000, rng)
    small, peak_small = _peak(tmp_path / "small")
    large, peak_large = _peak(tmp_path / "large")
    assert large.n_images == 2000
    # twenty times the files, essentially the same peak
    assert peak_large < 1.5 * peak_small + 64 * 1024, (peak_small, peak_large)

    images = list(iter_voc_dir(str(tmp_path / "large"), sort=True))
    one = dataset_stats(images)
    shards = [dataset_stats(images[k::8]) for k in range(8)]
    merged = shards[0]
    for s in shards[1:]:
        merged = merged.merge(s)
    assert merged.to_json() == one.to_json()
    assert [merged.per_category[c].mean_size for c in Category] == [one.per_category[c].mean_size for c in Category]
    assert DatasetStats().merge(one).to_json() == one.to_json()


@criterion(10, "size buckets")
@settings(max_examples=300, deadline=None)
@given(boxes())
def test_size_buckets(box):
    assert size_bucket(BBox(0, 0, 32, 32)) is SizeBucket.MEDIUM
    assert size_bucket(BBox(0, 0, 64, 64)) is SizeBucket.LARGE
    assert size_bucket(BBox(0, 0, 16, 64)) is SizeBucket.MEDIUM
    assert size_bucket(box) in set(SizeBucket)
