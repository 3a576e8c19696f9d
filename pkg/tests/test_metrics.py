import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evflare.errors import EmptyGroundTruth, InvalidRange, NotDivisible, ShapeMismatch, WindowMismatch
from evflare.events import EventStream, canonicalize, merge
from evflare.metrics import (
    METRIC_COLUMNS,
    NormalizationSpec,
    chamfer_distance,
    evaluate,
    f1_scores,
    gaussian_distance,
    nn_distances,
    pooled_mse,
    segment_metrics,
    voxel_mse,
)
from evflare.voxel import PolarityVoxelGrid, VoxelGrid

from oracles import (
    brute_chamfer,
    brute_gaussian,
    brute_nn,
    brute_nn_vectorized,
    naive_f1_scores,
    naive_mse,
    naive_pool,
    random_stream,
)

GEOM = (64, 48)
WIN = (0, 20_000)


def rel_close(a, b, tol=1e-9):
    return abs(a - b) <= tol * max(abs(b), 1e-300) or a == b


def test_identity_is_zero(rng):
    s = random_stream(rng, 500, GEOM, WIN)
    assert chamfer_distance(s, s) == 0.0
    assert gaussian_distance(s, s) == 0.0


def test_polarity_only_difference_is_span():
    gt = canonicalize([(100, 3, 4, 1)], GEOM, WIN)
    pred = canonicalize([(100, 3, 4, -1)], GEOM, WIN)
    assert chamfer_distance(pred, gt) == 100.0


def test_normalization_anchors():
    norm = NormalizationSpec((1000, 3001), (11, 21))
    s = canonicalize([(1000, 0, 0, -1), (3000, 10, 20, 1)], (11, 21), (1000, 3001))
    assert norm.points(s).tolist() == [[0, 0, 0, 0], [100, 100, 100, 100]]


def test_random_instance_matches_brute_force():
    rng = np.random.default_rng(4)
    pred = random_stream(rng, 500, GEOM, WIN)
    gt = random_stream(rng, 800, GEOM, WIN)
    assert rel_close(chamfer_distance(pred, gt), brute_chamfer(pred, gt))
    assert rel_close(gaussian_distance(pred, gt), brute_gaussian(pred, gt))


@given(st.integers(0, 2**32), st.integers(1, 120), st.integers(1, 150), st.sampled_from([(5, 4), (64, 48), (1, 1)]))
def test_nn_property(seed, n_pred, n_gt, geom):
    rng = np.random.default_rng(seed)
    win = (50, 50 + int(rng.integers(1, 30_000)))
    pred = random_stream(rng, n_pred, geom, win)
    gt = random_stream(rng, n_gt, geom, win)
    assert np.allclose(nn_distances(pred, gt), brute_nn_vectorized(pred, gt), rtol=1e-12, atol=1e-12)


def test_clustered_points_match_brute_force():
    rng = np.random.default_rng(8)
    # dense cluster + far outliers stresses the grid index's shell search
    t = np.concatenate([rng.integers(9_000, 9_050, 3000), rng.integers(0, 20_000, 20)])
    x = np.concatenate([rng.integers(30, 33, 3000), rng.integers(0, 64, 20)])
    y = np.concatenate([rng.integers(20, 22, 3000), rng.integers(0, 48, 20)])
    p = rng.choice([-1, 1], 3020)
    gt = EventStream.from_arrays(t, x, y, p, GEOM, WIN)
    pred = random_stream(rng, 400, GEOM, WIN)
    assert np.allclose(nn_distances(pred, gt), brute_nn_vectorized(pred, gt), rtol=1e-12, atol=1e-12)


def test_opposite_polarity_only_ground_truth(rng):
    gt = random_stream(rng, 50, GEOM, WIN).replace(p=np.ones(50))
    pred = random_stream(rng, 30, GEOM, WIN).replace(p=-np.ones(30))
    assert np.allclose(nn_distances(pred, gt), brute_nn(pred, gt), rtol=1e-12)
    assert np.all(nn_distances(pred, gt) >= 100)


def test_far_prediction_gaussian_limit():
    gt = canonicalize([(0, 0, 0, -1)], GEOM, WIN)
    pred = canonicalize([(19_999, 63, 47, 1)] * 3, GEOM, WIN)
    assert gaussian_distance(pred, gt) == pytest.approx(1.0)
    assert gaussian_distance(pred, gt) <= 1.0


def test_empty_cases():
    e = EventStream.empty(GEOM, WIN)
    s = canonicalize([(1, 1, 1, 1)], GEOM, WIN)
    assert chamfer_distance(e, s) == 0.0 and gaussian_distance(e, s) == 0.0
    assert segment_metrics(e, s).empty_pred
    with pytest.raises(EmptyGroundTruth):
        chamfer_distance(s, e)


def test_one_sided_adding_gt_never_increases(rng):
    pred = random_stream(rng, 300, GEOM, WIN)
    gt = random_stream(rng, 300, GEOM, WIN)
    more = merge([gt, random_stream(rng, 300, GEOM, WIN)])
    assert chamfer_distance(pred, more) <= chamfer_distance(pred, gt)
    assert gaussian_distance(pred, more) <= gaussian_distance(pred, gt)


# voxel metrics ------------------------------------------------------------------------------


def test_mse_single_cell():
    a = np.zeros((8, 480, 640), np.float32)
    b = a.copy()
    b[3, 100, 200] = 1
    assert voxel_mse(VoxelGrid(a, 0, 8), VoxelGrid(b, 0, 8)) == 1 / 2_457_600


def test_pooled_single_cell():
    a = np.zeros((2, 8, 4, 4))
    b = a.copy()
    b[0, 2, 1, 1] = 4
    pa, pb = PolarityVoxelGrid(a, 0, 8), PolarityVoxelGrid(b, 0, 8)
    # one pooled cell differs by 1 out of 2*8*2*2 pooled cells
    assert pooled_mse(pa, pb, 2) == 1 / 64
    assert pooled_mse(pa, pa, 2) == 0


@given(st.integers(0, 2**32), st.sampled_from([2, 4]))
def test_voxel_metrics_match_naive(seed, k):
    rng = np.random.default_rng(seed)
    B, H, W = 8, 32, 32
    a = rng.integers(0, 3, (2, B, H, W)) * (rng.random((2, B, H, W)) < 0.1)
    b = rng.integers(0, 3, (2, B, H, W)) * (rng.random((2, B, H, W)) < 0.1)
    pa, pb = PolarityVoxelGrid(a.astype(np.float32), 0, 8), PolarityVoxelGrid(b.astype(np.float32), 0, 8)
    assert voxel_mse(pa.signed(), pb.signed()) == naive_mse(a[0] - a[1], b[0] - b[1])
    ref = naive_mse(naive_pool(a.astype(float), k), naive_pool(b.astype(float), k))
    assert pooled_mse(pa, pb, k) == pytest.approx(ref, rel=1e-12)
    got = f1_scores(pa, pb)
    want = naive_f1_scores(a.astype(float), b.astype(float))
    assert got == pytest.approx(want, rel=1e-12)


def test_f1_hierarchy_example():
    a = np.zeros((2, 8, 4, 4))
    b = np.zeros((2, 8, 4, 4))
    a[0, 1, 2, 2] = 1
    b[1, 5, 2, 2] = 1
    r, t, tp = f1_scores(PolarityVoxelGrid(a, 0, 8), PolarityVoxelGrid(b, 0, 8))
    assert r == 0 and t == 0 and tp == 1
    assert f1_scores(PolarityVoxelGrid(a, 0, 8), PolarityVoxelGrid(a, 0, 8)) == (1, 1, 1)
    z = np.zeros_like(a)
    assert f1_scores(PolarityVoxelGrid(z, 0, 8), PolarityVoxelGrid(z, 0, 8)) == (1, 1, 1)
    assert f1_scores(PolarityVoxelGrid(z, 0, 8), PolarityVoxelGrid(a, 0, 8)) == (0, 0, 0)


def test_shape_errors():
    a = VoxelGrid(np.zeros((8, 4, 4), np.float32), 0, 8)
    b = VoxelGrid(np.zeros((8, 4, 6), np.float32), 0, 8)
    with pytest.raises(ShapeMismatch):
        voxel_mse(a, b)
    pa = PolarityVoxelGrid(np.zeros((2, 8, 6, 6)), 0, 8)
    with pytest.raises(NotDivisible):
        pooled_mse(pa, pa, 4)


# protocol -----------------------------------------------------------------------------------


def test_perfect_restoration_report(rng):
    s = random_stream(rng, 4000, GEOM, (0, 100_000))
    rep = evaluate(s, s)
    assert len(rep.segments) == 5
    assert [rep.mean[k] for k in METRIC_COLUMNS] == [0, 0, 0, 0, 0, 1, 1, 1]


def test_report_means_recompute(rng, tmp_path):
    gt = random_stream(rng, 3000, GEOM, (0, 110_000))
    pred = random_stream(rng, 2000, GEOM, (0, 110_000))
    rep = evaluate(pred, gt)
    assert len(rep.segments) == 5 and rep.dropped_us == 10_000
    for k in METRIC_COLUMNS:
        assert rep.mean[k] == pytest.approx(np.mean([s.values[k] for s in rep.segments]), rel=1e-12)
    lines = rep.to_csv().strip().splitlines()
    assert lines[0].split(",")[-8:] == list(METRIC_COLUMNS)
    assert lines[-1].startswith("mean")
    assert "TP-F1" in rep.to_text()
    assert evaluate(pred, gt, threads=4).rows() == rep.rows()


def test_evaluate_errors(rng):
    a = random_stream(rng, 10, GEOM, (0, 10_000))
    with pytest.raises(InvalidRange):
        evaluate(a, a)
    b = random_stream(rng, 10, GEOM, (0, 40_000))
    with pytest.raises(WindowMismatch):
        evaluate(b, random_stream(rng, 10, GEOM, (0, 60_000)))
