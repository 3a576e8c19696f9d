import numpy as np
import pytest
from scipy import stats

from evflare.errors import BadMask, ConfigError, InsufficientOverlap
from evflare.events import EventStream, is_submultiset, merge
from evflare.realdata import (
    Mask,
    align_streams,
    center_crop,
    estimate_noise_rate,
    inject_background_noise,
    mask_region,
    polarity_ratio,
    shift_time,
    slice_pieces,
    translate,
)

from oracles import random_stream
from streams import poisson_stream, telegraph_stream

GEOM = (64, 48)


def test_polarity_ratio_empty_bins_neutral():
    s = EventStream.from_arrays([100, 200, 1500], [0, 0, 0], [0, 0, 0], [1, -1, 1], (2, 2), (0, 3000))
    r, inside = polarity_ratio(s, 1000, 0, 3)
    assert r.tolist() == [0.5, 1.0, 0.5]
    assert inside.all()


def test_self_alignment_is_zero(rng):
    s = telegraph_stream(rng)
    res = align_streams(s, s)
    assert res.offset == 0 and res.confident and res.score == pytest.approx(1.0)


@pytest.mark.parametrize("shift", [7_000, -7_000, 20_000])
def test_constructed_shift_recovered(shift):
    rng = np.random.default_rng(abs(shift) + (shift < 0))
    ref = telegraph_stream(rng, seed=1)
    obs = inject_background_noise(shift_time(ref, shift), 2.0, seed=9)
    res = align_streams(obs, ref)
    assert abs(res.offset - shift) <= 1000 and res.confident


def test_unrelated_streams_unconfident():
    false_pos = 0
    for i in range(20):
        rng = np.random.default_rng(100 + i)
        a = poisson_stream(rng, GEOM, (0, 300_000), 3.0)
        b = poisson_stream(rng, GEOM, (0, 300_000), 3.0)
        false_pos += align_streams(a, b).confident
    # the test is at level 0.01; one false alarm in 20 is already unlikely
    assert false_pos <= 1


def test_alignment_errors(rng):
    a = random_stream(rng, 100, GEOM, (0, 10_000))
    b = random_stream(rng, 100, GEOM, (20_000, 30_000))
    with pytest.raises(InsufficientOverlap):
        align_streams(a, b)
    with pytest.raises(InsufficientOverlap):
        align_streams(a, a, min_overlap=50)
    with pytest.raises(ConfigError):
        align_streams(a, a, bin_us=0)


def test_shift_time_keeps_window(rng):
    s = random_stream(rng, 1000, GEOM, (0, 50_000))
    out = shift_time(s, 10_000)
    assert out.window == s.window
    assert np.array_equal(out.t, s.t[s.t < 40_000] + 10_000)


def test_noise_rate_zero_identity(rng):
    s = random_stream(rng, 100, GEOM, (0, 50_000))
    assert inject_background_noise(s, 0.0, 1) == s
    with pytest.raises(ConfigError):
        inject_background_noise(s, -1.0)


def test_noise_count_and_uniformity():
    s = EventStream.empty(GEOM, (0, 1_000_000))
    lam = 20.0
    out = inject_background_noise(s, lam, seed=5)
    mean = lam * GEOM[0] * GEOM[1]
    assert abs(len(out) - mean) <= 3 * np.sqrt(mean)
    assert out == inject_background_noise(s, lam, seed=5)
    # spatial and temporal uniformity
    counts = np.bincount(out.pixel_index(), minlength=GEOM[0] * GEOM[1])
    assert stats.chisquare(counts).pvalue > 1e-3
    tb = np.bincount(out.t // 10_000, minlength=100)
    assert stats.chisquare(tb).pvalue > 1e-3
    assert abs(np.mean(out.p > 0) - 0.5) < 0.01
    assert estimate_noise_rate(out, (0, 0, 64, 48)) == pytest.approx(len(out) / (64 * 48))


def test_noise_keeps_original_events(rng):
    s = random_stream(rng, 500, GEOM, (0, 50_000))
    out = inject_background_noise(s, 5.0, 2)
    assert is_submultiset(s, out) and out.window == s.window


def test_mask_empty_and_full(rng):
    s = random_stream(rng, 1000, GEOM, (0, 20_000))
    assert mask_region(s, Mask()) == s
    full = Mask(rects=((0, 0, 64, 48),))
    assert len(mask_region(s, full)) == 0
    assert mask_region(s, full, "keep") == s


def test_mask_partition(rng):
    s = random_stream(rng, 2000, GEOM, (0, 20_000))
    m = Mask(rects=((5, 5, 20, 30),), discs=((40.0, 20.0, 6.0),))
    a = mask_region(s, m, "remove")
    b = mask_region(s, m, "keep")
    assert len(a) + len(b) == len(s) and merge([a, b]) == s
    inside = ((s.x >= 5) & (s.x < 20) & (s.y >= 5) & (s.y < 30)) | ((s.x - 40.0) ** 2 + (s.y - 20.0) ** 2 <= 36)
    assert len(b) == inside.sum()
    raster = np.zeros((48, 64), bool)
    raster[:10] = True
    assert len(mask_region(s, Mask(raster=raster), "keep")) == np.sum(s.y < 10)
    assert Mask.from_dict(m.to_dict()) == m


def test_bad_masks(rng):
    s = random_stream(rng, 10, GEOM, (0, 20_000))
    for m in (Mask(rects=((0, 0, 65, 10),)), Mask(discs=((70.0, 1.0, 2.0),)), Mask(raster=np.zeros((3, 3), bool))):
        with pytest.raises(BadMask):
            mask_region(s, m)
    with pytest.raises(BadMask):
        mask_region(s, Mask(), "invert")
    with pytest.raises(BadMask):
        estimate_noise_rate(s, (0, 0, 100, 10))


def test_translate_crop_pieces(rng):
    s = random_stream(rng, 2000, (100, 80), (0, 250_000))
    t = translate(s, 3, -2)
    keep = (s.x + 3 < 100) & (s.y - 2 >= 0)
    assert len(t) == keep.sum()
    c = center_crop(s, (64, 48))
    assert c.geometry == (64, 48)
    inside = (s.x >= 18) & (s.x < 82) & (s.y >= 16) & (s.y < 64)
    assert len(c) == inside.sum()
    with pytest.raises(ConfigError):
        center_crop(s, (200, 10))
    pieces = slice_pieces(s)
    assert [p.window for p in pieces] == [(0, 100_000), (100_000, 200_000)]
