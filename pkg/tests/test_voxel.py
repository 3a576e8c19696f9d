import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from evflare.errors import BadBinCount, CorruptHeader
from evflare.events import EventStream, canonicalize
from evflare.voxel import (
    VoxelGrid,
    bin_edges,
    bin_index,
    decode,
    encode,
    encode_polarity,
    from_vox1_bytes,
    read_voxels,
    round_half_away,
    to_vox1_bytes,
    write_voxels,
)

from oracles import bin_interval, brute_encode, brute_encode_polarity, random_stream


@st.composite
def streams(draw, max_n=80):
    W = draw(st.integers(1, 9))
    H = draw(st.integers(1, 7))
    t0 = draw(st.integers(0, 10_000))
    T = draw(st.integers(8, 5000))
    n = draw(st.integers(0, max_n))
    seed = draw(st.integers(0, 2**32))
    return random_stream(np.random.default_rng(seed), n, (W, H), (t0, t0 + T))


def test_empty_encodes_to_zero():
    g = encode(EventStream.empty((6, 4), (0, 800)))
    assert g.values.shape == (8, 4, 6) and not g.values.any()


def test_single_event_cell():
    T = 20_000
    s = canonicalize([(3 * T // 8 + 5, 10, 5, -1)], (16, 8), (0, T))
    g = encode(s)
    assert g.values[3, 5, 10] == -1
    assert np.count_nonzero(g.values) == 1


def test_encode_matches_oracle_large(rng):
    s = random_stream(rng, 100_000, (64, 48), (1234, 21_234))
    assert np.array_equal(encode(s).values, brute_encode(s, 8))


@given(streams(), st.integers(1, 8))
def test_encode_property(s, B):
    assert np.array_equal(encode(s, B).values, brute_encode(s, B))
    pg = encode_polarity(s, B)
    assert np.array_equal(pg.values, brute_encode_polarity(s, B))
    assert np.array_equal(pg.values[0] - pg.values[1], encode(s, B).values)
    assert pg.values[0].sum() == np.sum(s.p > 0) and pg.values[1].sum() == np.sum(s.p < 0)


def test_polarity_cancellation():
    s = canonicalize([(10, 1, 1, 1), (11, 1, 1, -1)], (4, 4), (0, 800))
    pg = encode_polarity(s)
    assert pg.values[:, 0, 1, 1].tolist() == [1, 1]
    assert encode(s).values[0, 1, 1] == 0
    assert pg.signed() == encode(s)


def test_rounding_rule():
    assert round_half_away(np.array([2.4, -0.6, 0.5, -0.5, 1.5, -2.5, 0.49])).tolist() == [2, -1, 1, -1, 2, -3, 0]
    v = np.zeros((8, 2, 2), np.float32)
    v[2, 0, 1] = 2.4
    v[5, 1, 0] = -0.6
    s = decode(VoxelGrid(v, 0, 8000), seed=3)
    assert len(s) == 3
    assert np.sum((s.p > 0) & (s.x == 1) & (s.y == 0)) == 2
    assert np.sum((s.p < 0) & (s.x == 0) & (s.y == 1)) == 1
    assert np.all(bin_index(s, 8)[s.p > 0] == 2) and np.all(bin_index(s, 8)[s.p < 0] == 5)


def test_zero_grid_decodes_empty():
    assert len(decode(VoxelGrid(np.zeros((8, 3, 3), np.float32), 0, 100))) == 0


@given(streams(), st.integers(1, 8), st.integers(0, 2**32))
def test_codec_fixed_point(s, B, seed):
    g = encode(s, B)
    d = decode(g, seed)
    assert encode(d, B) == g
    assert encode(decode(encode(d, B), seed + 1), B) == g


@given(st.integers(0, 10**6), st.integers(1, 64), st.integers(0, 5000))
def test_bin_edges_match_floor_rule(t0, B, extra):
    T = B + extra
    e = bin_edges(t0, t0 + T, B)
    for b in (0, B // 2, B - 1):
        assert (e[b], e[b + 1]) == bin_interval(t0, t0 + T, B, b)


def test_decoded_times_inside_bins(rng):
    v = rng.integers(-3, 4, (8, 5, 7)).astype(np.float32)
    g = VoxelGrid(v, 100, 1100)
    s = decode(g, seed=1)
    b = bin_index(s, 8)
    e = bin_edges(100, 1100, 8)
    assert np.all((s.t >= e[b]) & (s.t < e[b + 1]))
    assert decode(g, seed=1) == s
    assert decode(g, seed=2) != s


def test_bad_bins():
    s = EventStream.empty((2, 2), (0, 100))
    for B in (0, -1, 2.5, True):
        with pytest.raises(BadBinCount):
            encode(s, B)
    with pytest.raises(BadBinCount):
        decode(VoxelGrid(np.ones((8, 1, 1), np.float32), 0, 7))


def test_vox1_roundtrip(tmp_path, rng):
    g = encode(random_stream(rng, 500, (9, 5), (10, 2010)))
    write_voxels(g, tmp_path / "g.vox1")
    back = read_voxels(tmp_path / "g.vox1")
    assert back == g and back.window == (10, 2010) and back.geometry == (9, 5)
    data = to_vox1_bytes(g)
    assert data[:4] == b"VOX1"
    # payload is f32 in (b, y, x) order
    assert np.array_equal(np.frombuffer(data[-g.values.size * 4 :], "<f4").reshape(g.values.shape), g.values)
    with pytest.raises(CorruptHeader):
        from_vox1_bytes(b"VOXX" + data[4:])
