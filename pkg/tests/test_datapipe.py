import struct

import numpy as np
import pytest
from hypothesis import assume, given, strategies as st

import oracles
from pressim.datapipe import (AlignedDataset, SequenceKind, Window, align_streams,
                              decode_sequence, denormalize, encode_sequence, make_windows,
                              nearest_indices, normalize, read_sequence, split, write_sequence)
from pressim.errors import (BadRatios, EmptyStream, FormatError, IoFailure, NoOverlap,
                            ShapeMismatch, TooShort)


class Stream:
    def __init__(self, timestamps, frames):
        self.timestamps = np.asarray(timestamps, dtype=float)
        self.frames = np.asarray(frames)


def streams(n_pose, ratio=3, step=1 / 30, jitter=None, rng=None):
    ts = np.arange(n_pose) * step
    poses = Stream(ts, np.arange(n_pose)[:, None, None] * np.ones((1, 17, 3)))
    deforms = Stream(ts, (np.arange(n_pose) % 256)[:, None, None] * np.ones((1, 80, 28),
                                                                           dtype=np.uint8))
    pts = ts[::ratio].copy()
    if jitter:
        pts += rng.uniform(-jitter, jitter, len(pts))
        pts = np.maximum.accumulate(pts)
    pressure = Stream(pts, np.arange(len(pts))[:, None, None] * np.ones((1, 80, 28)))
    return poses, deforms, pressure


def aligned(n, joints=17, offset=0):
    ts = np.arange(n) * 0.1
    idx = np.arange(n)
    return AlignedDataset(None, ts, idx, idx, idx,
                          np.zeros((n, joints, 3)) + idx[:, None, None] + offset,
                          np.zeros((n, 80, 28), dtype=np.uint8),
                          np.zeros((n, 80, 28)) + idx[:, None, None] + offset)


# -- sequence files ----------------------------------------------------------

def _frames(kind, rng, n):
    if kind is SequenceKind.DEFORM:
        f = rng.integers(0, 256, (n, *kind.frame_shape)).astype(np.uint8)
        f.reshape(n, -1)[0, :2] = (0, 255)
        return f
    hi = 5000.0 if kind is SequenceKind.PRESSURE else 2.0
    f = rng.uniform(0, hi, (n, *kind.frame_shape)).astype(np.float32)
    f.reshape(n, -1)[0, :2] = (0.0, hi)
    return f


@pytest.mark.parametrize("kind", list(SequenceKind))
def test_sequence_round_trip_with_boundary_values(rng, tmp_path, kind):
    frames = _frames(kind, rng, 6)
    ts = np.cumsum(rng.uniform(0.01, 0.1, 6))
    path = tmp_path / "s.psim"
    write_sequence(path, kind, ts, frames)
    back = read_sequence(path)
    assert back.kind is kind
    assert back.timestamps.tobytes() == ts.tobytes()
    assert back.frames.dtype == frames.dtype
    assert back.frames.tobytes() == frames.tobytes()
    data = path.read_bytes()
    assert data[:4] == b"PSIM"
    assert struct.unpack_from("<HBBI", data, 4) == (1, int(kind), 0, 6)
    assert len(data) == 12 + 8 * 6 + frames.nbytes


def test_deformation_boundary_bytes():
    frames = np.zeros((1, 80, 28), dtype=np.uint8)
    frames[0, 0, :2] = (0, 255)
    data = encode_sequence(SequenceKind.DEFORM, [0.0], frames)
    assert data[20:22] == b"\x00\xff"
    assert decode_sequence(data).frames[0, 0, 1] == 255


def test_pressure_boundary_value_exact():
    frames = np.zeros((1, 80, 28), dtype=np.float32)
    frames[0, 79, 27] = 5000.0
    back = decode_sequence(encode_sequence(SequenceKind.PRESSURE, [1.5], frames))
    assert back.frames[0, 79, 27] == 5000.0 and back.frames[0].sum() == 5000.0


@given(st.sampled_from(list(SequenceKind)), st.integers(0, 8), st.integers(0, 2**32 - 1))
def test_sequence_round_trip_property(kind, n, seed):
    rng = np.random.default_rng(seed)
    frames = _frames(kind, rng, n) if n else np.zeros((0, *kind.frame_shape), kind.dtype)
    ts = np.cumsum(rng.uniform(0.001, 1.0, n))
    back = decode_sequence(encode_sequence(kind, ts, frames))
    assert back.timestamps.tobytes() == ts.tobytes()
    assert back.frames.tobytes() == frames.astype(kind.dtype).tobytes()


def test_sequence_format_errors(rng):
    frames = _frames(SequenceKind.PRESSURE, rng, 3)
    good = encode_sequence(SequenceKind.PRESSURE, [0, 1, 2], frames)
    bad = [b"XSIM" + good[4:], good[:4] + b"\x02\x00" + good[6:], good[:6] + b"\x09" + good[7:],
           good[:7] + b"\x01" + good[8:], good[:-1], good + b"\0", good[:10]]
    for data in bad:
        with pytest.raises(FormatError):
            decode_sequence(data)
    swapped = bytearray(good)
    swapped[12:20], swapped[20:28] = good[20:28], good[12:20]  # timestamps 1, 0, 2
    with pytest.raises(FormatError, match="index 1"):
        decode_sequence(bytes(swapped))


def test_encode_rejects_bad_input(rng):
    with pytest.raises(ShapeMismatch):
        encode_sequence(SequenceKind.POSE17, [0, 1], np.zeros((2, 25, 3)))
    with pytest.raises(FormatError):
        encode_sequence(SequenceKind.POSE17, [1, 0], np.zeros((2, 17, 3)))
    with pytest.raises(ValueError):
        encode_sequence(SequenceKind.DEFORM, [0], np.full((1, 80, 28), 256.0))


def test_missing_file(tmp_path):
    with pytest.raises(IoFailure):
        read_sequence(tmp_path / "nope.psim")


# -- alignment ---------------------------------------------------------------

@given(st.lists(st.integers(0, 1000), min_size=1, max_size=30, unique=True),
       st.lists(st.integers(-100, 2200), min_size=1, max_size=30))
def test_nearest_matches_linear_scan(source, queries):
    # Integer sources and half-integer queries keep every distance exact, so ties are real.
    source = sorted(float(s) for s in source)
    queries = [q / 2 for q in queries]
    got = nearest_indices(source, queries)
    assert got.tolist() == [oracles.nearest(source, q) for q in queries]


def test_nearest_tie_goes_to_earlier():
    assert nearest_indices([0.0, 1.0], [0.5]).tolist() == [0]


def test_three_to_one_alignment():
    poses, deforms, pressure = streams(300)
    ds = align_streams(poses, deforms, pressure)
    assert len(ds) == 100
    assert ds.pose_index.tolist() == list(range(0, 300, 3))
    assert ds.deform_index.tolist() == list(range(0, 300, 3))
    np.testing.assert_array_equal(ds.poses[:, 0, 0], np.arange(0, 300, 3))


@given(st.integers(30, 400), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_alignment_law_with_jitter(n, ratio, seed):
    rng = np.random.default_rng(seed)
    # Jitter below half a pose period never changes the nearest neighbour.
    poses, deforms, pressure = streams(n, ratio, jitter=0.4 / 30, rng=rng)
    assume(np.all(np.diff(pressure.timestamps) > 0))
    ds = align_streams(poses, deforms, pressure)
    expected = np.arange(0, n, ratio)
    assert ds.pose_index.tolist() == expected.tolist()
    assert ds.deform_index.tolist() == expected.tolist()


def test_alignment_drops_out_of_tolerance_frames():
    poses, deforms, pressure = streams(30)
    late = Stream(np.append(pressure.timestamps, 5.0),
                  np.concatenate([pressure.frames, pressure.frames[:1]]))
    ds = align_streams(poses, deforms, late)
    assert len(ds) == 10 and ds.pressure_index.tolist() == list(range(10))
    with pytest.raises(NoOverlap):
        align_streams(poses, deforms, Stream([50.0], pressure.frames[:1]))
    with pytest.raises(EmptyStream):
        align_streams(Stream([], np.zeros((0, 17, 3))), deforms, pressure)


# -- windows -----------------------------------------------------------------

@given(st.integers(10, 200))
def test_window_count_law(n):
    assert len(make_windows(aligned(n))) == n - 10


@given(st.lists(st.integers(10, 60), min_size=1, max_size=4), st.integers(1, 12))
def test_windows_never_straddle_datasets(sizes, width):
    assume(min(sizes) >= width)
    parts = [aligned(n, offset=1000 * g) for g, n in enumerate(sizes)]
    wd = make_windows(parts, width=width)
    assert len(wd) == sum(n - width for n in sizes)
    for i in range(len(wd)):
        w = wd[i]
        owner = int(w.pose_input[0, 0, 0]) // 1000
        assert owner == wd.groups[i]
        assert np.all(w.pose_input[:, 0, 0] // 1000 == owner)
        np.testing.assert_array_equal(np.diff(w.pose_input[:, 0, 0]), 1)
        assert w.target[0, 0] == w.pose_input[-1, 0, 0]


def test_window_arrays_are_normalised():
    wd = make_windows(aligned(30))
    assert wd.pose_windows().shape == (20, 10, 17, 3)
    assert wd.deform_windows([0, 5]).shape == (2, 10, 80, 28)
    np.testing.assert_allclose(wd.targets()[:, 0, 0], (np.arange(20) + 9) / 5000, rtol=1e-6)
    np.testing.assert_array_equal(wd.target_pressure()[:, 0, 0], np.arange(20) + 9)


def test_too_short_and_mixed_skeletons():
    with pytest.raises(TooShort):
        make_windows(aligned(9))
    with pytest.raises(ShapeMismatch):
        make_windows([aligned(20), aligned(20, joints=25)])


def test_normalize_round_trip(rng):
    w = Window(rng.uniform(0, 1.7, (10, 17, 3)), rng.integers(0, 256, (10, 80, 28)),
               rng.uniform(0, 5000, (80, 28)))
    n = normalize(w)
    assert n.deform_input.max() <= 1 and n.target.max() <= 1
    back = denormalize(n)
    np.testing.assert_allclose(back.pose_input, w.pose_input, rtol=1e-12)
    np.testing.assert_allclose(back.deform_input, w.deform_input, rtol=1e-12)
    np.testing.assert_allclose(back.target, w.target, rtol=1e-12)


# -- splits ------------------------------------------------------------------

def test_ninety_windows_unguarded_split():
    s = split(90, seed=0, guard=False)
    assert (len(s.train), len(s.val), len(s.test)) == (72, 9, 9)
    assert len(s.guard) == 0


@given(st.integers(3, 500), st.integers(0, 2**31), st.booleans())
def test_split_partitions(n, seed, guard):
    s = split(n, seed=seed, guard=guard)
    parts = [s.train, s.val, s.test, s.guard]
    allidx = np.concatenate(parts)
    assert sorted(allidx.tolist()) == list(range(n))
    assert sum(map(len, parts)) == n
    if not guard:
        assert len(s.guard) == 0


@given(st.lists(st.integers(12, 80), min_size=1, max_size=4), st.integers(0, 2**31))
def test_guarded_split_keeps_train_away_from_held_out(sizes, seed):
    wd = make_windows([aligned(n) for n in sizes])
    s = split(wd, seed=seed)
    held = np.concatenate([s.val, s.test])
    for t in s.train:
        same = held[wd.groups[held] == wd.groups[t]]
        assert np.all(np.abs(same - t) >= wd.width)
    # Validation and test each form one contiguous (circular) block per group.
    for part in (s.val, s.test):
        for g in np.unique(wd.groups[part]):
            members = np.flatnonzero(wd.groups == g)
            local = np.sort(np.searchsorted(members, part[wd.groups[part] == g]))
            gaps = np.diff(local)
            assert np.sum(gaps != 1) <= 1


def test_split_is_seeded():
    assert split(200, seed=4).val.tolist() == split(200, seed=4).val.tolist()
    assert split(200, seed=4).val.tolist() != split(200, seed=5).val.tolist()


@pytest.mark.parametrize("ratios", [(0.5, 0.5), (0.8, 0.1, 0.2), (1.0, 0.0, 0.0),
                                    (0.9, -0.1, 0.2)])
def test_bad_ratios(ratios):
    with pytest.raises(BadRatios):
        split(100, ratios)
