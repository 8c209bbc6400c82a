import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dannte.data import (
    ShiftConfig, TimeSeries, WindowSet, build_equal_batches, build_source_batches, build_union,
    chunk_starts, fit_stats, generate_synthetic, load_series, split_blocks, standardize, window,
    write_series,
)
from dannte.errors import ContractError, DataError


def windows(n, domain=0, W=2, F=1, start=0):
    seqs = np.arange(n * W * F, dtype=float).reshape(n, W, F)
    return WindowSet(seqs, np.arange(n, dtype=float) + 100 * domain, np.full(n, domain),
                     np.arange(start, start + n))


# --------------------------------------------------------------------------
# generator


def test_generator_is_deterministic():
    a = generate_synthetic(ShiftConfig(seed=3))
    b = generate_synthetic(ShiftConfig(seed=3))
    for x, y in zip(a, b):
        assert x.features.tobytes() == y.features.tobytes()
        assert x.target.tobytes() == y.target.tobytes()
        assert np.array_equal(x.timestamps, y.timestamps)


def test_generator_seed_changes_output():
    a, _ = generate_synthetic(ShiftConfig(seed=1))
    b, _ = generate_synthetic(ShiftConfig(seed=2))
    assert not np.array_equal(a.features, b.features)


def test_generator_shapes_and_timestamps():
    src, tgt = generate_synthetic(ShiftConfig(n_points=300, n_features=8))
    assert src.features.shape == (300, 8) and tgt.features.shape == (300, 8)
    assert src.domain == "source" and tgt.domain == "target"
    assert tgt.timestamps[0] == src.timestamps[-1] + 1


def _block_se(x, blocks=20):
    # autocorrelated channels: standard error from block means
    means = np.array([b.mean() for b in np.array_split(x, blocks)])
    return means.std(ddof=1) / math.sqrt(blocks)


def test_no_shift_keeps_channel_means_within_three_standard_errors():
    for seed in range(3):
        src, tgt = generate_synthetic(ShiftConfig(delta=0.0, n_points=6000, seed=seed))
        for k in range(src.n_features):
            a, b = src.features[:, k], tgt.features[:, k]
            se = math.hypot(_block_se(a), _block_se(b))
            assert abs(a.mean() - b.mean()) < 3 * se, (seed, k)


@pytest.mark.parametrize("delta", [1.0, 2.5, 4.0])
def test_shift_moves_some_channel_by_half_delta(delta):
    for seed in range(5):
        src, tgt = generate_synthetic(ShiftConfig(delta=delta, seed=seed))
        gaps = np.abs(tgt.features.mean(axis=0) - src.features.mean(axis=0))
        assert gaps.max() >= delta / 2, (seed, gaps)


def test_target_function_is_shared_by_both_domains():
    cfg = ShiftConfig(y_noise=0.0)
    src, tgt = generate_synthetic(cfg)
    from dannte.data import target_function
    np.testing.assert_allclose(src.target, target_function(src.features, cfg), atol=1e-12)
    np.testing.assert_allclose(tgt.target, target_function(tgt.features, cfg), atol=1e-12)


@pytest.mark.parametrize("bad", [dict(n_points=1), dict(noise=-0.1), dict(ambient_phi=1.0),
                                 dict(n_features=2), dict(load_period=1)])
def test_degenerate_config_rejected(bad):
    with pytest.raises(ContractError):
        ShiftConfig(**bad)


def test_unshifted_domains_are_not_separable():
    # logistic probe on window means: held-out accuracy should sit near chance
    src, tgt = generate_synthetic(ShiftConfig(delta=0.0, n_points=3000, seed=4))
    S, T = window(src, 16, 4), window(tgt, 16, 4)
    stats = fit_stats(S)
    xs = stats.transform_features(S.sequences).mean(axis=1)
    xt = stats.transform_features(T.sequences).mean(axis=1)
    n = len(xs) // 2
    X_tr = np.c_[np.vstack([xs[:n], xt[:n]]), np.ones(2 * n)]
    y_tr = np.r_[np.zeros(n), np.ones(n)]
    w = np.zeros(X_tr.shape[1])
    for _ in range(2000):
        p = 1 / (1 + np.exp(-X_tr @ w))
        w -= 0.5 * X_tr.T @ (p - y_tr) / len(y_tr)
    X_te = np.c_[np.vstack([xs[n:], xt[n:]]), np.ones(len(xs) - n + len(xt) - n)]
    y_te = np.r_[np.zeros(len(xs) - n), np.ones(len(xt) - n)]
    acc = np.mean(((X_te @ w) > 0) == (y_te == 1))
    assert acc <= 0.55


# --------------------------------------------------------------------------
# files


def test_series_round_trip(tmp_path):
    src, _ = generate_synthetic(ShiftConfig(n_points=50))
    path = tmp_path / "s.csv"
    write_series(path, src)
    back = load_series(path)
    assert np.array_equal(back.features, src.features)
    assert np.array_equal(back.target, src.target)
    assert np.array_equal(back.timestamps, src.timestamps)


def test_three_row_file(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("timestamp,f0,f1,y\n0,1.0,2.0,3.0\n1,1.5,2.5,3.5\n2,0.0,0.0,1.0\n")
    ts = load_series(p)
    assert len(ts) == 3 and ts.n_features == 2


def test_decreasing_timestamp_cites_row(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("timestamp,f0,y\n5,1.0,3.0\n4,1.5,3.5\n6,0.0,1.0\n")
    with pytest.raises(DataError, match="row 2"):
        load_series(p)


def test_nan_cell_lists_row(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("timestamp,f0,y\n0,1.0,3.0\n1,1.5,3.5\n2,nan,1.0\n")
    with pytest.raises(DataError, match="3"):
        load_series(p)


def test_missing_column(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("timestamp,f0\n0,1.0\n")
    with pytest.raises(DataError, match="missing"):
        load_series(p)


def test_parse_failure(tmp_path):
    p = tmp_path / "a.csv"
    p.write_text("timestamp,f0,y\n0,abc,3.0\n")
    with pytest.raises(DataError, match="row 1"):
        load_series(p)


def test_error_kinds_are_distinct(tmp_path):
    messages = set()
    for body in ("timestamp,f0\n0,1\n", "timestamp,f0,y\n0,x,1\n",
                 "timestamp,f0,y\n1,1,1\n0,1,1\n", "timestamp,f0,y\n0,inf,1\n"):
        p = tmp_path / "e.csv"
        p.write_text(body)
        with pytest.raises(DataError) as exc:
            load_series(p)
        messages.add(str(exc.value).split(":", 1)[1].split()[0])
    assert len(messages) == 4


def test_missing_file(tmp_path):
    with pytest.raises(DataError):
        load_series(tmp_path / "nope.csv")


# --------------------------------------------------------------------------
# windows and scaling


def _series(T, F=2):
    return TimeSeries(np.arange(T), np.arange(T * F, dtype=float).reshape(T, F), np.arange(T) * 2.0)


def test_window_counts_and_ends():
    ws = window(_series(5), 3)
    assert len(ws) == 3 and list(ws.origin_index) == [2, 3, 4]
    np.testing.assert_array_equal(ws.sequences[0, :, 0], [0, 2, 4])
    assert ws[0].target == 4.0
    assert len(window(_series(4), 4)) == 1
    assert len(window(_series(12), 3, stride=3)) == 4


@settings(max_examples=60, deadline=None)
@given(T=st.integers(1, 60), W=st.integers(1, 10), stride=st.integers(1, 7))
def test_window_count_formula(T, W, stride):
    if T < W:
        with pytest.raises(DataError):
            window(_series(T), W, stride)
        return
    ws = window(_series(T), W, stride)
    assert len(ws) == (T - W) // stride + 1
    assert np.all(ws.sequences[:, -1, 0] == ws.origin_index * 2)


def test_fit_then_transform_is_standard():
    src, _ = generate_synthetic(ShiftConfig(n_points=400))
    S = window(src, 8)
    stats = fit_stats(S)
    Z = standardize(stats, S)
    flat = Z.sequences.reshape(-1, S.n_features)
    assert np.all(np.abs(flat.mean(axis=0)) <= 1e-10)
    assert np.all(np.abs(flat.std(axis=0) - 1) <= 1e-10)
    assert abs(Z._targets.mean()) <= 1e-10 and abs(Z._targets.std() - 1) <= 1e-10


def test_standardization_inverse_round_trips():
    src, _ = generate_synthetic(ShiftConfig(n_points=200))
    S = window(src, 4)
    stats = fit_stats(S)
    x = S.sequences
    assert np.max(np.abs(stats.inverse_features(stats.transform_features(x)) - x)) <= 1e-12
    y = S._targets
    assert np.max(np.abs(stats.inverse_y(stats.transform_y(y)) - y)) <= 1e-12


def test_shift_survives_scaling():
    src, tgt = generate_synthetic(ShiftConfig())
    stats = fit_stats(window(src, 4))
    Z = stats.transform_features(window(tgt, 4).sequences).reshape(-1, src.n_features)
    assert np.max(np.abs(Z.mean(axis=0))) > 1.0


def test_constant_channel_is_named():
    ts = TimeSeries(np.arange(6), np.c_[np.arange(6.0), np.ones(6)], np.arange(6.0))
    with pytest.raises(DataError, match="f1"):
        fit_stats(window(ts, 2))


def test_scaler_refuses_target_windows():
    with pytest.raises(ContractError):
        fit_stats(windows(4, domain=1))


def test_standardize_does_not_count_as_label_read():
    S = windows(6)
    stats = fit_stats(S)
    before = S.access.reads
    standardize(stats, S)
    assert S.access.reads == before


# --------------------------------------------------------------------------
# batches


def test_equal_batches_example():
    s, t = windows(4, 0), windows(4, 1)
    bs = build_equal_batches(s, t, 4)
    assert len(bs) == 2
    assert list(bs[0].origin_index) == [0, 1, 0, 1] and list(bs[1].origin_index) == [2, 3, 2, 3]


def test_shorter_domain_wraps():
    s, t = windows(4, 0), windows(2, 1)
    bs = build_equal_batches(s, t, 4)
    assert len(bs) == 2
    assert list(bs[0].origin_index) == [0, 1, 0, 1]
    assert list(bs[1].origin_index) == [2, 3, 0, 1]


def test_batch_rejects_odd_size_and_empty_domain():
    with pytest.raises(ContractError):
        build_equal_batches(windows(4), windows(4, 1), 3)
    with pytest.raises(ContractError):
        build_equal_batches(windows(4), WindowSet(np.zeros((0, 2, 1)), [], [], []), 4)


@settings(max_examples=150, deadline=None)
@given(n_s=st.integers(1, 60), n_t=st.integers(1, 60), half=st.integers(1, 8))
def test_batch_invariants(n_s, n_t, half):
    B = 2 * half
    s, t = windows(n_s, 0), windows(n_t, 1)
    if min(n_s, n_t) < half:
        with pytest.raises(ContractError):
            build_equal_batches(s, t, B)
        return
    bs = build_equal_batches(s, t, B)
    assert len(bs) == max(len(chunk_starts(n_s, half)), len(chunk_starts(n_t, half)))
    seen_s, seen_t = set(), set()
    for b in bs:
        assert len(b) == B
        assert np.sum(b.domain_labels == 0) == half and np.sum(b.domain_labels == 1) == half
        np.testing.assert_array_equal(b.source_mask, (b.domain_labels == 0).astype(float))
        for part in (b.origin_index[:half], b.origin_index[half:]):
            assert np.all(np.diff(part) > 0)
        seen_s.update(b.origin_index[:half])
        seen_t.update(b.origin_index[half:])
    # every window of both domains is visited at least once per epoch
    assert seen_s == set(range(n_s)) and seen_t == set(range(n_t))


@settings(max_examples=60, deadline=None)
@given(n=st.integers(4, 80), half=st.integers(1, 4))
def test_source_halves_concatenate_in_time_order(n, half):
    bs = build_equal_batches(windows(n, 0), windows(n, 1), 2 * half)
    idx = np.concatenate([b.origin_index[:half] for b in bs])
    # strictly increasing except where the ragged final run overlaps its predecessor
    drops = np.flatnonzero(np.diff(idx) <= 0)
    assert len(drops) <= 1
    if len(drops):
        assert drops[0] == len(idx) - half - 1 and idx[-1] == n - 1


def test_target_labels_never_read_for_unlabelled_batches():
    s, t = windows(8, 0), windows(8, 1)
    build_equal_batches(s, t, 4)
    assert t.access.reads == 0
    bs = build_equal_batches(s, t, 4, labelled_target=True)
    assert t.access.reads == 1
    assert np.all(bs[0].source_mask == 1)


def test_shuffled_batches_are_seeded_and_balanced():
    s, t = windows(20, 0), windows(20, 1)
    a = build_equal_batches(s, t, 8, rng=np.random.default_rng(5))
    b = build_equal_batches(s, t, 8, rng=np.random.default_rng(5))
    assert all(np.array_equal(x.origin_index, y.origin_index) for x, y in zip(a, b))
    assert all(np.sum(x.domain_labels) == 4 for x in a)
    assert not np.array_equal(a[0].origin_index[:4], np.arange(4))


def test_source_batches_match_equal_batch_source_halves():
    s, t = windows(11, 0), windows(9, 1)
    eq = build_equal_batches(s, t, 6)
    src = build_source_batches(s, 3)
    assert len(src) == len(chunk_starts(11, 3))
    for a, b in zip(src, eq):
        np.testing.assert_array_equal(a.origin_index, b.origin_index[:3])


def test_union_labels():
    u = build_union(windows(2, 0), windows(3, 1))
    assert len(u) == 5 and list(u.domain_labels) == [0, 0, 1, 1, 1]
    empty = WindowSet(np.zeros((0, 2, 1)), [], [], [])
    assert list(build_union(windows(3, 0), empty).domain_labels) == [0, 0, 0]


@settings(max_examples=50, deadline=None)
@given(n_s=st.integers(0, 20), n_t=st.integers(0, 20))
def test_union_label_counts(n_s, n_t):
    if n_s + n_t == 0:
        return
    mk = lambda n, d: windows(n, d) if n else WindowSet(np.zeros((0, 2, 1)), [], [], [])
    u = build_union(mk(n_s, 0), mk(n_t, 1))
    assert np.sum(u.domain_labels == 0) == n_s and np.sum(u.domain_labels == 1) == n_t


def test_split_blocks_partition():
    blocks = split_blocks(10, 2)
    assert [list(b) for b in blocks] == [list(range(5)), list(range(5, 10))]
    with pytest.raises(DataError):
        split_blocks(3, 5)
