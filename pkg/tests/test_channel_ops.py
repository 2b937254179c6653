import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from cpia.channel_ops import CoverageStats, apply_mask, channel_flush, coverage
from cpia.exceptions import ShapeError
from oracles import flush_sort_oracle, random_tensor

EXAMPLE = np.array([[[5, 1]], [[3, 4]]], np.float32)

tensors = st.tuples(st.integers(1, 6), st.integers(1, 4), st.integers(1, 4)).flatmap(
    lambda s: arrays(np.float32, s, elements=st.integers(-4, 4).map(float)))


def test_flush_example():
    m = channel_flush(EXAMPLE, 1)
    assert m.astype(int).tolist() == [[[1, 0]], [[0, 1]]]


def test_flush_full_channel_and_tie():
    assert channel_flush(EXAMPLE, 2).all()
    y = np.full((2, 1, 1), 7.0, np.float32)
    assert channel_flush(y, 1)[:, 0, 0].tolist() == [True, False]


def test_flush_magnitude():
    y = np.array([[[-5.0]], [[3.0]]], np.float32)
    assert channel_flush(y, 1, "magnitude")[:, 0, 0].tolist() == [True, False]
    assert channel_flush(y, 1, "signed")[:, 0, 0].tolist() == [False, True]


@pytest.mark.parametrize("tau", [0, 3, 1.5])
def test_flush_tau_out_of_range(tau):
    with pytest.raises(ValueError, match="tau"):
        channel_flush(EXAMPLE, tau)


def test_flush_matches_sort_oracle(rng):
    for trial in range(20):
        y = random_tensor(rng, 6, 3, 4, ties=trial % 2 == 0)
        for tau in (1, 3, 6):
            for compare in ("signed", "magnitude"):
                assert np.array_equal(channel_flush(y, tau, compare),
                                      flush_sort_oracle(y, tau, compare))


def test_apply_mask_examples(rng):
    y = random_tensor(rng, 3, 2, 2)
    assert np.array_equal(apply_mask(y, np.ones(y.shape, bool)), y)
    assert not apply_mask(y, np.zeros(y.shape, bool)).any()
    assert apply_mask(EXAMPLE, channel_flush(EXAMPLE, 1)).tolist() == [[[5, 0]], [[0, 4]]]
    with pytest.raises(ShapeError):
        apply_mask(y, np.ones((3, 2, 3), bool))


def test_coverage_examples(rng):
    cov = coverage(np.ones((4, 2, 3), bool))
    assert cov.per_channel.tolist() == [1, 1, 1, 1]
    assert cov.counts[-1] == 4 and cov.counts.sum() == 4
    assert coverage(np.zeros((4, 2, 3), bool)).per_channel.tolist() == [0, 0, 0, 0]
    m = channel_flush(random_tensor(rng, 8, 4, 4), 1)
    assert coverage(m).per_channel.sum() == pytest.approx(1.0)


def test_coverage_bucket_edges():
    m = np.zeros((3, 1, 10), bool)
    m[1, 0, :1] = True   # exactly 0.1 lands in the second bucket
    m[2, 0, :] = True
    cov = coverage(m, bins=10)
    assert cov.counts.tolist() == [1, 1, 0, 0, 0, 0, 0, 0, 0, 1]
    assert coverage(m, bins=1).counts.tolist() == [3]
    with pytest.raises(ValueError):
        coverage(m, bins=0)


def test_coverage_csv_roundtrip(tmp_path, rng):
    cov = coverage(channel_flush(random_tensor(rng, 5, 3, 3), 2), bins=4)
    cov.write_csv(tmp_path / "c.csv", tmp_path / "h.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[0] == "channel,coverage"
    assert (tmp_path / "h.csv").read_text().splitlines()[0] == "bin_lo,bin_hi,count"
    back = CoverageStats.read_csv(tmp_path / "c.csv", tmp_path / "h.csv")
    assert np.array_equal(back.per_channel, cov.per_channel)
    assert np.array_equal(back.bin_edges, cov.bin_edges)
    assert np.array_equal(back.counts, cov.counts)


@settings(max_examples=80, deadline=None)
@given(tensors, st.data())
def test_flush_cardinality_and_tau_monotone(y, data):
    C = y.shape[0]
    tau = data.draw(st.integers(1, C))
    m = channel_flush(y, tau)
    assert (m.sum(axis=0) == tau).all()
    if tau < C:
        assert not (m & ~channel_flush(y, tau + 1)).any()


@settings(max_examples=80, deadline=None)
@given(tensors, st.data())
def test_flush_scale_and_shift_invariance(y, data):
    C, H, W = y.shape
    tau = data.draw(st.integers(1, C))
    compare = data.draw(st.sampled_from(["signed", "magnitude"]))
    m = channel_flush(y, tau, compare)
    scale = data.draw(st.sampled_from([0.25, 2.0, 8.0]))  # exact in float32
    assert np.array_equal(channel_flush(y * np.float32(scale), tau, compare), m)
    shift = np.array(data.draw(st.lists(st.integers(-5, 5), min_size=H * W, max_size=H * W)),
                     np.float32).reshape(1, H, W)
    assert np.array_equal(channel_flush(y + shift, tau, "signed"), channel_flush(y, tau))


@settings(max_examples=60, deadline=None)
@given(tensors, st.data())
def test_coverage_identity(y, data):
    C = y.shape[0]
    tau = data.draw(st.integers(1, C))
    cov = coverage(channel_flush(y, tau), bins=data.draw(st.integers(1, 12)))
    assert cov.per_channel.mean() * C == pytest.approx(tau)
    assert cov.counts.sum() == C
