import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cpia.channel_ops import channel_flush
from cpia.exceptions import ShapeError
from cpia.stroke import (StopCriterion, StrokeParams, StrokeState, channel_cost, combine_costs,
                         cost_field, movement_cost, neighborhood, penetrate, pick_pixel,
                         run_strokes, selection_weight, stroke_step)
from oracles import flush_sort_oracle, movement_cost_scalar, random_tensor

LINE = np.array([[[0.9, 1.0, 0.2]]], np.float32)


def test_movement_cost_values():
    K = movement_cost((2, 3), (5, 6), 1.0)
    assert K[2, 3] == 0.0
    assert K[3, 4] == pytest.approx(1 - math.exp(-1), abs=1e-9)
    assert K[3, 4] == pytest.approx(0.6321206, abs=1e-7)
    for h in range(5):
        for w in range(6):
            assert K[h, w] == pytest.approx(movement_cost_scalar(2, 3, h, w, 1.0), abs=1e-12)
    far = movement_cost((0, 0), (1, 40), 2.0)[0]
    assert (np.diff(far) >= 0).all() and far[-1] == pytest.approx(1.0)
    with pytest.raises(ValueError):
        movement_cost((0, 0), (2, 2), 0.0)


def test_channel_cost_examples():
    for mode in ("continuation", "literal"):
        assert not channel_cost(1, 3, 0.0, mode).any()
    assert channel_cost(1, 3, 0.5).tolist() == [0.5, 0, 0.5]
    assert channel_cost(1, 3, 0.5, "literal").tolist() == [0, 0.5, 0]
    with pytest.raises(ValueError):
        channel_cost(0, 3, 1.0)


def test_combine_costs_examples():
    K = movement_cost((1, 1), (3, 3), 1.0)
    G = combine_costs(np.zeros(2), K)
    assert np.array_equal(G, np.broadcast_to(K, (2, 3, 3)))
    J = channel_cost(0, 2, 0.5)
    for mode in ("continuation", "literal"):
        assert combine_costs(channel_cost(0, 2, 0.5, mode), K, mode)[0, 1, 1] == 0.0
    G = combine_costs(J, np.full((1, 1), 1 - math.exp(-1)))
    assert G[1, 0, 0] == pytest.approx(1 - 0.5 * math.exp(-1), abs=1e-12)
    assert G[1, 0, 0] == pytest.approx(0.8161, abs=1e-4)
    assert np.array_equal(combine_costs(J, K, "literal"), J[:, None, None] * K[None])


def test_selection_weight(rng):
    y = random_tensor(rng, 4, 4, 4)
    assert np.array_equal(selection_weight(y, np.zeros(y.shape)), y.astype(np.float64))
    g = rng.uniform(size=y.shape)
    w = selection_weight(y, g)
    for idx in np.ndindex(y.shape):
        assert w[idx] == (1.0 - g[idx]) * float(y[idx])
    g[0, 0, 0] = 1.0
    assert selection_weight(y, g)[0, 0, 0] == 0
    assert (selection_weight(y, np.zeros(y.shape), "magnitude") == np.abs(y)).all()
    with pytest.raises(ShapeError):
        selection_weight(y, np.zeros((4, 4, 3)))


def test_pick_pixel_examples():
    w = np.zeros((3, 2, 3))
    w[1, 0, 2] = 5
    assert pick_pixel(w, np.zeros(w.shape, bool), 1) == (1, 0, 2)
    full = np.zeros(w.shape, bool)
    full[0] = True
    assert pick_pixel(w, full, 1) is None
    w = np.zeros((3, 2, 2))
    w[0, 1, 1] = w[2, 0, 0] = 4
    assert pick_pixel(w, np.zeros(w.shape, bool), 1) == (0, 1, 1)
    region = np.array([[True, False], [False, False]])
    assert pick_pixel(w, np.zeros(w.shape, bool), 1, region) == (2, 0, 0)


def test_neighborhood_examples(rng):
    assert neighborhood(LINE, (0, 0, 1), 1, 0.8) == [(0, 0, 0), (0, 0, 1)]
    y = np.abs(random_tensor(rng, 2, 5, 5))  # the threshold only tightens for Y >= 0
    assert neighborhood(y, (1, 2, 2), 0, 0.3) == [(1, 2, 2)]
    for m1, m2 in [(0.1, 0.5), (0.5, 0.9), (0.9, 0.99)]:
        for px in [(0, 2, 2), (1, 0, 4)]:
            assert set(neighborhood(y, px, 2, m2)) <= set(neighborhood(y, px, 2, m1))


def test_penetrate_examples():
    y = np.array([0.1, 0.9, 0.5, 0.3], np.float32).reshape(4, 1, 1)
    fresh = np.zeros(y.shape, bool)
    assert penetrate(y, fresh, (0, 0), 1, 4, 1) == [1]
    assert sorted(penetrate(y, fresh, (0, 0), 3, 4, 1)) == [1, 2, 3]
    assert sorted(penetrate(y, fresh, (0, 0), 4, 4, 1)) == [0, 1, 2, 3]
    assert penetrate(y, fresh, (0, 0), 4, 2, 1) == [1, 2]  # truncated by the cap
    taken = fresh.copy()
    taken[2] = True
    assert penetrate(y, taken, (0, 0), 3, 4, 1) == [1, 3, 0]


def test_hand_simulation():
    params = StrokeParams(tau=1, m=0.8, z=1, p=1).resolved(LINE.shape)
    stop = StopCriterion(response_ratio=0.5)
    state = StrokeState.start(LINE, params)
    a = stroke_step(state, LINE, params, stop)
    assert a.pixel == (0, 0, 1)
    assert set(a.extended) == {(0, 0, 0), (0, 0, 1)}
    assert a.penetrated == (0,) and a.y_value == pytest.approx(1.0)
    assert stroke_step(state, LINE, params, stop) is None
    assert state.stop_reason == "response_ratio"


def test_max_strokes_zero():
    mask, log = run_strokes(LINE, StrokeParams(tau=1, p=1),
                            StopCriterion(None, max_strokes=0))
    assert len(log) == 0 and log.stop_reason == "max_strokes" and not mask.any()


def test_painted_fraction_stop(rng):
    y = random_tensor(rng, 3, 4, 4)
    mask, log = run_strokes(y, StrokeParams(tau=1, z=0, p=1), StopCriterion(None, None, 0.5))
    assert log.stop_reason == "painted_fraction"
    assert (mask.any(axis=0)).sum() == 8


def _degenerate(tau, compare="signed"):
    return StrokeParams(tau=tau, z=0, p=1, g_c=0.0, movement=False, compare=compare)


def test_flush_equivalence(rng):
    for trial in range(10):
        y = random_tensor(rng, 5, 4, 3, ties=trial % 2 == 1)
        for tau in (1, 2, 5):
            mask, log = run_strokes(y, _degenerate(tau), StopCriterion.exhaustion())
            assert log.stop_reason == "exhausted"
            assert np.array_equal(mask, channel_flush(y, tau))


def test_full_channel_run_is_all_ones(rng):
    y = random_tensor(rng, 4, 3, 3)
    mask, _ = run_strokes(y, StrokeParams(tau=4, z=0, p=4), StopCriterion.exhaustion())
    assert mask.all()


def test_constant_activation_picks_channel_zero():
    y = np.ones((3, 2, 4), np.float32)
    mask, log = run_strokes(y, StrokeParams(tau=1, z=0, p=1), StopCriterion.exhaustion())
    assert mask[0].all() and not mask[1:].any()
    assert len(log) == 8


def test_empty_region():
    with pytest.raises(ShapeError, match="empty region"):
        run_strokes(LINE, StrokeParams(tau=1, p=1), region=np.zeros((1, 3), bool))


def test_param_validation():
    for bad in (dict(m=1.0), dict(m=0.0), dict(z=-1), dict(p=0), dict(g_c=1.0), dict(sigma=0.0),
                dict(cost_mode="x"), dict(compare="x")):
        with pytest.raises(ValueError):
            StrokeParams(tau=1, **bad).validate()
    with pytest.raises(ValueError):
        StrokeParams(tau=4).validate(3)
    with pytest.raises(ValueError):
        StopCriterion(response_ratio=0.0).validate()
    assert StrokeParams(tau=1).resolved((2, 8, 12)).sigma == 3.0


def test_initial_mask_counts_toward_cap():
    y = np.ones((2, 1, 2), np.float32)
    init = np.zeros(y.shape, bool)
    init[1, 0, 0] = True
    mask, log = run_strokes(y, StrokeParams(tau=1, z=0, p=1), StopCriterion.exhaustion(),
                            initial_mask=init)
    assert mask.sum(axis=0).tolist() == [[1, 1]]
    assert [a.pixel for a in log.actions] == [(0, 0, 1)]


run_params = st.builds(
    StrokeParams,
    tau=st.integers(1, 4), m=st.floats(0.05, 0.99), z=st.integers(0, 2), p=st.integers(1, 4),
    g_c=st.floats(0.0, 0.95), sigma=st.one_of(st.none(), st.floats(0.3, 5.0)),
    movement=st.booleans(), cost_mode=st.sampled_from(["continuation", "literal"]),
    compare=st.sampled_from(["signed", "magnitude"]))
stops = st.builds(StopCriterion, response_ratio=st.one_of(st.none(), st.floats(0.01, 1.0)),
                  max_strokes=st.one_of(st.none(), st.integers(0, 30)),
                  painted_fraction=st.one_of(st.none(), st.floats(0.05, 1.0)))


@settings(max_examples=60, deadline=None)
@given(run_params, stops, st.integers(0, 2 ** 32 - 1), st.booleans())
def test_run_invariants(params, stop, seed, use_region):
    rng = np.random.default_rng(seed)
    y = random_tensor(rng, 4, 5, 4, ties=seed % 3 == 0)
    region = rng.uniform(size=(5, 4)) < 0.6 if use_region else None
    if region is not None and not region.any():
        region[0, 0] = True
    seen = np.zeros(y.shape, bool)
    picked = set()

    def check(state, action):
        assert (state.mask.sum(axis=0) <= params.tau).all()
        assert (state.counts == state.mask.sum(axis=0)).all()
        assert action.pixel not in picked
        picked.add(action.pixel)
        assert action.pixel in action.extended and action.pixel[0] in action.penetrated
        assert len(action.penetrated) <= params.p
        for px in action.extended:
            assert not seen[px]
            seen[px] = True
        assert np.array_equal(seen, state.mask)
        G = cost_field(state, y.shape, params.resolved(y.shape))
        assert G.min() >= 0.0 and G.max() <= 1.0
        if params.cost_mode == "continuation":
            assert G[action.pixel] == 0.0

    mask, log = run_strokes(y, params, stop, region=region, callback=check)
    if region is not None:
        assert not mask[:, ~region].any()
    mask2, log2 = run_strokes(y, params, stop, region=region)
    assert np.array_equal(mask, mask2) and log.to_ndjson() == log2.to_ndjson()
    if stop.max_strokes is not None:
        assert len(log) <= stop.max_strokes


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 4), st.sampled_from(["signed", "magnitude"]))
def test_flush_equivalence_property(seed, tau, compare):
    y = random_tensor(np.random.default_rng(seed), 4, 3, 3, ties=seed % 2 == 0)
    mask, _ = run_strokes(y, _degenerate(tau, compare), StopCriterion.exhaustion())
    assert np.array_equal(mask, flush_sort_oracle(y, tau, compare))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 32 - 1), st.floats(0.05, 0.9), st.floats(0.01, 0.09))
def test_first_action_sensitivity_monotone(seed, m1, dm):
    y = random_tensor(np.random.default_rng(seed), 3, 5, 5)
    p1 = StrokeParams(tau=3, m=m1, z=2, p=1)
    p2 = StrokeParams(tau=3, m=m1 + dm, z=2, p=1)
    _, l1 = run_strokes(y, p1, StopCriterion(None, max_strokes=1))
    _, l2 = run_strokes(y, p2, StopCriterion(None, max_strokes=1))
    assert set(l2.actions[0].extended) <= set(l1.actions[0].extended)
