import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shotfrugal.exceptions import BudgetError, DistributionError
from shotfrugal.sampling import (
    AllocationStrategy,
    allocate,
    allocate_batch,
    allocation_moments,
    wrs_probabilities,
)

STRATEGIES = list(AllocationStrategy)
weights_st = st.lists(st.floats(-5, 5, allow_nan=False).filter(lambda w: w == 0 or abs(w) > 1e-3),
                      min_size=1, max_size=8).filter(lambda w: any(abs(x) > 1e-3 for x in w))


class TestProbabilities:
    def test_normalizes(self):
        np.testing.assert_allclose(wrs_probabilities([3, 1]), [0.75, 0.25])

    def test_absolute_values(self):
        np.testing.assert_allclose(wrs_probabilities([-2, 2]), [0.5, 0.5])

    def test_vqse_weights(self):
        w = np.tile([-1.0, -1.2, -1.4, -1.6], 5) / 5
        p = wrs_probabilities(w).reshape(5, 4)
        np.testing.assert_allclose(p / p.sum(axis=1, keepdims=True), np.tile([1.0, 1.2, 1.4, 1.6], (5, 1)) / 5.2)

    def test_all_zero(self):
        with pytest.raises(DistributionError):
            wrs_probabilities([0, 0])


class TestAllocate:
    def test_uds_even(self):
        np.testing.assert_array_equal(allocate(10, [1, 7], "UDS").shots, [5, 5])

    def test_uds_remainder_round_robin(self):
        np.testing.assert_array_equal(allocate(11, [1, 1, 1], "UDS").shots, [4, 4, 3])

    def test_wds_exact(self):
        np.testing.assert_array_equal(allocate(52, [1.0, 1.2, 1.4, 1.6], "WDS").shots, [10, 12, 14, 16])

    def test_wds_tie_break_lowest_index(self):
        np.testing.assert_array_equal(allocate(1, [1, 1], "WDS").shots, [1, 0])

    def test_wrs_mean(self, rng):
        shots, expected = allocate_batch(np.full(10**5, 100), [0.75, 0.25], "WRS", 1, rng)
        assert np.all(shots.sum(axis=1) == 100)
        np.testing.assert_allclose(expected[0], [75, 25])
        se = shots.std(axis=0) / np.sqrt(shots.shape[0])
        assert np.all(np.abs(shots.mean(axis=0) - [75, 25]) < 4 * se)

    def test_wrs_single_shot_frequencies(self, rng):
        w = np.array([0.1, 0.2, 0.3, 0.4])
        shots, _ = allocate_batch(np.ones(10**5, dtype=int), w, "WRS", 1, rng)
        freq = shots.mean(axis=0)
        se = np.sqrt(w * (1 - w) / shots.shape[0])
        assert np.all(np.abs(freq - w) < 4 * se)

    def test_whs_deterministic_floor(self, rng):
        table = allocate(10, [0.55, 0.45], "WHS", 1, rng)
        assert table.shots[0] >= 5 and table.shots[1] >= 4

    def test_zero_weight_excluded(self, rng):
        for s in STRATEGIES:
            assert allocate(13, [1, 0, 2], s, 1, rng).shots[1] == 0

    def test_strategy_parse(self):
        assert AllocationStrategy.parse("wrs") is AllocationStrategy.WRS
        with pytest.raises(ValueError):
            AllocationStrategy.parse("XYZ")

    def test_bad_budget(self, rng):
        with pytest.raises(BudgetError):
            allocate(-1, [1], "WRS", 1, rng)
        with pytest.raises(BudgetError):
            allocate(4, [1], "WRS", 0, rng)

    def test_remainder_shots(self, rng):
        t = allocate(7, [1, 1], "WRS", 3, rng)
        assert t.shots.sum() == 7
        assert sorted(t.shots % 3) == [0, 1]

    def test_determinism(self):
        a = allocate(1000, [1, 2, 3], "WHS", 2, np.random.default_rng(5)).shots
        b = allocate(1000, [1, 2, 3], "WHS", 2, np.random.default_rng(5)).shots
        np.testing.assert_array_equal(a, b)


@settings(max_examples=200, deadline=None)
@given(s_tot=st.integers(0, 5000), w=weights_st, s0=st.integers(1, 6),
       strategy=st.sampled_from(STRATEGIES), seed=st.integers(0, 2**31))
def test_conservation_and_blocks(s_tot, w, s0, strategy, seed):
    table = allocate(s_tot, w, strategy, s0, np.random.default_rng(seed))
    assert table.shots.sum() == s_tot
    assert np.all(table.shots >= 0)
    active = np.abs(w) > 0
    assert np.all(table.shots[~active] == 0)
    if s_tot % s0 == 0:
        assert np.all(table.shots % s0 == 0)
    assert table.expected.sum() == pytest.approx(s_tot)


@pytest.mark.parametrize("strategy", STRATEGIES)
def test_moments_match_empirical(strategy):
    rng = np.random.default_rng(9)
    w = [0.5, 0.3, 0.15, 0.05]
    mean, cov = allocation_moments(37, w, strategy, 2)
    shots, _ = allocate_batch(np.full(2 * 10**5, 37), w, strategy, 2, rng)
    np.testing.assert_allclose(shots.mean(axis=0), mean, atol=0.05)
    np.testing.assert_allclose(np.cov(shots.T), cov, atol=0.15)
