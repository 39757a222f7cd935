"""Tests for counterfactual demand bounds."""

import math

import numpy as np
import pytest

from quasilinear_welfare.analysis.counterfactual import (
    ExpenditureConstraint,
    cco_margin,
    expenditure_bounds,
    halfspace_system,
    in_cco,
    member,
    quantity_bounds,
    quantity_upper,
    sweep_quantity_bounds,
    upper_bound_finite,
)
from quasilinear_welfare.analysis.rationality import epsilon_star_lp
from quasilinear_welfare.common.sequences import OracleCapError
from quasilinear_welfare.domain.model import (
    BoundStatus,
    CandidatePoint,
    Dataset,
    DatasetValidationError,
    augment,
)


class TestMember:
    """Tests for counterfactual set membership."""

    def test_consistent_candidate(self, consistent_pair):
        assert member(consistent_pair, 0.0, CandidatePoint(quantity=[1.5], price=[1.5]))

    def test_candidate_raising_epsilon(self, consistent_pair):
        # the 2-cycle with the first observation has mean 0.25
        assert not member(consistent_pair, 0.0, CandidatePoint(quantity=[3.0], price=[1.5]))
        assert member(consistent_pair, 0.25, CandidatePoint(quantity=[3.0], price=[1.5]))

    def test_existing_observation_keeps_epsilon(self, crossing_pair):
        eps = epsilon_star_lp(crossing_pair).value
        candidate = crossing_pair.observation(1)
        assert member(crossing_pair, eps, candidate)
        assert epsilon_star_lp(augment(crossing_pair, candidate)).value == pytest.approx(eps, abs=1e-7)


class TestQuantityBounds:
    """Tests for sharp bounds on one good."""

    def test_single_observation_higher_price(self, single_obs):
        interval = quantity_bounds(single_obs, 0.0, [2.0], 0)
        assert interval.lower == pytest.approx(0.0)
        assert interval.upper == pytest.approx(2.0)

    def test_between_two_observations(self, consistent_pair):
        interval = quantity_bounds(consistent_pair, 0.0, [1.5], 0)
        assert interval.lower == pytest.approx(1.0)
        assert interval.upper == pytest.approx(2.0)

    def test_upper_infinite_at_observed_minimum(self, single_obs):
        interval = quantity_bounds(single_obs, 0.0, [1.0], 0)
        assert interval.is_feasible
        assert interval.lower == pytest.approx(0.0)
        assert interval.upper == math.inf

    def test_positive_eps_widens(self, single_obs):
        # (p~ - 1)(x~ - 2) <= 2 eps at p~ = 2
        interval = quantity_bounds(single_obs, 0.25, [2.0], 0)
        assert interval.upper == pytest.approx(2.5)

    def test_eps_below_epsilon_star_is_infeasible(self, crossing_pair):
        interval = quantity_bounds(crossing_pair, 0.0, [1.5], 0)
        assert interval.status is BoundStatus.INFEASIBLE

    def test_eps_just_below_epsilon_star_is_solved(self, crossing_pair):
        interval = quantity_bounds(crossing_pair, 0.5 - 5e-8, [1.5], 0)
        assert interval.is_feasible

    def test_adaptive_matches_epsilon_star(self, crossing_pair):
        adaptive = quantity_bounds(crossing_pair, None, [1.5], 0)
        explicit = quantity_bounds(crossing_pair, 0.5, [1.5], 0)
        assert adaptive.lower == pytest.approx(explicit.lower)
        assert adaptive.upper == pytest.approx(explicit.upper)

    def test_exact_data_grid_shape(self, consistent_pair):
        below = quantity_bounds(consistent_pair, 0.0, [0.8], 0)
        above = quantity_bounds(consistent_pair, 0.0, [2.5], 0)
        assert below.upper == math.inf
        assert above.lower == pytest.approx(0.0)
        assert above.upper == pytest.approx(1.0)

    def test_two_goods(self, two_goods):
        interval = quantity_bounds(two_goods, None, [3.0, 3.0], 1)
        assert interval.is_finite

    def test_bad_good_index(self, single_obs):
        with pytest.raises(IndexError):
            quantity_bounds(single_obs, 0.0, [2.0], 1)

    def test_nonpositive_price(self, single_obs):
        with pytest.raises(DatasetValidationError):
            quantity_bounds(single_obs, 0.0, [0.0], 0)

    def test_eps_star_is_not_recomputed_when_given(self, single_obs, mocker):
        spy = mocker.patch("quasilinear_welfare.analysis.counterfactual.epsilon_star_lp")
        quantity_bounds(single_obs, 0.0, [2.0], 0, eps_star=0.0)
        spy.assert_not_called()


class TestExpenditure:
    """Tests for expenditure bounds and extra restrictions."""

    def test_expenditure_bounds(self, single_obs):
        interval = expenditure_bounds(single_obs, 0.0, [2.0])
        assert interval.lower == pytest.approx(0.0)
        assert interval.upper == pytest.approx(4.0)

    def test_budget_cap(self, single_obs):
        interval = quantity_bounds(single_obs, 0.0, [2.0], 0, extra=ExpenditureConstraint(m_high=1.0))
        assert interval.upper == pytest.approx(0.5)

    def test_box_floor(self, single_obs):
        interval = quantity_bounds(single_obs, 0.0, [2.0], 0, extra=ExpenditureConstraint(box_low=(1.5,)))
        assert interval.lower == pytest.approx(1.5)
        assert interval.upper == pytest.approx(2.0)

    def test_restrictions_can_empty_the_set(self, single_obs):
        interval = quantity_bounds(single_obs, 0.0, [2.0], 0, extra=ExpenditureConstraint(m_low=5.0))
        assert not interval.is_feasible

    def test_inconsistent_restriction_rejected(self):
        with pytest.raises(ValueError):
            ExpenditureConstraint(m_low=2.0, m_high=1.0)

    def test_box_length_checked(self, single_obs):
        with pytest.raises(ValueError):
            quantity_bounds(single_obs, 0.0, [2.0], 0, extra=ExpenditureConstraint(box_high=(1.0, 1.0)))


class TestSweep:
    """Tests for eps sweeps."""

    def test_sweep_marks_values_below_epsilon_star(self, crossing_pair):
        intervals = sweep_quantity_bounds(crossing_pair, [1.5], 0, [0.0, 0.5, 1.0])
        assert [i.is_feasible for i in intervals] == [False, True, True]
        assert intervals[1].upper <= intervals[2].upper


class TestQuantityUpper:
    """Tests for the single-solve upper bound."""

    def test_values(self, single_obs, crossing_pair):
        assert quantity_upper(single_obs, 0.0, [2.0], 0) == pytest.approx(2.0)
        assert quantity_upper(single_obs, 0.0, [1.0], 0) == math.inf
        assert math.isnan(quantity_upper(crossing_pair, 0.0, [1.5], 0))


class TestHalfspaceSystem:
    """Tests for the enumerated polyhedron."""

    def test_count_for_two_observations(self, consistent_pair):
        system = halfspace_system(consistent_pair, 0.0, [1.5])
        assert len(system) == 4
        assert system.sequences == ((0,), (1,), (0, 1), (1, 0))

    def test_single_observation_halfspace(self, single_obs):
        system = halfspace_system(single_obs, 0.0, [2.0])
        np.testing.assert_allclose(system.normals, [[1.0]])
        np.testing.assert_allclose(system.offsets, [2.0])

    def test_extrema_match_lp(self, consistent_pair):
        system = halfspace_system(consistent_pair, 0.0, [1.5])
        enum = system.extrema(0)
        assert enum.lower == pytest.approx(1.0)
        assert enum.upper == pytest.approx(2.0)

    def test_contains(self, consistent_pair):
        system = halfspace_system(consistent_pair, 0.0, [1.5])
        assert system.contains([1.5])
        assert not system.contains([3.0])
        assert not system.contains([-1.0])

    def test_cap(self):
        dataset = Dataset(prices=np.ones((8, 1)), quantities=np.ones((8, 1)))
        with pytest.raises(OracleCapError):
            halfspace_system(dataset, 0.0, [1.0], cap=7)


class TestFiniteness:
    """Tests for the upper comprehensive convex hull test."""

    @pytest.fixture
    def unit_price(self):
        return Dataset(prices=[[1.0, 1.0]], quantities=[[1.0, 1.0]])

    def test_strictly_dominating_price(self, unit_price):
        assert upper_bound_finite(unit_price, [2.0, 2.0])

    def test_boundary_price(self, unit_price):
        assert not upper_bound_finite(unit_price, [1.0, 1.0])
        assert in_cco(unit_price.prices, [1.0, 1.0])

    def test_convex_combination(self):
        dataset = Dataset(prices=[[1.0, 3.0], [3.0, 1.0]], quantities=[[1.0, 1.0], [1.0, 1.0]])
        assert upper_bound_finite(dataset, [2.1, 2.1])
        assert cco_margin(dataset.prices, [2.1, 2.1]) == pytest.approx(0.1)
        assert not upper_bound_finite(dataset, [1.5, 1.5])


@pytest.mark.slow
class TestCounterfactualProperties:
    """Randomized checks of the counterfactual LP."""

    def test_nonemptiness_dichotomy(self, rng, make_dataset):
        for _ in range(100):
            dataset = make_dataset(int(rng.integers(2, 6)), int(rng.integers(1, 3)))
            eps_star = epsilon_star_lp(dataset).value
            price = rng.uniform(0.5, 3.5, size=dataset.K)
            below = quantity_bounds(dataset, eps_star - 0.01 * (1 + eps_star), price, 0, eps_star=eps_star)
            at = quantity_bounds(dataset, eps_star, price, 0, eps_star=eps_star)
            if eps_star > 0:
                assert not below.is_feasible
            assert at.is_feasible

    def test_members_keep_epsilon_star(self, rng, make_dataset):
        for _ in range(50):
            dataset = make_dataset(int(rng.integers(2, 5)), 1)
            eps_star = epsilon_star_lp(dataset).value
            price = rng.uniform(0.5, 3.5, size=1)
            interval = quantity_bounds(dataset, None, price, 0, eps_star=eps_star)
            high = interval.upper if math.isfinite(interval.upper) else interval.lower + 1.0
            quantity = interval.lower + rng.uniform() * (high - interval.lower)
            augmented = augment(dataset, CandidatePoint(quantity=[quantity], price=price))
            assert epsilon_star_lp(augmented).value == pytest.approx(eps_star, abs=1e-7)

    def test_lp_matches_halfspace_extrema(self, rng, make_dataset):
        for _ in range(100):
            dataset = make_dataset(int(rng.integers(1, 6)), int(rng.integers(1, 3)))
            eps = epsilon_star_lp(dataset).value + rng.uniform(0.0, 0.5)
            price = rng.uniform(0.5, 3.5, size=dataset.K)
            system = halfspace_system(dataset, eps, price)
            for k in range(dataset.K):
                lp = quantity_bounds(dataset, eps, price, k)
                enum = system.extrema(k)
                assert lp.lower == pytest.approx(enum.lower, abs=1e-6)
                assert lp.upper == pytest.approx(enum.upper, abs=1e-6)

    def test_single_good_bounds_nonincreasing(self, rng, make_dataset):
        grid = np.linspace(0.4, 3.6, 50)
        for _ in range(50):
            dataset = make_dataset(int(rng.integers(2, 6)), 1)
            eps_star = epsilon_star_lp(dataset).value
            bounds = [quantity_bounds(dataset, None, [p], 0, eps_star=eps_star) for p in grid]
            for previous, current in zip(bounds, bounds[1:]):
                assert current.is_feasible
                assert current.upper <= previous.upper + 1e-7 * (1 + abs(previous.upper))
                assert current.lower <= previous.lower + 1e-7 * (1 + abs(previous.lower))

    def test_finiteness_dichotomy(self, rng, make_dataset):
        for _ in range(100):
            dataset = make_dataset(int(rng.integers(1, 6)), int(rng.integers(1, 4)))
            price = rng.uniform(0.5, 3.5, size=dataset.K)
            eps_star = epsilon_star_lp(dataset).value
            uppers = [quantity_upper(dataset, None, price, k, eps_star) for k in range(dataset.K)]
            assert upper_bound_finite(dataset, price) == all(math.isfinite(u) for u in uppers)

    def test_bounds_jointly_concave_convex_in_quantities_and_eps(self, rng, make_dataset):
        for _ in range(100):
            K = int(rng.integers(1, 3))
            d0 = make_dataset(int(rng.integers(2, 5)), K)
            d1 = d0.with_quantities(rng.uniform(0.0, 3.0, size=d0.quantities.shape))
            eps0, eps1 = (epsilon_star_lp(d).value + rng.uniform(0.0, 0.3) for d in (d0, d1))
            alpha = rng.uniform(0.05, 0.95)
            mixed = d0.with_quantities(alpha * d0.quantities + (1 - alpha) * d1.quantities)
            eps_mixed = alpha * eps0 + (1 - alpha) * eps1
            price = d0.prices.max(axis=0) + 0.5
            k = int(rng.integers(K))
            b0 = quantity_bounds(d0, eps0, price, k)
            b1 = quantity_bounds(d1, eps1, price, k)
            bm = quantity_bounds(mixed, eps_mixed, price, k)
            upper = alpha * b0.upper + (1 - alpha) * b1.upper
            lower = alpha * b0.lower + (1 - alpha) * b1.lower
            assert bm.upper >= upper - 1e-7 * (1 + abs(upper))
            assert bm.lower <= lower + 1e-7 * (1 + abs(lower))

    def test_intervals_widen_with_eps(self, rng, make_dataset):
        for _ in range(50):
            dataset = make_dataset(int(rng.integers(1, 5)), int(rng.integers(1, 3)))
            eps_star = epsilon_star_lp(dataset).value
            eps_values = [eps_star] + sorted((eps_star + rng.uniform(0.0, 1.0, size=4)).tolist())
            price = rng.uniform(0.5, 3.5, size=dataset.K)
            intervals = sweep_quantity_bounds(dataset, price, 0, eps_values)
            assert all(interval.is_feasible for interval in intervals)
            for tight, loose in zip(intervals, intervals[1:]):
                assert loose.upper >= tight.upper - 1e-7 * (1 + abs(tight.upper))
                assert loose.lower <= tight.lower + 1e-7 * (1 + abs(tight.lower))
