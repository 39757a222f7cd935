"""Tests for utility difference and welfare bounds."""

import math

import numpy as np
import pytest

from quasilinear_welfare.analysis.rationality import epsilon_star_lp
from quasilinear_welfare.analysis.welfare import (
    WelfareQuery,
    WelfareRegion,
    h_function,
    indirect_diff_bounds,
    surplus_integral,
    utility_diff_bounds,
    utility_diff_lower_sequences,
    utility_diff_upper_sequences,
    welfare_region,
)
from quasilinear_welfare.common.sequences import OracleCapError
from quasilinear_welfare.domain.model import Dataset


class TestUtilityDiffBounds:
    """Tests for bounds on u(x1) - u(x0)."""

    def test_upper_from_observed_bundle(self, single_obs):
        interval = utility_diff_bounds(single_obs, 0.0, [3.0], [2.0])
        assert interval.upper == pytest.approx(1.0)
        assert interval.lower == -math.inf

    def test_eps_adds_to_upper(self, single_obs):
        interval = utility_diff_bounds(single_obs, 0.25, [3.0], [2.0])
        assert interval.upper == pytest.approx(1.25)

    def test_off_data_start_is_unbounded(self, single_obs):
        interval = utility_diff_bounds(single_obs, 0.0, [3.0], [5.0])
        assert interval.upper == math.inf
        assert interval.lower == -math.inf

    def test_lower_from_observed_final_bundle(self, single_obs):
        interval = utility_diff_bounds(single_obs, 0.0, [2.0], [3.0])
        assert interval.lower == pytest.approx(-1.0)
        assert interval.upper == math.inf

    def test_equal_bundles(self, single_obs):
        interval = utility_diff_bounds(single_obs, 0.0, [1.0], [1.0])
        assert (interval.lower, interval.upper) == (0.0, 0.0)

    def test_between_observed_bundles(self, consistent_pair):
        # u(1) - u(2) lies in [p^2 (1 - 2), p^1 (1 - 2)] = [-2, -1]
        interval = utility_diff_bounds(consistent_pair, 0.0, [1.0], [2.0])
        assert interval.lower == pytest.approx(-2.0)
        assert interval.upper == pytest.approx(-1.0)

    def test_eps_below_epsilon_star(self, crossing_pair):
        assert not utility_diff_bounds(crossing_pair, 0.1, [3.0], [1.0]).is_feasible


class TestUtilitySequences:
    """Tests for the acyclic-sequence formulas."""

    def test_single_observation(self, single_obs):
        bound = utility_diff_upper_sequences(single_obs, 0.25, [3.0], 0)
        assert bound.value == pytest.approx(1.25)
        assert bound.sequence == (0,)

    def test_two_observations(self, consistent_pair):
        bound = utility_diff_upper_sequences(consistent_pair, 0.0, [1.0], 0)
        assert bound.value == pytest.approx(-1.0)

    def test_lower_single_observation(self, single_obs):
        bound = utility_diff_lower_sequences(single_obs, 0.0, [3.0], 0)
        assert bound.value == pytest.approx(-1.0)

    def test_bundle_equal_to_start_rejected(self, single_obs):
        with pytest.raises(ValueError):
            utility_diff_upper_sequences(single_obs, 0.0, [2.0], 0)

    def test_cap(self):
        dataset = Dataset(prices=np.ones((8, 1)), quantities=np.ones((8, 1)))
        with pytest.raises(OracleCapError):
            utility_diff_upper_sequences(dataset, 0.0, [2.0], 0)


class TestIndirectDiffBounds:
    """Tests for bounds on the change in approximate indirect utility."""

    def test_observed_price_exact_data(self, single_obs):
        bounds = indirect_diff_bounds(single_obs, WelfareQuery(p1=[1.0], p0=[2.0], eps=0.0))
        assert bounds.upper == pytest.approx(2.0)
        assert bounds.region is WelfareRegion.GUARANTEED_FINITE

    def test_sandwich_with_positive_eps(self, single_obs):
        bounds = indirect_diff_bounds(single_obs, WelfareQuery(p1=[1.0], p0=[2.0], eps=0.1))
        h = h_function(single_obs, 0.1, 0, [2.0]).value
        assert h == pytest.approx(2.1)
        assert 2.0 - 1e-7 <= bounds.upper <= 2.2 + 1e-7

    def test_equal_prices(self, single_obs):
        bounds = indirect_diff_bounds(single_obs, WelfareQuery(p1=[1.5], p0=[1.5], eps=0.2))
        assert bounds.upper == pytest.approx(0.2, abs=1e-7)
        assert bounds.lower == pytest.approx(-0.2, abs=1e-7)

    def test_price_increase(self, single_obs):
        bounds = indirect_diff_bounds(single_obs, WelfareQuery(p1=[3.0], p0=[2.0], eps=0.0))
        assert bounds.lower == pytest.approx(-2.0)
        assert bounds.upper == pytest.approx(0.0, abs=1e-7)

    def test_antisymmetry(self, consistent_pair):
        query = WelfareQuery(p1=[1.4], p0=[2.5], eps=0.1)
        forward = indirect_diff_bounds(consistent_pair, query)
        backward = indirect_diff_bounds(consistent_pair, query.reversed())
        assert forward.upper == pytest.approx(-backward.lower, abs=1e-7)
        assert forward.lower == pytest.approx(-backward.upper, abs=1e-7)

    def test_below_min_price_is_unbounded(self, single_obs):
        bounds = indirect_diff_bounds(single_obs, WelfareQuery(p1=[0.5], p0=[2.0], eps=0.0))
        assert bounds.upper == math.inf
        assert bounds.region is WelfareRegion.GUARANTEED_INFINITE

    def test_adaptive_eps(self, crossing_pair):
        adaptive = indirect_diff_bounds(crossing_pair, WelfareQuery(p1=[1.5], p0=[1.5]))
        assert adaptive.upper == pytest.approx(0.5, abs=1e-7)

    def test_eps_below_epsilon_star(self, crossing_pair):
        bounds = indirect_diff_bounds(crossing_pair, WelfareQuery(p1=[1.5], p0=[2.0], eps=0.0))
        assert not bounds.interval.is_feasible

    def test_nonpositive_query_price(self):
        with pytest.raises(ValueError):
            WelfareQuery(p1=[0.0], p0=[1.0])


class TestWelfareRegion:
    """Tests for locating p1 relative to the finiteness results."""

    def test_regions(self, single_obs):
        assert welfare_region(single_obs, [1.0], [2.0]) is WelfareRegion.GUARANTEED_FINITE
        assert welfare_region(single_obs, [0.5], [2.0]) is WelfareRegion.GUARANTEED_INFINITE
        assert welfare_region(single_obs, [0.5], [0.4]) is WelfareRegion.UNDETERMINED


class TestHFunction:
    """Tests for the discrete surplus."""

    def test_values(self, single_obs):
        assert h_function(single_obs, 0.0, 0, [2.0]).value == pytest.approx(2.0)
        assert h_function(single_obs, 0.3, 0, [2.0]).value == pytest.approx(2.3)


class TestSurplusIntegral:
    """Tests for the trapezoidal surplus cross-check."""

    def test_price_increase_upper_demand(self, single_obs):
        value = surplus_integral(single_obs, 3.0, 2.0, n_steps=50)
        assert value == pytest.approx(-2.0)
        lower = indirect_diff_bounds(single_obs, WelfareQuery(p1=[3.0], p0=[2.0], eps=0.0)).lower
        assert value == pytest.approx(lower, abs=1e-6)

    def test_price_increase_lower_demand(self, single_obs):
        value = surplus_integral(single_obs, 3.0, 2.0, n_steps=50, demand="lower")
        upper = indirect_diff_bounds(single_obs, WelfareQuery(p1=[3.0], p0=[2.0], eps=0.0)).upper
        assert value == pytest.approx(upper, abs=1e-6)

    def test_zero_length_segment(self, single_obs):
        assert surplus_integral(single_obs, 2.0, 2.0) == 0.0

    def test_step_demand(self, consistent_pair):
        n_steps = 400
        value = surplus_integral(consistent_pair, 1.2, 2.0, n_steps=n_steps)
        upper = indirect_diff_bounds(consistent_pair, WelfareQuery(p1=[1.2], p0=[2.0], eps=0.0)).upper
        assert value == pytest.approx(1.6, abs=2.0 * 0.8 / n_steps)
        assert value == pytest.approx(upper, abs=2.0 * 0.8 / n_steps)

    def test_preconditions(self, single_obs, crossing_pair, two_goods):
        with pytest.raises(ValueError):
            surplus_integral(crossing_pair, 2.0, 1.5)
        with pytest.raises(ValueError):
            surplus_integral(two_goods, 2.0, 1.5)
        with pytest.raises(ValueError):
            surplus_integral(single_obs, 0.5, 2.0)


def consistent_single_good(rng, T: int) -> Dataset:
    """Prices ascending, quantities descending: exactly rationalizable."""
    prices = np.sort(rng.uniform(0.5, 3.0, size=T))
    quantities = np.sort(rng.uniform(0.0, 3.0, size=T))[::-1]
    return Dataset(prices=prices.reshape(-1, 1), quantities=quantities.reshape(-1, 1).copy())


@pytest.mark.slow
class TestWelfareProperties:
    """Randomized checks of the welfare and utility programs."""

    def test_sandwich(self, rng, make_dataset):
        for _ in range(100):
            dataset = make_dataset(int(rng.integers(1, 5)), int(rng.integers(1, 3)))
            eps = epsilon_star_lp(dataset).value + rng.uniform(0.0, 0.3)
            S = int(rng.integers(dataset.T))
            p1 = dataset.prices[S]
            p0 = rng.uniform(0.5, 3.5, size=dataset.K)
            upper = indirect_diff_bounds(dataset, WelfareQuery(p1=p1, p0=p0, eps=eps)).upper
            h = h_function(dataset, eps, S, p0).value
            assert h - eps - 1e-6 <= upper <= h + eps + 1e-6
            same = indirect_diff_bounds(dataset, WelfareQuery(p1=p1, p0=p1, eps=eps)).upper
            assert same == pytest.approx(eps, abs=1e-7)

    def test_integral_matches_lp(self, rng):
        n_steps = 2000
        for _ in range(20):
            dataset = consistent_single_good(rng, int(rng.integers(1, 5)))
            low = float(dataset.prices.min())
            p1, p0 = rng.uniform(low + 0.05, 3.5, size=2)
            bounds = indirect_diff_bounds(dataset, WelfareQuery(p1=[p1], p0=[p0], eps=0.0))
            demand = "upper" if p1 < p0 else "lower"
            value = surplus_integral(dataset, p1, p0, n_steps=n_steps, demand=demand)
            tol = max(1e-3, 2.0 * 3.0 * abs(p0 - p1) / n_steps)
            assert value == pytest.approx(bounds.upper, abs=tol)

    def test_upper_welfare_nonincreasing_in_p1(self, rng, make_dataset):
        for _ in range(20):
            dataset = make_dataset(3, 1)
            eps = epsilon_star_lp(dataset).value
            p0 = [2.0]
            grid = np.linspace(float(dataset.prices.max()) + 0.1, 4.0, 8)
            uppers = [
                indirect_diff_bounds(dataset, WelfareQuery(p1=[p], p0=p0, eps=eps), eps_star=eps).upper
                for p in grid
            ]
            for previous, current in zip(uppers, uppers[1:]):
                assert current <= previous + 1e-7
            for a, b, c in zip(uppers, uppers[1:], uppers[2:]):
                assert b <= 0.5 * (a + c) + 1e-7

    def test_monotone_in_eps(self, rng, make_dataset):
        for _ in range(20):
            dataset = make_dataset(3, 2)
            eps_star = epsilon_star_lp(dataset).value
            query = rng.uniform(0.5, 3.5, size=2), rng.uniform(0.5, 3.5, size=2)
            tight = indirect_diff_bounds(dataset, WelfareQuery(*query, eps=eps_star), eps_star=eps_star)
            loose = indirect_diff_bounds(dataset, WelfareQuery(*query, eps=eps_star + 0.2), eps_star=eps_star)
            assert loose.upper >= tight.upper - 1e-7
            assert loose.lower <= tight.lower + 1e-7

    def test_utility_lp_matches_sequences(self, rng, make_dataset):
        for _ in range(100):
            dataset = make_dataset(int(rng.integers(1, 6)), int(rng.integers(1, 3)))
            eps = epsilon_star_lp(dataset).value
            S = int(rng.integers(dataset.T))
            off = dataset.quantities.max(axis=0) + rng.uniform(0.1, 1.0, size=dataset.K)
            upper = utility_diff_bounds(dataset, eps, off, dataset.quantities[S], eps_star=eps).upper
            assert upper == pytest.approx(utility_diff_upper_sequences(dataset, eps, off, S).value, abs=1e-6)
            lower = utility_diff_bounds(dataset, eps, dataset.quantities[S], off, eps_star=eps).lower
            assert lower == pytest.approx(utility_diff_lower_sequences(dataset, eps, off, S).value, abs=1e-6)
            assert lower == pytest.approx(-upper, abs=1e-7)

    def test_upper_utility_strictly_increasing(self, rng, make_dataset):
        for _ in range(20):
            dataset = make_dataset(4, 2)
            eps = epsilon_star_lp(dataset).value
            x1 = dataset.quantities.max(axis=0) + 0.5
            base = utility_diff_bounds(dataset, eps, x1, dataset.quantities[0], eps_star=eps).upper
            for k in range(2):
                bumped = x1.copy()
                bumped[k] += 0.1
                moved = utility_diff_bounds(dataset, eps, bumped, dataset.quantities[0], eps_star=eps).upper
                assert moved > base

    @staticmethod
    def _mix(rng, d0: Dataset, d1: Dataset):
        """Two (dataset, eps) points with eps >= epsilon* and their convex combination."""
        eps0, eps1 = (epsilon_star_lp(d).value + rng.uniform(0.0, 0.3) for d in (d0, d1))
        alpha = rng.uniform(0.05, 0.95)
        mixed = d0.with_quantities(alpha * d0.quantities + (1 - alpha) * d1.quantities)
        return alpha, (eps0, eps1, alpha * eps0 + (1 - alpha) * eps1), mixed

    def test_welfare_bounds_jointly_concave_convex(self, rng, make_dataset):
        for _ in range(100):
            d0 = make_dataset(int(rng.integers(2, 5)), int(rng.integers(1, 3)))
            d1 = d0.with_quantities(rng.uniform(0.0, 3.0, size=d0.quantities.shape))
            alpha, eps, mixed = self._mix(rng, d0, d1)
            p1, p0 = rng.uniform(0.5, 3.5, size=(2, d0.K))
            b0, b1, bm = (
                indirect_diff_bounds(d, WelfareQuery(p1=p1, p0=p0, eps=e))
                for d, e in zip((d0, d1, mixed), eps)
            )
            upper = alpha * b0.upper + (1 - alpha) * b1.upper
            lower = alpha * b0.lower + (1 - alpha) * b1.lower
            if math.isfinite(upper):
                assert bm.upper >= upper - 1e-7 * (1 + abs(upper))
            if math.isfinite(lower):
                assert bm.lower <= lower + 1e-7 * (1 + abs(lower))

    def test_utility_upper_concave_with_start_bundle_fixed(self, rng, make_dataset):
        for _ in range(100):
            d0 = make_dataset(int(rng.integers(2, 5)), int(rng.integers(1, 3)))
            S = int(rng.integers(d0.T))
            quantities = rng.uniform(0.0, 3.0, size=d0.quantities.shape)
            quantities[S] = d0.quantities[S]
            d1 = d0.with_quantities(quantities)
            alpha, eps, mixed = self._mix(rng, d0, d1)
            x0 = d0.quantities[S]
            x1 = np.maximum(d0.quantities.max(axis=0), quantities.max(axis=0)) + rng.uniform(0.1, 1.0, size=d0.K)
            u0, u1, um = (utility_diff_bounds(d, e, x1, x0).upper for d, e in zip((d0, d1, mixed), eps))
            combined = alpha * u0 + (1 - alpha) * u1
            assert math.isfinite(combined)
            assert um >= combined - 1e-7 * (1 + abs(combined))

    def test_utility_lower_convex_with_final_bundle_fixed(self, rng, make_dataset):
        for _ in range(100):
            d0 = make_dataset(int(rng.integers(2, 5)), int(rng.integers(1, 3)))
            F = int(rng.integers(d0.T))
            quantities = rng.uniform(0.0, 3.0, size=d0.quantities.shape)
            quantities[F] = d0.quantities[F]
            d1 = d0.with_quantities(quantities)
            alpha, eps, mixed = self._mix(rng, d0, d1)
            x1 = d0.quantities[F]
            x0 = np.maximum(d0.quantities.max(axis=0), quantities.max(axis=0)) + rng.uniform(0.1, 1.0, size=d0.K)
            l0, l1, lm = (utility_diff_bounds(d, e, x1, x0).lower for d, e in zip((d0, d1, mixed), eps))
            combined = alpha * l0 + (1 - alpha) * l1
            assert math.isfinite(combined)
            assert lm <= combined + 1e-7 * (1 + abs(combined))
