"""Seeded synthetic cross-sections with a known demand function."""

from dataclasses import dataclass

import numpy as np

from quasilinear_welfare.domain.model import Dataset
from quasilinear_welfare.estimation.kernel import CrossSection

Piece = tuple[float, float, float]


@dataclass(frozen=True)
class SyntheticSpec:
    """X = g(P, Y) + beta'W + noise_scale * Z.

    g is intercept - price_slope * P + income_slope * Y, or, when `pieces` is
    set, the minimum over (intercept, price_slope, income_slope) pieces of the
    same affine form. P ~ uniform(price_low, price_high),
    Y ~ normal(income_mean, income_sd), W and Z standard normal (W scaled by
    covariate_scale). Draws happen in a fixed order so specs differing only
    in scales share random numbers.
    """

    intercept: float = 10.0
    price_slope: float = 2.0
    income_slope: float = 0.5
    beta: tuple[float, ...] = (1.0,)
    noise_scale: float = 0.1
    covariate_scale: float = 1.0
    price_low: float = 1.0
    price_high: float = 4.0
    income_mean: float = 5.0
    income_sd: float = 1.0
    pieces: tuple[Piece, ...] | None = None

    def __post_init__(self):
        if not 0 < self.price_low < self.price_high:
            raise ValueError(f"need 0 < price_low < price_high, got ({self.price_low}, {self.price_high})")
        if self.noise_scale < 0 or self.covariate_scale < 0 or self.income_sd < 0:
            raise ValueError("scales must be nonnegative")
        if self.pieces is not None:
            if not self.pieces:
                raise ValueError("pieces must not be empty")
            for piece in self.pieces:
                if len(piece) != 3:
                    raise ValueError(f"each piece is (intercept, price_slope, income_slope), got {piece!r}")
                # nonincreasing in price
                if piece[1] < 0:
                    raise ValueError(f"price_slope must be nonnegative, got {piece[1]}")

    def demand(self, price, income):
        """The true g(p, y)."""
        price, income = np.asarray(price, dtype=np.float64), np.asarray(income, dtype=np.float64)
        if self.pieces is None:
            return self.intercept - self.price_slope * price + self.income_slope * income
        values = [a - b * price + c * income for a, b, c in self.pieces]
        return np.minimum.reduce(np.broadcast_arrays(*values))


def synth_cross_section(seed: int, n: int, spec: SyntheticSpec) -> CrossSection:
    rng = np.random.default_rng(seed)
    d_w = len(spec.beta)
    P = rng.uniform(spec.price_low, spec.price_high, size=n)
    Y = spec.income_mean + spec.income_sd * rng.standard_normal(n)
    W = spec.covariate_scale * rng.standard_normal((n, d_w))
    Z = rng.standard_normal(n)
    X = spec.demand(P, Y) + W @ np.asarray(spec.beta, dtype=np.float64) + spec.noise_scale * Z
    return CrossSection(X=X, P=P, Y=Y, W=W)


def true_dataset(spec: SyntheticSpec, prices, income: float) -> Dataset:
    """K=1 dataset of the true demand at `prices`, clamped at 0."""
    prices = np.asarray(prices, dtype=np.float64).reshape(-1)
    quantities = np.maximum(spec.demand(prices, income), 0.0)
    return Dataset(prices=prices.reshape(-1, 1), quantities=quantities.reshape(-1, 1))
