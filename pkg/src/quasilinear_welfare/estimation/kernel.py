"""Biweight kernel smoothing for the partially linear demand model.

X = g(P, Y) + beta'W + U: beta is estimated by double-residual regression,
then g is recovered by a product-kernel Nadaraya-Watson ratio.
"""

from dataclasses import dataclass

import numpy as np

from quasilinear_welfare.common.logging import get_logger

logger = get_logger(__name__)

STANDARDIZED_BANDWIDTH = 0.75
DENOMINATOR_FLOOR = 1e-12
RANK_TOL = 1e-9


class EstimationError(ValueError):
    """Raised when the smoothing stage cannot produce an estimate."""

    pass


class NoSupportError(EstimationError):
    """Raised when no record falls inside the product-kernel window."""

    pass


@dataclass(frozen=True, eq=False)
class CrossSection:
    """Micro records (X quantity, P price, Y income, W covariates)."""

    X: np.ndarray
    P: np.ndarray
    Y: np.ndarray
    W: np.ndarray

    def __post_init__(self):
        X = np.array(self.X, dtype=np.float64).reshape(-1)
        P = np.array(self.P, dtype=np.float64).reshape(-1)
        Y = np.array(self.Y, dtype=np.float64).reshape(-1)
        W = np.array(self.W, dtype=np.float64)
        if W.ndim == 1:
            W = W.reshape(-1, 1) if W.size else np.zeros((X.shape[0], 0))
        n = X.shape[0]
        if n < 2:
            raise EstimationError(f"a cross-section needs at least 2 records, got {n}")
        if P.shape[0] != n or Y.shape[0] != n or W.shape[0] != n:
            raise EstimationError(
                f"column lengths differ: X={n}, P={P.shape[0]}, Y={Y.shape[0]}, W={W.shape[0]}"
            )
        if np.any(P <= 0):
            bad = int(np.flatnonzero(P <= 0)[0])
            raise EstimationError(f"record {bad + 1} has nonpositive price {P[bad]}")
        for name, column in (("X", X), ("P", P), ("Y", Y), ("W", W)):
            if not np.all(np.isfinite(column)):
                raise EstimationError(f"column {name} has non-finite entries")
            column.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "W", W)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d_w(self) -> int:
        return self.W.shape[1]

    def residual_demand(self, beta) -> np.ndarray:
        """X - beta'W for every record."""
        beta = np.asarray(beta, dtype=np.float64).reshape(-1)
        if beta.shape[0] != self.d_w:
            raise EstimationError(f"beta has {beta.shape[0]} entries for {self.d_w} covariates")
        return self.X - self.W @ beta


@dataclass(frozen=True)
class KernelConfig:
    """Bandwidths (in price and income units) and price trimming quantiles."""

    h_p: float
    h_y: float
    trim_low: float = 0.05
    trim_high: float = 0.95

    def __post_init__(self):
        if not (self.h_p > 0 and self.h_y > 0):
            raise ValueError(f"bandwidths must be positive, got h_p={self.h_p}, h_y={self.h_y}")
        if not 0.0 <= self.trim_low < self.trim_high <= 1.0:
            raise ValueError(f"need 0 <= trim_low < trim_high <= 1, got ({self.trim_low}, {self.trim_high})")

    @classmethod
    def standardized(cls, cs: CrossSection, scale: float = STANDARDIZED_BANDWIDTH, **kwargs) -> "KernelConfig":
        """Bandwidth `scale` on standardized price and income, mapped back to raw units."""
        sigma_p, sigma_y = _std(cs.P, "price"), _std(cs.Y, "income")
        return cls(h_p=scale * sigma_p, h_y=scale * sigma_y, **kwargs)


@dataclass(frozen=True)
class PartialLinearFit:
    beta: np.ndarray
    excluded: int = 0


def _std(values: np.ndarray, what: str) -> float:
    sigma = float(np.std(values))
    if sigma <= 0:
        raise EstimationError(f"{what} has zero variance")
    return sigma


def biweight(u):
    """(15/16)(1 - u^2)^2 on |u| <= 1, else 0. Works elementwise on arrays."""
    u = np.asarray(u, dtype=np.float64)
    values = np.where(np.abs(u) <= 1.0, 0.9375 * (1.0 - u**2) ** 2, 0.0)
    return float(values) if values.ndim == 0 else values


def bandwidth_rule(cs: CrossSection, h_y: float) -> float:
    """h_p = h_y * sd(P) / sd(Y), population standard deviations."""
    if h_y <= 0:
        raise ValueError(f"h_y must be positive, got {h_y}")
    return h_y * _std(cs.P, "price") / _std(cs.Y, "income")


def product_weights(cs: CrossSection, cfg: KernelConfig, price, income) -> np.ndarray:
    """K_hp(P^j - p) K_hy(Y^j - y); rows index evaluation points when price is an array."""
    price = np.asarray(price, dtype=np.float64)
    income = np.asarray(income, dtype=np.float64)
    price_part = biweight((cs.P - price[..., None]) / cfg.h_p)
    income_part = biweight((cs.Y - income[..., None]) / cfg.h_y)
    return np.asarray(price_part * income_part)


def robinson_beta(cs: CrossSection, cfg: KernelConfig) -> PartialLinearFit:
    """Double-residual estimate of beta.

    First-stage Nadaraya-Watson means of X and W given (P, Y) are leave-in.
    Records whose kernel window has (numerically) zero mass are dropped from the
    final least squares and counted in `excluded`.

    Raises:
        EstimationError: no covariates, or the residualized covariates are rank deficient
    """
    if cs.d_w < 1:
        raise EstimationError("the partially linear fit needs at least one covariate")

    weights = product_weights(cs, cfg, cs.P, cs.Y)
    mass = weights.sum(axis=1)
    supported = mass > DENOMINATOR_FLOOR
    excluded = int(np.count_nonzero(~supported))
    if excluded:
        logger.warning("%d records have an empty kernel window and are excluded", excluded)

    weights, mass = weights[supported], mass[supported]
    x_resid = cs.X[supported] - (weights @ cs.X) / mass
    w_resid = cs.W[supported] - (weights @ cs.W) / mass[:, None]

    scale = max(1.0, float(np.max(np.abs(cs.W))))
    rank = np.linalg.matrix_rank(w_resid, tol=RANK_TOL * scale) if w_resid.size else 0
    if rank < cs.d_w:
        raise EstimationError(
            f"residualized covariates have rank {rank} < {cs.d_w}; W is explained by (P, Y)"
        )

    beta, *_ = np.linalg.lstsq(w_resid, x_resid, rcond=None)
    logger.debug("Robinson beta = %s (%d records used)", beta.tolist(), int(supported.sum()))
    beta.setflags(write=False)
    return PartialLinearFit(beta=beta, excluded=excluded)


def kernel_demand(cs: CrossSection, beta, price: float, income: float, cfg: KernelConfig) -> float:
    """Nadaraya-Watson estimate of g(price, income) from X - beta'W.

    Raises:
        NoSupportError: no record has positive product-kernel weight
    """
    weights = product_weights(cs, cfg, price, income)
    mass = float(weights.sum())
    if mass <= 0.0:
        raise NoSupportError(f"no records within the kernel window at p={price}, y={income}")
    return float(weights @ cs.residual_demand(beta)) / mass
