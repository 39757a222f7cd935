"""Kernel-smoothed pseudo-dataset D(y): estimated demand at each observed price."""

from dataclasses import dataclass

import numpy as np

from quasilinear_welfare.common.logging import get_logger
from quasilinear_welfare.domain.model import Dataset
from quasilinear_welfare.estimation.kernel import (
    CrossSection,
    EstimationError,
    KernelConfig,
    kernel_demand,
)

logger = get_logger(__name__)


@dataclass(frozen=True)
class PseudoDataset:
    dataset: Dataset
    retained: int
    clamped: int = 0


def trim_prices(prices: np.ndarray, cfg: KernelConfig) -> np.ndarray:
    """Boolean mask of prices strictly between the trimming quantiles.

    Quantiles use linear interpolation. A level of exactly 0 (or 1) keeps the
    minimum (or maximum) price.
    """
    low, high = np.quantile(prices, [cfg.trim_low, cfg.trim_high])
    keep_low = prices >= low if cfg.trim_low == 0.0 else prices > low
    keep_high = prices <= high if cfg.trim_high == 1.0 else prices < high
    return keep_low & keep_high


def thin(prices: np.ndarray, max_points: int) -> np.ndarray:
    """Evenly spaced order statistics of sorted `prices`, at most max_points of them."""
    if max_points < 1:
        raise ValueError(f"max_points must be >= 1, got {max_points}")
    if prices.shape[0] <= max_points:
        return prices
    picks = np.unique(np.round(np.linspace(0, prices.shape[0] - 1, max_points)).astype(int))
    return prices[picks]


def build_pseudo_dataset(
    cs: CrossSection,
    income: float,
    cfg: KernelConfig,
    beta,
    max_points: int | None = None,
) -> PseudoDataset:
    """Evaluate the kernel demand estimate at every retained price, at income `income`.

    Negative estimates are clamped to 0 and counted. The K=1 dataset is ordered
    by price.

    Raises:
        EstimationError: trimming removed every record
        NoSupportError: some retained price has an empty kernel window at `income`
    """
    mask = trim_prices(cs.P, cfg)
    prices = np.sort(cs.P[mask], kind="stable")
    if prices.shape[0] == 0:
        raise EstimationError(
            f"trimming at quantiles ({cfg.trim_low}, {cfg.trim_high}) removed every record"
        )
    retained = prices.shape[0]
    if max_points is not None:
        prices = thin(prices, max_points)
        logger.info("Thinned %d retained prices to %d", retained, prices.shape[0])

    estimates = np.array([kernel_demand(cs, beta, p, income, cfg) for p in prices])
    negative = estimates < 0
    clamped = int(np.count_nonzero(negative))
    if clamped:
        logger.warning("Clamped %d negative demand estimates to 0", clamped)
        estimates = np.where(negative, 0.0, estimates)

    dataset = Dataset(prices=prices.reshape(-1, 1), quantities=estimates.reshape(-1, 1))
    logger.info("Pseudo-dataset at income %.6g: %d observations", income, dataset.T)
    return PseudoDataset(dataset=dataset, retained=retained, clamped=clamped)
