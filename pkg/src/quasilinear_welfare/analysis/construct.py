"""Explicit piecewise-affine rationalizing utilities and duality round-trips."""

import math
from dataclasses import dataclass, field

import numpy as np

from quasilinear_welfare.analysis.rationality import (
    RATIONALITY_TOL,
    edge_weights,
    epsilon_star_lp,
)
from quasilinear_welfare.common.logging import get_logger
from quasilinear_welfare.common.sequences import DEFAULT_SEQUENCE_CAP, acyclic_sequences
from quasilinear_welfare.domain.model import Dataset, Epsilon, ensure_valid
from quasilinear_welfare.optimize.lp import ProgramBuilder, solve, solve_min

logger = get_logger(__name__)

ROUNDTRIP_TOL = 1e-6


class RationalizationError(ValueError):
    """Raised when asked to rationalize a dataset below its epsilon*."""

    pass


def _affine_pieces(slopes, intercepts) -> tuple[np.ndarray, np.ndarray]:
    slopes = np.atleast_2d(np.asarray(slopes, dtype=np.float64))
    intercepts = np.atleast_1d(np.asarray(intercepts, dtype=np.float64))
    if slopes.shape[0] < 1:
        raise ValueError("a piecewise-affine function needs at least one piece")
    if slopes.shape[0] != intercepts.shape[0]:
        raise ValueError(f"{slopes.shape[0]} slopes but {intercepts.shape[0]} intercepts")
    slopes.setflags(write=False)
    intercepts.setflags(write=False)
    return slopes, intercepts


@dataclass(frozen=True, eq=False)
class PiecewiseAffineUtility:
    """u(x) = min_j slope_j . x + intercept_j."""

    slopes: np.ndarray
    intercepts: np.ndarray
    sequences: tuple[tuple[int, ...], ...] = field(default=())

    def __post_init__(self):
        slopes, intercepts = _affine_pieces(self.slopes, self.intercepts)
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "intercepts", intercepts)

    def __len__(self) -> int:
        return self.intercepts.shape[0]

    @property
    def K(self) -> int:
        return self.slopes.shape[1]

    def __call__(self, x) -> float:
        x = np.atleast_1d(np.asarray(x, dtype=np.float64))
        return float(np.min(self.slopes @ x + self.intercepts))


@dataclass(frozen=True, eq=False)
class PiecewiseAffineIndirect:
    """V(p) = max_j slope_j . p + intercept_j, with every slope <= 0."""

    slopes: np.ndarray
    intercepts: np.ndarray

    def __post_init__(self):
        slopes, intercepts = _affine_pieces(self.slopes, self.intercepts)
        if np.any(slopes > 0):
            raise ValueError("indirect utility pieces must be weakly decreasing (slopes <= 0)")
        object.__setattr__(self, "slopes", slopes)
        object.__setattr__(self, "intercepts", intercepts)

    @property
    def K(self) -> int:
        return self.slopes.shape[1]

    def __call__(self, p) -> float:
        p = np.atleast_1d(np.asarray(p, dtype=np.float64))
        return float(np.max(self.slopes @ p + self.intercepts))


def build_rationalizing_utility(
    dataset: Dataset,
    eps: Epsilon | float,
    root: int = 0,
    cap: int = DEFAULT_SEQUENCE_CAP,
) -> PiecewiseAffineUtility:
    """Min-over-sequences utility that eps-rationalizes the data.

    One piece per acyclic sequence s_1..s_M starting at `root`: slope p^{s_M},
    intercept -p^{s_M}.x^{s_M} + sum_{m<M} p^{s_m}.(x^{s_{m+1}} - x^{s_m}) + M eps.
    Changing the root shifts u by a constant.

    Raises:
        RationalizationError: eps < epsilon*(D)
        OracleCapError: T exceeds cap
    """
    ensure_valid(dataset)
    eps_value = float(eps)
    eps_star = epsilon_star_lp(dataset).value
    if eps_value < eps_star - RATIONALITY_TOL:
        raise RationalizationError(f"eps={eps_value} is below epsilon*={eps_star}")

    P, X = dataset.prices, dataset.quantities
    weights = edge_weights(dataset)
    expenditure = np.einsum("rk,rk->r", P, X)

    slopes = []
    intercepts = []
    sequences = []
    for seq in acyclic_sequences(dataset.T, start=root, cap=cap):
        last = seq[-1]
        path = -sum(weights[a, b] for a, b in zip(seq[:-1], seq[1:]))
        slopes.append(P[last])
        intercepts.append(-expenditure[last] + path + len(seq) * eps_value)
        sequences.append(seq)

    logger.debug("Built rationalizing utility with %d pieces", len(sequences))
    return PiecewiseAffineUtility(
        slopes=np.array(slopes),
        intercepts=np.array(intercepts),
        sequences=tuple(sequences),
    )


def indirect_utility(utility: PiecewiseAffineUtility, price) -> float:
    """V_u(p) = sup_{x >= 0} u(x) - p.x, +inf when unbounded."""
    price = np.atleast_1d(np.asarray(price, dtype=np.float64))
    K = utility.K
    n = K + 1
    # z <= slope_j . x + intercept_j
    rows = np.zeros((len(utility), n))
    rows[:, :K] = -utility.slopes
    rows[:, K] = 1.0
    builder = ProgramBuilder(n).add_le(rows, utility.intercepts)

    objective = np.zeros(n)
    objective[:K] = -price
    objective[K] = 1.0
    nonneg = np.ones(n, dtype=bool)
    nonneg[K] = False
    outcome = solve(builder.build(objective, nonneg=nonneg))
    if outcome.is_unbounded:
        return math.inf
    return outcome.value


def verify_rationalization(utility: PiecewiseAffineUtility, dataset: Dataset, eps: Epsilon | float) -> bool:
    """Check u(x^t) - p^t.x^t >= sup_x {u(x) - p^t.x} - eps for every t."""
    eps_value = float(eps)
    for t in range(dataset.T):
        price, bundle = dataset.prices[t], dataset.quantities[t]
        best = indirect_utility(utility, price)
        if math.isinf(best):
            logger.warning("u(x) - p.x is unbounded at observation %d", t + 1)
            return False
        attained = utility(bundle) - float(price @ bundle)
        if best > attained + eps_value + RATIONALITY_TOL:
            logger.warning(
                "Observation %d misses the optimum by %.6g > eps=%.6g",
                t + 1,
                best - attained,
                eps_value,
            )
            return False
    return True


def dual_utility(indirect: PiecewiseAffineIndirect, bundle) -> float:
    """u_V(x) = inf_{p >= 0} V(p) + p.x, -inf when unbounded below."""
    bundle = np.atleast_1d(np.asarray(bundle, dtype=np.float64))
    K = indirect.K
    n = K + 1
    # slope_j . p + intercept_j <= t
    rows = np.zeros((indirect.slopes.shape[0], n))
    rows[:, :K] = indirect.slopes
    rows[:, K] = -1.0
    builder = ProgramBuilder(n).add_le(rows, -indirect.intercepts)

    objective = np.zeros(n)
    objective[:K] = bundle
    objective[K] = 1.0
    nonneg = np.ones(n, dtype=bool)
    nonneg[K] = False
    outcome = solve_min(builder.build(objective, nonneg=nonneg))
    if outcome.is_unbounded:
        return -math.inf
    return outcome.value


def _indirect_of_dual(indirect: PiecewiseAffineIndirect, price: np.ndarray) -> tuple[float, np.ndarray | None]:
    """sup_{x >= 0} u_V(x) - p.x, with u_V written through its LP dual.

    u_V(x) = max { sum_j lam_j b_j : lam in the simplex, sum_j lam_j a_j + x >= 0 },
    so the sup is one program over (x, lam).
    """
    K = indirect.K
    J = indirect.slopes.shape[0]
    n = K + J
    builder = ProgramBuilder(n)
    rows = np.zeros((K, n))
    rows[:, :K] = -np.eye(K)
    rows[:, K:] = -indirect.slopes.T
    builder.add_le(rows, np.zeros(K))
    simplex = np.zeros(n)
    simplex[K:] = 1.0
    builder.add_eq(simplex, 1.0)

    objective = np.zeros(n)
    objective[:K] = -price
    objective[K:] = indirect.intercepts
    outcome = solve(builder.build(objective))
    if outcome.is_unbounded:
        return math.inf, None
    return outcome.value, outcome.solution[:K]


def dual_roundtrip_check(indirect: PiecewiseAffineIndirect, grid, tol: float = ROUNDTRIP_TOL) -> bool:
    """Check V_{u_V} = V at every grid price."""
    for price in grid:
        price = np.atleast_1d(np.asarray(price, dtype=np.float64))
        value, bundle = _indirect_of_dual(indirect, price)
        target = indirect(price)
        if not abs(value - target) <= tol:
            logger.warning("Round trip differs at p=%s: %.9g vs %.9g", price.tolist(), value, target)
            return False
        # the maximizing bundle must reproduce the value through u_V itself
        through_dual = dual_utility(indirect, bundle) - float(price @ bundle)
        if not abs(through_dual - value) <= tol:
            logger.warning(
                "u_V evaluated at the maximizer disagrees at p=%s: %.9g vs %.9g",
                price.tolist(),
                through_dual,
                value,
            )
            return False
    return True


def check_dual_inequalities(
    utility: PiecewiseAffineUtility,
    dataset: Dataset,
    eps: Epsilon | float,
    grid,
) -> bool:
    """Check V_u(p) >= V_u(p^t) - x^t.(p - p^t) - eps for every t and grid price p."""
    eps_value = float(eps)
    at_data = [indirect_utility(utility, dataset.prices[t]) for t in range(dataset.T)]
    for price in grid:
        price = np.atleast_1d(np.asarray(price, dtype=np.float64))
        value = indirect_utility(utility, price)
        for t, observed in enumerate(at_data):
            bound = observed - float(dataset.quantities[t] @ (price - dataset.prices[t])) - eps_value
            if value < bound - RATIONALITY_TOL:
                logger.warning("Dual inequality fails at p=%s for observation %d", price.tolist(), t + 1)
                return False
    return True
