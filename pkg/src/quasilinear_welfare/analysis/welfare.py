"""Bounds on utility differences between bundles and on approximate indirect utility changes."""

import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

from quasilinear_welfare.analysis.counterfactual import (
    cco_margin,
    quantity_bounds,
    quantity_upper,
    resolve_epsilon,
)
from quasilinear_welfare.analysis.rationality import RATIONALITY_TOL, edge_weights
from quasilinear_welfare.common.logging import get_logger
from quasilinear_welfare.common.sequences import DEFAULT_SEQUENCE_CAP, acyclic_sequences
from quasilinear_welfare.domain.model import (
    BUNDLE_TOL,
    BoundInterval,
    Dataset,
    Epsilon,
    ensure_bundle,
    ensure_price,
    ensure_valid,
)
from quasilinear_welfare.optimize.lp import ProgramBuilder, SolveOutcome, solve, solve_min

logger = get_logger(__name__)

EXACT_RATIONALITY_TOL = 1e-9


@dataclass(frozen=True)
class SequenceBound:
    """An extremal value over acyclic sequences and the sequence attaining it."""

    value: float
    sequence: tuple[int, ...]


@dataclass(frozen=True, eq=False)
class WelfareQuery:
    """A price change from p0 to p1; eps None means epsilon* (adaptive)."""

    p1: np.ndarray
    p0: np.ndarray
    eps: Epsilon | float | None = None

    def __post_init__(self):
        object.__setattr__(self, "p1", np.atleast_1d(np.asarray(self.p1, dtype=np.float64)))
        object.__setattr__(self, "p0", np.atleast_1d(np.asarray(self.p0, dtype=np.float64)))
        if np.any(self.p1 <= 0) or np.any(self.p0 <= 0):
            raise ValueError("welfare query prices must be strictly positive")

    def reversed(self) -> "WelfareQuery":
        return WelfareQuery(p1=self.p0, p0=self.p1, eps=self.eps)


class WelfareRegion(str, Enum):
    GUARANTEED_FINITE = "guaranteed_finite"
    GUARANTEED_INFINITE = "guaranteed_infinite"
    UNDETERMINED = "undetermined"


@dataclass(frozen=True)
class WelfareBounds:
    """Bounds on V(p1) - V(p0) and where p1 sits relative to the finiteness results."""

    interval: BoundInterval
    region: WelfareRegion

    @property
    def lower(self) -> float:
        return self.interval.lower

    @property
    def upper(self) -> float:
        return self.interval.upper


def _value_or_inf(outcome: SolveOutcome, sign: float) -> float:
    if outcome.is_unbounded:
        return sign * math.inf
    return outcome.value


def _pairwise_block(dataset: Dataset, eps: float, n: int, u0: int) -> tuple[np.ndarray, np.ndarray]:
    """Rows for u^s - u^r <= p^r.(x^s - x^r) + eps with u^t stored at column u0 + t."""
    T = dataset.T
    weights = edge_weights(dataset)
    pairs = [(r, s) for r in range(T) for s in range(T) if r != s]
    rows = np.zeros((len(pairs), n))
    rhs = np.empty(len(pairs))
    for i, (r, s) in enumerate(pairs):
        rows[i, u0 + s] += 1.0
        rows[i, u0 + r] -= 1.0
        rhs[i] = eps - weights[r, s]
    return rows, rhs


def _unchosen_bundle_program(dataset: Dataset, eps: float, bundle: np.ndarray, ties: list[int]) -> ProgramBuilder:
    """Variables (u^1..u^T, u~) for a bundle not chosen at any observed price."""
    T = dataset.T
    P, X = dataset.prices, dataset.quantities
    n = T + 1
    builder = ProgramBuilder(n)
    if T > 1:
        builder.add_le(*_pairwise_block(dataset, eps, n, 0))

    # u~ <= u^r + p^r.(x~ - x^r) + eps
    rows = np.zeros((T, n))
    rows[np.arange(T), np.arange(T)] = -1.0
    rows[:, T] = 1.0
    builder.add_le(rows, eps + P @ bundle - np.einsum("rk,rk->r", P, X))

    for r in ties:
        row = np.zeros(n)
        row[T] = 1.0
        row[r] = -1.0
        builder.add_eq(row, 0.0)
    return builder


def utility_diff_bounds(
    dataset: Dataset,
    eps: Epsilon | float | None,
    x1,
    x0,
    eps_star: float | None = None,
    tol: float = BUNDLE_TOL,
) -> BoundInterval:
    """Bounds on u(x1) - u(x0) over utilities eps-rationalizing the data.

    The upper bound is finite only when x0 is an observed bundle and the lower
    bound only when x1 is; otherwise they are +inf / -inf.
    """
    ensure_valid(dataset)
    x1 = ensure_bundle(x1, dataset.K)
    x0 = ensure_bundle(x0, dataset.K)
    eps_value, eps_star = resolve_epsilon(dataset, eps, eps_star)
    if eps_value < eps_star - RATIONALITY_TOL:
        return BoundInterval.infeasible(f"eps below epsilon*={eps_star:.12g}")
    eps_value = max(eps_value, eps_star)

    if np.all(np.abs(x1 - x0) <= tol):
        return BoundInterval(lower=0.0, upper=0.0)

    start_rows = dataset.matching_rows(x0, tol)
    final_rows = dataset.matching_rows(x1, tol)
    T = dataset.T

    upper = math.inf
    if start_rows:
        S = start_rows[0]
        builder = _unchosen_bundle_program(dataset, eps_value, x1, final_rows)
        for r in start_rows[1:]:
            row = np.zeros(T + 1)
            row[S], row[r] = 1.0, -1.0
            builder.add_eq(row, 0.0)
        objective = np.zeros(T + 1)
        objective[T], objective[S] = 1.0, -1.0
        upper = _value_or_inf(solve(builder.build(objective)), 1.0)

    lower = -math.inf
    if final_rows:
        F = final_rows[0]
        builder = _unchosen_bundle_program(dataset, eps_value, x0, start_rows)
        for r in final_rows[1:]:
            row = np.zeros(T + 1)
            row[F], row[r] = 1.0, -1.0
            builder.add_eq(row, 0.0)
        objective = np.zeros(T + 1)
        objective[F], objective[T] = 1.0, -1.0
        lower = _value_or_inf(solve_min(builder.build(objective)), -1.0)

    if lower > upper:
        lower = upper = 0.5 * (lower + upper)
    return BoundInterval(lower=lower, upper=upper)


def utility_diff_upper_sequences(
    dataset: Dataset,
    eps: Epsilon | float,
    x1,
    start: int,
    cap: int = DEFAULT_SEQUENCE_CAP,
) -> SequenceBound:
    """min over acyclic sequences from `start` of
    p^{s_M}.(x1 - x^{s_M}) + sum_{m<M} p^{s_m}.(x^{s_{m+1}} - x^{s_m}) + M eps.
    """
    ensure_valid(dataset)
    x1 = ensure_bundle(x1, dataset.K)
    if np.all(np.abs(x1 - dataset.quantities[start]) <= BUNDLE_TOL):
        raise ValueError("x1 equals the starting bundle; the difference is 0")
    eps_value = float(eps)
    P, X = dataset.prices, dataset.quantities
    weights = edge_weights(dataset)

    best: SequenceBound | None = None
    for seq in acyclic_sequences(dataset.T, start=start, cap=cap):
        last = seq[-1]
        path = -sum(weights[a, b] for a, b in zip(seq[:-1], seq[1:]))
        value = float(P[last] @ (x1 - X[last]) + path + len(seq) * eps_value)
        if best is None or value < best.value:
            best = SequenceBound(value=value, sequence=seq)
    return best


def utility_diff_lower_sequences(
    dataset: Dataset,
    eps: Epsilon | float,
    x0,
    final: int,
    cap: int = DEFAULT_SEQUENCE_CAP,
) -> SequenceBound:
    """max over acyclic sequences from `final` of
    p^{s_M}.(x^{s_M} - x0) + sum_{m<M} p^{s_m}.(x^{s_m} - x^{s_{m+1}}) - M eps.
    """
    ensure_valid(dataset)
    x0 = ensure_bundle(x0, dataset.K)
    if np.all(np.abs(x0 - dataset.quantities[final]) <= BUNDLE_TOL):
        raise ValueError("x0 equals the final bundle; the difference is 0")
    eps_value = float(eps)
    P, X = dataset.prices, dataset.quantities
    weights = edge_weights(dataset)

    best: SequenceBound | None = None
    for seq in acyclic_sequences(dataset.T, start=final, cap=cap):
        last = seq[-1]
        path = sum(weights[a, b] for a, b in zip(seq[:-1], seq[1:]))
        value = float(P[last] @ (X[last] - x0) + path - len(seq) * eps_value)
        if best is None or value > best.value:
            best = SequenceBound(value=value, sequence=seq)
    return best


def welfare_region(dataset: Dataset, p1, p0) -> WelfareRegion:
    """Locate p1 relative to CCo({p^t}) and CCo({p^t} + {p0})."""
    p1 = ensure_price(p1, dataset.K)
    p0 = ensure_price(p0, dataset.K)
    if cco_margin(dataset.prices, p1) >= -1e-9:
        return WelfareRegion.GUARANTEED_FINITE
    extended = np.vstack([dataset.prices, p0.reshape(1, -1)])
    if cco_margin(extended, p1) < -1e-9:
        return WelfareRegion.GUARANTEED_INFINITE
    return WelfareRegion.UNDETERMINED


def _indirect_program(dataset: Dataset, eps: float, p1: np.ndarray, p0: np.ndarray) -> tuple[ProgramBuilder, np.ndarray]:
    """Program over (x_a, x_b in R^K_+, u^1..u^T, u_a, u_b >= 0).

    (x_a, u_a) is the choice at p0 and (x_b, u_b) the choice at p1.
    """
    T, K = dataset.T, dataset.K
    P, X = dataset.prices, dataset.quantities
    expenditure = np.einsum("rk,rk->r", P, X)
    xa, xb, u0 = slice(0, K), slice(K, 2 * K), 2 * K
    ua, ub = 2 * K + T, 2 * K + T + 1
    n = 2 * K + T + 2
    idx = np.arange(T)
    builder = ProgramBuilder(n)

    if T > 1:
        builder.add_le(*_pairwise_block(dataset, eps, n, u0))

    # u_a <= u^r + p^r.(x_a - x^r) + eps, same for u_b
    for bundle, level in ((xa, ua), (xb, ub)):
        rows = np.zeros((T, n))
        rows[:, bundle] = -P
        rows[idx, u0 + idx] = -1.0
        rows[:, level] = 1.0
        builder.add_le(rows, eps - expenditure)

    # u^r <= u_a + p0.(x^r - x_a) + eps, same for u_b at p1
    for bundle, level, price in ((xa, ua, p0), (xb, ub, p1)):
        rows = np.zeros((T, n))
        rows[:, bundle] = price
        rows[idx, u0 + idx] = 1.0
        rows[:, level] = -1.0
        builder.add_le(rows, eps + X @ price)

    # u_a <= u_b + p1.(x_a - x_b) + eps
    row = np.zeros(n)
    row[ua], row[ub] = 1.0, -1.0
    row[xa], row[xb] = -p1, p1
    builder.add_le(row, eps)

    # u_b <= u_a + p0.(x_b - x_a) + eps
    row = np.zeros(n)
    row[ub], row[ua] = 1.0, -1.0
    row[xb], row[xa] = -p0, p0
    builder.add_le(row, eps)

    objective = np.zeros(n)
    objective[ub], objective[ua] = 1.0, -1.0
    objective[xb], objective[xa] = -p1, p0
    return builder, objective


def indirect_diff_bounds(
    dataset: Dataset,
    query: WelfareQuery,
    eps_star: float | None = None,
) -> WelfareBounds:
    """Bounds on the change in approximate indirect utility from p0 to p1.

    No constraint ties the bundle at p1 to observed data even when p1 is an
    observed price: observed choices are only eps-optimal.
    """
    ensure_valid(dataset)
    p1 = ensure_price(query.p1, dataset.K)
    p0 = ensure_price(query.p0, dataset.K)
    eps_value, eps_star = resolve_epsilon(dataset, query.eps, eps_star)
    region = welfare_region(dataset, p1, p0)

    if eps_value < eps_star - RATIONALITY_TOL:
        return WelfareBounds(BoundInterval.infeasible(f"eps below epsilon*={eps_star:.12g}"), region)
    eps_value = max(eps_value, eps_star)

    builder, objective = _indirect_program(dataset, eps_value, p1, p0)
    program = builder.build(objective)
    high = solve(program)
    low = solve_min(program)

    if high.is_infeasible or low.is_infeasible:
        logger.warning("Welfare program infeasible at eps=%.12g >= epsilon*", eps_value)
        return WelfareBounds(BoundInterval.infeasible("welfare program infeasible"), region)

    upper = _value_or_inf(high, 1.0)
    lower = _value_or_inf(low, -1.0)
    if region is WelfareRegion.UNDETERMINED:
        logger.warning(
            "p1=%s lies outside the guaranteed-finite region; upper bound reported as %s",
            p1.tolist(),
            upper,
        )
    elif region is WelfareRegion.GUARANTEED_INFINITE and math.isfinite(upper):
        logger.error("Upper welfare bound %.12g finite where it must be infinite", upper)
    elif region is WelfareRegion.GUARANTEED_FINITE and not math.isfinite(upper):
        logger.error("Upper welfare bound infinite where it must be finite")

    if lower > upper:
        lower = upper = 0.5 * (lower + upper)
    return WelfareBounds(BoundInterval(lower=lower, upper=upper), region)


def h_function(
    dataset: Dataset,
    eps: Epsilon | float,
    start: int,
    p0,
    cap: int = DEFAULT_SEQUENCE_CAP,
) -> SequenceBound:
    """Discrete surplus: min over acyclic sequences from `start` of
    x^{s_M}.(p0 - p^{s_M}) + sum_{m<M} x^{s_m}.(p^{s_{m+1}} - p^{s_m}) + M eps.

    With p1 = p^start, h - eps <= upper welfare bound <= h + eps.
    """
    ensure_valid(dataset)
    p0 = ensure_price(p0, dataset.K)
    eps_value = float(eps)
    P, X = dataset.prices, dataset.quantities

    best: SequenceBound | None = None
    for seq in acyclic_sequences(dataset.T, start=start, cap=cap):
        last = seq[-1]
        path = sum(float(X[a] @ (P[b] - P[a])) for a, b in zip(seq[:-1], seq[1:]))
        value = float(X[last] @ (p0 - P[last]) + path + len(seq) * eps_value)
        if best is None or value < best.value:
            best = SequenceBound(value=value, sequence=seq)
    return best


def surplus_integral(
    dataset: Dataset,
    p1: float,
    p0: float,
    n_steps: int = 1000,
    demand: str = "upper",
) -> float:
    """Trapezoidal consumer-surplus integral of a demand bound along p0 -> p1.

    Approximates the integral over t in [0, 1] of
    x(t p1 + (1 - t) p0, eps=0) (p0 - p1) dt for a single good and exactly
    rationalizable data, where x is the upper (`demand="upper"`) or lower
    demand bound. The welfare bound it reproduces depends on the direction of
    the change: for p1 < p0 the upper demand bound gives the upper welfare
    bound, for p1 > p0 it gives the lower welfare bound and the lower demand
    bound gives the upper one.

    Raises:
        ValueError: K != 1, epsilon* > 0, or p1 <= min(observed prices, p0)
            with the upper demand bound
    """
    ensure_valid(dataset)
    if dataset.K != 1:
        raise ValueError(f"surplus integral needs a single good, got K={dataset.K}")
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if demand not in ("upper", "lower"):
        raise ValueError(f"demand must be 'upper' or 'lower', got {demand!r}")
    p1, p0 = float(p1), float(p0)
    _, eps_star = resolve_epsilon(dataset, 0.0)
    if eps_star > EXACT_RATIONALITY_TOL:
        raise ValueError(f"surplus integral needs exactly rationalizable data, epsilon*={eps_star:.3g}")
    if demand == "upper" and not p1 > min(float(dataset.prices.min()), p0):
        raise ValueError("p1 must exceed min(observed prices, p0)")
    if p1 == p0:
        return 0.0

    grid = np.linspace(0.0, 1.0, n_steps + 1)
    path = grid * p1 + (1.0 - grid) * p0
    if demand == "upper":
        values = [quantity_upper(dataset, 0.0, [p], 0, eps_star) for p in path]
    else:
        values = [quantity_bounds(dataset, 0.0, [p], 0, eps_star=eps_star).lower for p in path]
    return float(np.trapezoid(np.array(values), grid) * (p0 - p1))
