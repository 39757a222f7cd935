"""Counterfactual demand at a new price: membership, finiteness and extremal bounds."""

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
from quasilinear_welfare.domain.model import (
    BoundInterval,
    CandidatePoint,
    Dataset,
    Epsilon,
    augment,
    ensure_price,
    ensure_valid,
)
from quasilinear_welfare.optimize.lp import (
    LinearProgram,
    ProgramBuilder,
    SolveOutcome,
    SolverError,
    solve,
    solve_min,
)

logger = get_logger(__name__)

FINITENESS_TOL = 1e-9


@dataclass(frozen=True)
class ExpenditureConstraint:
    """Extra restrictions on the counterfactual bundle.

    m_low <= p~.x~ <= m_high, and box_low <= x~ <= box_high per good. Any
    part may be omitted.
    """

    m_low: float | None = None
    m_high: float | None = None
    box_low: tuple[float, ...] | None = None
    box_high: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.m_low is not None and self.m_high is not None and self.m_low > self.m_high:
            raise ValueError(f"m_low {self.m_low} exceeds m_high {self.m_high}")
        for name in ("box_low", "box_high"):
            box = getattr(self, name)
            if box is not None and any(b < 0 for b in box):
                raise ValueError(f"{name} must be nonnegative")


@dataclass(frozen=True, eq=False)
class HalfspaceSystem:
    """Halfspaces normal . x~ <= offset (plus x~ >= 0), one per acyclic sequence."""

    normals: np.ndarray
    offsets: np.ndarray
    sequences: tuple[tuple[int, ...], ...] = field(default=())

    def __len__(self) -> int:
        return self.offsets.shape[0]

    def contains(self, bundle, tol: float = RATIONALITY_TOL) -> bool:
        bundle = np.asarray(bundle, dtype=np.float64)
        if np.any(bundle < -tol):
            return False
        return bool(np.all(self.normals @ bundle <= self.offsets + tol))

    def linear_bounds(self, direction) -> BoundInterval:
        """min / max of direction . x~ over the system by LP."""
        direction = np.asarray(direction, dtype=np.float64)
        builder = ProgramBuilder(direction.shape[0]).add_le(self.normals, self.offsets)
        program = builder.build(direction)
        return _interval_from(solve_min(program), solve(program), nonneg_objective=bool(np.all(direction >= 0)))

    def extrema(self, k: int) -> BoundInterval:
        direction = np.zeros(self.normals.shape[1])
        direction[k] = 1.0
        return self.linear_bounds(direction)


def resolve_epsilon(
    dataset: Dataset,
    eps: Epsilon | float | None,
    eps_star: float | None = None,
) -> tuple[float, float]:
    """Return (eps to use, epsilon*); eps defaults to epsilon* (adaptive).

    A precomputed epsilon* may be passed to skip the extra solve.
    """
    if eps_star is None:
        eps_star = epsilon_star_lp(dataset).value
    if eps is None:
        return eps_star, eps_star
    return float(eps), eps_star


def _interval_from(low: SolveOutcome, high: SolveOutcome, nonneg_objective: bool) -> BoundInterval:
    if low.is_infeasible or high.is_infeasible:
        return BoundInterval.infeasible("constraint set is empty")

    lower = low.value if low.is_optimal else -math.inf
    upper = high.value if high.is_optimal else math.inf
    if nonneg_objective and lower < 0.0:
        lower = 0.0
    if lower > upper:
        # solver noise on a degenerate (single-point) set
        lower = upper = 0.5 * (lower + upper)
    return BoundInterval(lower=lower, upper=upper)


def member(dataset: Dataset, eps: Epsilon | float, candidate: CandidatePoint) -> bool:
    """True iff epsilon*(D + candidate) <= eps + 1e-7."""
    augmented = augment(dataset, candidate)
    return epsilon_star_lp(augmented).value <= float(eps) + RATIONALITY_TOL


def _counterfactual_program(
    dataset: Dataset,
    eps: float,
    price: np.ndarray,
    extra: ExpenditureConstraint | None,
) -> ProgramBuilder:
    """Compact program over (x~ in R^K_+, u^1..u^T >= 0, u~ >= 0)."""
    T, K = dataset.T, dataset.K
    P, X = dataset.prices, dataset.quantities
    n = K + T + 1
    u0, u_tilde = K, K + T
    weights = edge_weights(dataset)
    expenditure = np.einsum("rk,rk->r", P, X)
    builder = ProgramBuilder(n)

    # u^s <= u^r + p^r.(x^s - x^r) + eps
    pairs = [(r, s) for r in range(T) for s in range(T) if r != s]
    if pairs:
        rows = np.zeros((len(pairs), n))
        rhs = np.empty(len(pairs))
        for i, (r, s) in enumerate(pairs):
            rows[i, u0 + s] += 1.0
            rows[i, u0 + r] -= 1.0
            rhs[i] = eps - weights[r, s]
        builder.add_le(rows, rhs)

    # u~ <= u^r + p^r.(x~ - x^r) + eps
    rows = np.zeros((T, n))
    rows[:, :K] = -P
    rows[np.arange(T), u0 + np.arange(T)] = -1.0
    rows[:, u_tilde] = 1.0
    builder.add_le(rows, eps - expenditure)

    # u^r <= u~ + p~.(x^r - x~) + eps
    rows = np.zeros((T, n))
    rows[:, :K] = price
    rows[np.arange(T), u0 + np.arange(T)] = 1.0
    rows[:, u_tilde] = -1.0
    builder.add_le(rows, eps + X @ price)

    if extra is not None:
        _append_extra(builder, extra, price, K, n)
    return builder


def _append_extra(builder: ProgramBuilder, extra: ExpenditureConstraint, price: np.ndarray, K: int, n: int) -> None:
    spend = np.zeros(n)
    spend[:K] = price
    if extra.m_high is not None:
        builder.add_le(spend, extra.m_high)
    if extra.m_low is not None:
        builder.add_ge(spend, extra.m_low)
    for box, sign in ((extra.box_high, 1.0), (extra.box_low, -1.0)):
        if box is None:
            continue
        if len(box) != K:
            raise ValueError(f"box bounds have {len(box)} entries, expected {K}")
        rows = np.zeros((K, n))
        rows[np.arange(K), np.arange(K)] = sign
        builder.add_le(rows, sign * np.asarray(box, dtype=np.float64))


def _linear_bounds(
    dataset: Dataset,
    eps: Epsilon | float | None,
    price,
    direction: np.ndarray,
    extra: ExpenditureConstraint | None,
    eps_star: float | None = None,
) -> BoundInterval:
    ensure_valid(dataset)
    price = ensure_price(price, dataset.K)
    eps_value, eps_star = resolve_epsilon(dataset, eps, eps_star)

    if eps_value < eps_star - RATIONALITY_TOL:
        logger.debug("eps=%.6g below epsilon*=%.6g: counterfactual set is empty", eps_value, eps_star)
        return BoundInterval.infeasible(f"eps below epsilon*={eps_star:.12g}")
    # eps within tolerance of epsilon* is solved at epsilon*
    eps_value = max(eps_value, eps_star)

    builder = _counterfactual_program(dataset, eps_value, price, extra)
    objective = np.zeros(builder.n_vars)
    objective[: dataset.K] = direction
    program: LinearProgram = builder.build(objective)

    high = solve(program)
    low = solve_min(program)
    interval = _interval_from(low, high, nonneg_objective=bool(np.all(direction >= 0)))
    if extra is None and not interval.is_feasible:
        logger.warning("Counterfactual program infeasible at eps=%.12g >= epsilon*", eps_value)
    return interval


def quantity_bounds(
    dataset: Dataset,
    eps: Epsilon | float | None,
    price,
    k: int,
    extra: ExpenditureConstraint | None = None,
    eps_star: float | None = None,
) -> BoundInterval:
    """Sharp bounds on x~_k over the counterfactual set X(p~, D, eps).

    Args:
        dataset: Observed data
        eps: Approximation error; None means epsilon*(D)
        price: Counterfactual price p~ (K-vector, strictly positive)
        k: 0-based good index
        extra: Optional expenditure / box restrictions
        eps_star: Precomputed epsilon*(D), if available

    Returns:
        BoundInterval with upper = inf when x~_k is unbounded above; Infeasible
        when eps < epsilon* or the extra restrictions empty the set
    """
    if not 0 <= k < dataset.K:
        raise IndexError(f"good index {k} out of range for K={dataset.K}")
    direction = np.zeros(dataset.K)
    direction[k] = 1.0
    return _linear_bounds(dataset, eps, price, direction, extra, eps_star)


def expenditure_bounds(
    dataset: Dataset,
    eps: Epsilon | float | None,
    price,
    extra: ExpenditureConstraint | None = None,
    eps_star: float | None = None,
) -> BoundInterval:
    """Sharp bounds on the expenditure p~.x~ over the counterfactual set."""
    price = ensure_price(price, dataset.K)
    return _linear_bounds(dataset, eps, price, price, extra, eps_star)


def sweep_quantity_bounds(
    dataset: Dataset,
    price,
    k: int,
    eps_values: list[float],
    extra: ExpenditureConstraint | None = None,
) -> list[BoundInterval]:
    """quantity_bounds for each eps in eps_values (entries below epsilon* are Infeasible)."""
    eps_star = epsilon_star_lp(dataset).value
    return [quantity_bounds(dataset, eps, price, k, extra, eps_star) for eps in eps_values]


def halfspace_system(
    dataset: Dataset,
    eps: Epsilon | float,
    price,
    cap: int = DEFAULT_SEQUENCE_CAP,
) -> HalfspaceSystem:
    """Enumerate the polyhedron X(p~, D, eps): one halfspace per acyclic sequence.

    For t_1..t_M the halfspace is
    (p~ - p^{t_M}).x~ <= (M+1) eps + p~.x^{t_1} - p^{t_M}.x^{t_M}
                         - sum_{m<M} p^{t_m}.(x^{t_m} - x^{t_{m+1}}).

    Raises:
        OracleCapError: T exceeds cap
    """
    ensure_valid(dataset)
    price = ensure_price(price, dataset.K)
    eps_value = float(eps)
    P, X = dataset.prices, dataset.quantities
    weights = edge_weights(dataset)
    expenditure = np.einsum("rk,rk->r", P, X)

    normals = []
    offsets = []
    sequences = []
    for seq in acyclic_sequences(dataset.T, cap=cap):
        first, last = seq[0], seq[-1]
        path = sum(weights[a, b] for a, b in zip(seq[:-1], seq[1:]))
        normals.append(price - P[last])
        offsets.append((len(seq) + 1) * eps_value + price @ X[first] - expenditure[last] - path)
        sequences.append(seq)

    return HalfspaceSystem(
        normals=np.array(normals),
        offsets=np.array(offsets),
        sequences=tuple(sequences),
    )


def cco_margin(prices: np.ndarray, price) -> float:
    """Largest delta with p~ >= sum_t alpha_t p^t + delta componentwise, alpha in the simplex.

    delta > 0 iff p~ is interior to the upper comprehensive convex hull of
    the rows of `prices`; delta >= 0 iff p~ belongs to it.
    """
    prices = np.atleast_2d(np.asarray(prices, dtype=np.float64))
    price = np.atleast_1d(np.asarray(price, dtype=np.float64))
    T, K = prices.shape
    n = T + 1
    builder = ProgramBuilder(n)
    rows = np.zeros((K, n))
    rows[:, :T] = prices.T
    rows[:, T] = 1.0
    builder.add_le(rows, price)
    simplex = np.zeros(n)
    simplex[:T] = 1.0
    builder.add_eq(simplex, 1.0)

    objective = np.zeros(n)
    objective[T] = 1.0
    nonneg = np.ones(n, dtype=bool)
    nonneg[T] = False
    outcome = solve(builder.build(objective, nonneg=nonneg))
    if not outcome.is_optimal:
        raise SolverError(f"dominance program returned {outcome}")
    return outcome.value


def in_cco(prices: np.ndarray, price, tol: float = FINITENESS_TOL) -> bool:
    return cco_margin(prices, price) >= -tol


def upper_bound_finite(dataset: Dataset, price) -> bool:
    """True iff p~ lies in the interior of CCo({p^t}), i.e. the upper bound is finite."""
    ensure_valid(dataset)
    price = ensure_price(price, dataset.K)
    return cco_margin(dataset.prices, price) > FINITENESS_TOL


def quantity_upper(
    dataset: Dataset,
    eps: Epsilon | float | None,
    price,
    k: int,
    eps_star: float | None = None,
) -> float:
    """Upper bound on x~_k alone (one solve instead of two); nan when the set is empty."""
    ensure_valid(dataset)
    price = ensure_price(price, dataset.K)
    eps_value, eps_star = resolve_epsilon(dataset, eps, eps_star)
    if eps_value < eps_star - RATIONALITY_TOL:
        return math.nan

    builder = _counterfactual_program(dataset, max(eps_value, eps_star), price, None)
    objective = np.zeros(builder.n_vars)
    objective[k] = 1.0
    outcome = solve(builder.build(objective))
    if outcome.is_unbounded:
        return math.inf
    if outcome.is_infeasible:
        return math.nan
    return outcome.value
