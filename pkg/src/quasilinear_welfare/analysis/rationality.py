"""Minimal approximation error of a dataset and epsilon-rationalizability.

epsilon* is computed three independent ways: the Afriat-style linear program,
Karp's maximum-mean-cycle algorithm on the observation digraph, and brute-force
enumeration of simple cycles (a test oracle).
"""

from dataclasses import dataclass

import numpy as np

from quasilinear_welfare.common.logging import get_logger
from quasilinear_welfare.common.sequences import DEFAULT_CYCLE_CAP, simple_cycles
from quasilinear_welfare.domain.model import Dataset, Epsilon, ensure_valid
from quasilinear_welfare.optimize.lp import ProgramBuilder, SolverError, solve_min

logger = get_logger(__name__)

RATIONALITY_TOL = 1e-7


@dataclass(frozen=True)
class CycleCertificate:
    """A directed cycle of observations attaining the maximum mean weight.

    `sequence` holds distinct 0-based indices; the edge t_M -> t_1 closes it.
    """

    sequence: tuple[int, ...]
    mean_weight: float

    def __len__(self) -> int:
        return len(self.sequence)


def edge_weights(dataset: Dataset) -> np.ndarray:
    """w[r, s] = p^r . (x^r - x^s), the cost of moving from observation r to s."""
    expenditure = np.einsum("rk,rk->r", dataset.prices, dataset.quantities)
    return expenditure[:, None] - dataset.prices @ dataset.quantities.T


def cycle_mean(dataset: Dataset, sequence) -> float:
    """Mean edge weight of the closed cycle through `sequence`."""
    weights = edge_weights(dataset)
    seq = list(sequence)
    following = seq[1:] + seq[:1]
    return float(np.mean([weights[r, s] for r, s in zip(seq, following)]))


def epsilon_star_lp(dataset: Dataset) -> Epsilon:
    """Smallest eps >= 0 with u^s <= u^r + p^r.(x^s - x^r) + eps for all r, s.

    Solved as: minimize eps over (u^1..u^T >= 0, eps >= 0).
    """
    ensure_valid(dataset)
    T = dataset.T
    if T == 1:
        return Epsilon(0.0)

    weights = edge_weights(dataset)
    builder = ProgramBuilder(T + 1)
    rows = []
    rhs = []
    for r in range(T):
        for s in range(T):
            if r == s:
                continue
            row = np.zeros(T + 1)
            row[s] += 1.0
            row[r] -= 1.0
            row[T] = -1.0
            rows.append(row)
            rhs.append(-weights[r, s])
    builder.add_le(np.array(rows), np.array(rhs))

    objective = np.zeros(T + 1)
    objective[T] = 1.0
    outcome = solve_min(builder.build(objective))
    if not outcome.is_optimal:
        raise SolverError(f"epsilon* program returned {outcome}; it is always feasible and bounded")

    value = max(0.0, outcome.value)
    logger.debug("epsilon* (LP) = %.12g for %s", value, dataset)
    return Epsilon(value)


def _karp_tables(weights: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Longest walks of exactly k edges from a virtual source joined to every node."""
    n = weights.shape[0]
    best = np.full((n + 1, n), -np.inf)
    parent = np.zeros((n + 1, n), dtype=int)
    best[0] = 0.0
    for k in range(1, n + 1):
        candidates = best[k - 1][:, None] + weights
        parent[k] = np.argmax(candidates, axis=0)
        best[k] = candidates[parent[k], np.arange(n)]
    return best, parent


def _cycle_on_walk(parent: np.ndarray, end: int) -> tuple[int, ...]:
    """Trace the n-edge walk ending at `end` and return the last cycle on it."""
    n = parent.shape[1]
    walk = [end]
    node = end
    for k in range(n, 0, -1):
        node = int(parent[k, node])
        walk.append(node)
    walk.reverse()

    seen: dict[int, int] = {}
    cycle: list[int] = []
    for position, node in enumerate(walk):
        if node in seen:
            cycle = walk[seen[node]:position]
        seen[node] = position
    return tuple(cycle)


def _canonical(cycle: tuple[int, ...]) -> tuple[int, ...]:
    start = cycle.index(min(cycle))
    return cycle[start:] + cycle[:start]


def epsilon_star_cycles(dataset: Dataset) -> tuple[Epsilon, CycleCertificate | None]:
    """epsilon* as the clamped maximum mean cycle of the observation digraph.

    Karp's recurrence runs on the complete digraph without self-loops.

    Returns:
        (epsilon*, certificate); the certificate is None when every cycle mean
        is <= 0 and epsilon* = 0 by clamping
    """
    ensure_valid(dataset)
    T = dataset.T
    if T == 1:
        return Epsilon(0.0), None

    weights = edge_weights(dataset)
    np.fill_diagonal(weights, -np.inf)
    best, parent = _karp_tables(weights)

    with np.errstate(invalid="ignore"):
        gaps = (best[T][None, :] - best[:T]) / (T - np.arange(T))[:, None]
    gaps = np.where(np.isfinite(best[:T]), gaps, np.inf)
    per_node = gaps.min(axis=0)
    max_mean = float(per_node.max())

    if max_mean <= 0.0:
        return Epsilon(0.0), None

    certificate = None
    for end in np.argsort(-per_node, kind="stable"):
        cycle = _cycle_on_walk(parent, int(end))
        if len(cycle) < 2:
            continue
        mean = cycle_mean(dataset, cycle)
        if certificate is None or mean > certificate.mean_weight:
            certificate = CycleCertificate(sequence=_canonical(cycle), mean_weight=mean)
        if mean >= max_mean - 1e-9 * (1.0 + abs(max_mean)):
            break

    if certificate is not None and abs(certificate.mean_weight - max_mean) > 1e-9 * (1.0 + abs(max_mean)):
        logger.warning(
            "Karp certificate mean %.12g differs from max mean %.12g",
            certificate.mean_weight,
            max_mean,
        )
    logger.debug("epsilon* (Karp) = %.12g for %s", max_mean, dataset)
    return Epsilon(max_mean), certificate


def epsilon_star_bruteforce(dataset: Dataset, cap: int = DEFAULT_CYCLE_CAP) -> Epsilon:
    """Exhaustive maximum over all simple cycles (test oracle only).

    Raises:
        OracleCapError: T exceeds cap
    """
    ensure_valid(dataset)
    weights = edge_weights(dataset)
    best = 0.0
    for cycle in simple_cycles(dataset.T, cap=cap):
        following = cycle[1:] + cycle[:1]
        mean = sum(weights[r, s] for r, s in zip(cycle, following)) / len(cycle)
        best = max(best, mean)
    return Epsilon(float(best))


def is_rationalizable(dataset: Dataset, eps: Epsilon | float) -> bool:
    """True iff eps >= epsilon*(D) - 1e-7."""
    return float(eps) >= epsilon_star_lp(dataset).value - RATIONALITY_TOL
