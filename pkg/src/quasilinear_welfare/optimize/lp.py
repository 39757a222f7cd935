"""Dense linear programs and a two-phase simplex solver.

Every bound in the package reduces to calls into `solve` / `solve_min`.
The solver is a dense tableau simplex with Bland's rule, so identical
programs always produce identical outcomes.
"""

from dataclasses import dataclass
from enum import Enum

import numpy as np

from quasilinear_welfare.common.logging import get_logger

logger = get_logger(__name__)


class MalformedProgramError(ValueError):
    """Raised when a LinearProgram has inconsistent dimensions."""

    pass


class SolverError(RuntimeError):
    """Raised when the simplex iteration limit is exceeded."""

    pass


@dataclass(frozen=True)
class SolverConfig:
    """Solver tolerances."""

    feasibility_tol: float = 1e-9
    optimality_tol: float = 1e-9
    pivot_tol: float = 1e-9
    value_tol: float = 1e-7
    max_iterations: int = 50_000


DEFAULT_CONFIG = SolverConfig()


class Relation(str, Enum):
    LE = "<="
    EQ = "="


@dataclass(frozen=True, eq=False)
class Constraint:
    row: np.ndarray
    relation: Relation
    rhs: float


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """maximize objective . x subject to a_ub x <= b_ub, a_eq x = b_eq.

    `nonneg[j]` marks x_j >= 0; unmarked variables are free.
    """

    objective: np.ndarray
    a_ub: np.ndarray
    b_ub: np.ndarray
    a_eq: np.ndarray
    b_eq: np.ndarray
    nonneg: np.ndarray

    @property
    def n_vars(self) -> int:
        return int(np.asarray(self.objective).shape[0])

    @property
    def constraints(self) -> tuple[Constraint, ...]:
        ub = (Constraint(row, Relation.LE, float(rhs)) for row, rhs in zip(self.a_ub, self.b_ub))
        eq = (Constraint(row, Relation.EQ, float(rhs)) for row, rhs in zip(self.a_eq, self.b_eq))
        return (*ub, *eq)

    @classmethod
    def from_constraints(
        cls,
        objective,
        constraints: list[Constraint],
        nonneg=True,
    ) -> "LinearProgram":
        """Build a program from a list of (row, relation, rhs) constraints."""
        objective = np.asarray(objective, dtype=np.float64)
        n = objective.shape[0]
        ub = [c for c in constraints if c.relation is Relation.LE]
        eq = [c for c in constraints if c.relation is Relation.EQ]
        for c in constraints:
            if np.asarray(c.row).shape != (n,):
                raise MalformedProgramError(
                    f"constraint row has shape {np.asarray(c.row).shape}, expected ({n},)"
                )
        return cls(
            objective=objective,
            a_ub=np.array([c.row for c in ub], dtype=np.float64).reshape(len(ub), n),
            b_ub=np.array([c.rhs for c in ub], dtype=np.float64),
            a_eq=np.array([c.row for c in eq], dtype=np.float64).reshape(len(eq), n),
            b_eq=np.array([c.rhs for c in eq], dtype=np.float64),
            nonneg=np.broadcast_to(np.asarray(nonneg, dtype=bool), (n,)).copy(),
        )


class ProgramBuilder:
    """Accumulates constraint blocks over a fixed set of variables."""

    def __init__(self, n_vars: int):
        if n_vars < 1:
            raise MalformedProgramError("a linear program needs at least one variable")
        self.n_vars = n_vars
        self._ub_rows: list[np.ndarray] = []
        self._ub_rhs: list[np.ndarray] = []
        self._eq_rows: list[np.ndarray] = []
        self._eq_rhs: list[np.ndarray] = []

    def add_le(self, rows, rhs) -> "ProgramBuilder":
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        self._ub_rows.append(rows)
        self._ub_rhs.append(np.atleast_1d(np.asarray(rhs, dtype=np.float64)))
        return self

    def add_ge(self, rows, rhs) -> "ProgramBuilder":
        return self.add_le(-np.asarray(rows, dtype=np.float64), -np.asarray(rhs, dtype=np.float64))

    def add_eq(self, rows, rhs) -> "ProgramBuilder":
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        self._eq_rows.append(rows)
        self._eq_rhs.append(np.atleast_1d(np.asarray(rhs, dtype=np.float64)))
        return self

    def build(self, objective, nonneg=True) -> LinearProgram:
        n = self.n_vars

        def stack(rows: list[np.ndarray], rhs: list[np.ndarray]) -> tuple[np.ndarray, np.ndarray]:
            if not rows:
                return np.zeros((0, n)), np.zeros(0)
            return np.vstack(rows), np.concatenate(rhs)

        a_ub, b_ub = stack(self._ub_rows, self._ub_rhs)
        a_eq, b_eq = stack(self._eq_rows, self._eq_rhs)
        return LinearProgram(
            objective=np.asarray(objective, dtype=np.float64),
            a_ub=a_ub,
            b_ub=b_ub,
            a_eq=a_eq,
            b_eq=b_eq,
            nonneg=np.broadcast_to(np.asarray(nonneg, dtype=bool), (n,)).copy(),
        )


class OutcomeStatus(str, Enum):
    OPTIMAL = "Optimal"
    INFEASIBLE = "Infeasible"
    UNBOUNDED = "Unbounded"


@dataclass(frozen=True, eq=False)
class SolveOutcome:
    """Three-way solver result; value and solution are set only when optimal."""

    status: OutcomeStatus
    value: float | None = None
    solution: np.ndarray | None = None

    @property
    def is_optimal(self) -> bool:
        return self.status is OutcomeStatus.OPTIMAL

    @property
    def is_infeasible(self) -> bool:
        return self.status is OutcomeStatus.INFEASIBLE

    @property
    def is_unbounded(self) -> bool:
        return self.status is OutcomeStatus.UNBOUNDED

    def __str__(self) -> str:
        if self.is_optimal:
            return f"Optimal({self.value})"
        return self.status.value


def check_program(lp: LinearProgram) -> None:
    """Raise MalformedProgramError on any dimension mismatch."""
    objective = np.asarray(lp.objective)
    if objective.ndim != 1 or objective.shape[0] < 1:
        raise MalformedProgramError("objective must be a nonempty vector")
    n = objective.shape[0]
    for name, a, b in (("a_ub", lp.a_ub, lp.b_ub), ("a_eq", lp.a_eq, lp.b_eq)):
        a = np.asarray(a)
        b = np.asarray(b)
        if a.ndim != 2 or a.shape[1] != n:
            raise MalformedProgramError(f"{name} has shape {a.shape}, expected (m, {n})")
        if b.ndim != 1 or b.shape[0] != a.shape[0]:
            raise MalformedProgramError(f"{name} has {a.shape[0]} rows but rhs has shape {b.shape}")
    if np.asarray(lp.nonneg).shape != (n,):
        raise MalformedProgramError(f"nonneg mask has shape {np.asarray(lp.nonneg).shape}, expected ({n},)")
    for arr in (lp.objective, lp.a_ub, lp.b_ub, lp.a_eq, lp.b_eq):
        if not np.all(np.isfinite(arr)):
            raise MalformedProgramError("program data must be finite")


class _Tableau:
    """Dense simplex tableau: rows are B^-1 [A | b], `cost` holds reduced costs."""

    def __init__(self, matrix: np.ndarray, rhs: np.ndarray, basis: list[int], config: SolverConfig):
        self.tab = np.hstack([matrix, rhs.reshape(-1, 1)])
        self.basis = basis
        self.config = config
        self.cost = np.zeros(matrix.shape[1] + 1)
        self.iterations = 0

    @property
    def n_cols(self) -> int:
        return self.tab.shape[1] - 1

    def set_objective(self, c: np.ndarray) -> None:
        self.cost = np.append(np.asarray(c, dtype=np.float64), 0.0)
        for i, j in enumerate(self.basis):
            if self.cost[j] != 0.0:
                self.cost -= self.cost[j] * self.tab[i]

    def pivot(self, i: int, j: int) -> None:
        pivot_row = self.tab[i] / self.tab[i, j]
        column = self.tab[:, j].copy()
        column[i] = 0.0
        self.tab -= np.outer(column, pivot_row)
        self.tab[i] = pivot_row
        self.cost -= self.cost[j] * pivot_row
        self.basis[i] = j
        self.iterations += 1
        if self.iterations > self.config.max_iterations:
            raise SolverError(f"simplex exceeded {self.config.max_iterations} pivots")

    def run(self, allowed: np.ndarray) -> OutcomeStatus:
        """Maximize the current objective with Bland's rule over allowed columns."""
        tol = self.config.optimality_tol
        while True:
            candidates = np.flatnonzero((self.cost[:-1] > tol) & allowed)
            if candidates.size == 0:
                return OutcomeStatus.OPTIMAL
            j = int(candidates[0])

            column = self.tab[:, j]
            rows = np.flatnonzero(column > self.config.pivot_tol)
            if rows.size == 0:
                return OutcomeStatus.UNBOUNDED

            ratios = self.tab[rows, -1] / column[rows]
            best = ratios.min()
            tied = rows[ratios <= best + 1e-12 * (1.0 + abs(best))]
            i = int(min(tied, key=lambda r: self.basis[r]))
            self.pivot(i, j)

    def value(self) -> float:
        return float(-self.cost[-1])

    def primal(self) -> np.ndarray:
        x = np.zeros(self.n_cols)
        for i, j in enumerate(self.basis):
            x[j] = self.tab[i, -1]
        return x


def solve(lp: LinearProgram, config: SolverConfig | None = None) -> SolveOutcome:
    """Maximize lp.objective over the feasible set.

    Returns:
        Optimal with the maximizer when the supremum is finite, Unbounded when
        the objective is unbounded above on a nonempty feasible set, Infeasible
        when the feasible set is empty

    Raises:
        MalformedProgramError: dimension mismatch
        SolverError: iteration limit exceeded
    """
    config = config or DEFAULT_CONFIG
    check_program(lp)

    n = lp.n_vars
    nonneg = np.asarray(lp.nonneg, dtype=bool)
    free = np.flatnonzero(~nonneg)
    m_ub = lp.a_ub.shape[0]
    m_eq = lp.a_eq.shape[0]
    m = m_ub + m_eq

    # Standard form columns: x (n) | minus parts of free vars | slacks (m_ub)
    n_struct = n + free.size
    a_full = np.vstack([lp.a_ub, lp.a_eq]) if m else np.zeros((0, n))
    matrix = np.zeros((m, n_struct + m_ub))
    matrix[:, :n] = a_full
    matrix[:, n:n_struct] = -a_full[:, free]
    matrix[:m_ub, n_struct:] = np.eye(m_ub)
    rhs = np.concatenate([lp.b_ub, lp.b_eq]).astype(np.float64)
    cost = np.zeros(n_struct + m_ub)
    cost[:n] = lp.objective
    cost[n:n_struct] = -np.asarray(lp.objective)[free]

    negative = rhs < 0
    matrix[negative] *= -1.0
    rhs[negative] *= -1.0

    # Slack columns start basic where possible; other rows get an artificial.
    basis: list[int] = []
    artificial_rows: list[int] = []
    for i in range(m):
        if i < m_ub and not negative[i]:
            basis.append(n_struct + i)
        else:
            basis.append(-1)
            artificial_rows.append(i)

    n_real = n_struct + m_ub
    n_art = len(artificial_rows)
    if n_art:
        art_block = np.zeros((m, n_art))
        for k, i in enumerate(artificial_rows):
            art_block[i, k] = 1.0
            basis[i] = n_real + k
        matrix = np.hstack([matrix, art_block])

    tableau = _Tableau(matrix, rhs, basis, config)
    all_columns = np.ones(tableau.n_cols, dtype=bool)

    if n_art:
        phase_one = np.zeros(tableau.n_cols)
        phase_one[n_real:] = -1.0
        tableau.set_objective(phase_one)
        tableau.run(all_columns)
        infeasibility = -tableau.value()
        scale = 1.0 + (float(np.abs(rhs).max()) if m else 0.0)
        if infeasibility > config.feasibility_tol * scale:
            logger.debug("Phase one ended with infeasibility %.3e", infeasibility)
            return SolveOutcome(OutcomeStatus.INFEASIBLE)
        _drive_out_artificials(tableau, n_real, config)

    real_columns = np.zeros(tableau.n_cols, dtype=bool)
    real_columns[:n_real] = True
    phase_two = np.zeros(tableau.n_cols)
    phase_two[:n_real] = cost
    tableau.set_objective(phase_two)
    status = tableau.run(real_columns)
    logger.debug("Simplex finished: %s after %d pivots", status.value, tableau.iterations)

    if status is OutcomeStatus.UNBOUNDED:
        return SolveOutcome(OutcomeStatus.UNBOUNDED)

    z = tableau.primal()
    x = z[:n].copy()
    x[free] -= z[n:n_struct]
    x[nonneg] = np.where(x[nonneg] < 0, 0.0, x[nonneg])
    value = float(np.dot(lp.objective, x))
    return SolveOutcome(OutcomeStatus.OPTIMAL, value=value, solution=x)


def _drive_out_artificials(tableau: _Tableau, n_real: int, config: SolverConfig) -> None:
    """Pivot basic artificials (at level zero) out; drop rows that are redundant."""
    redundant = []
    for i in range(len(tableau.basis)):
        if tableau.basis[i] < n_real:
            continue
        row = tableau.tab[i, :n_real]
        nonzero = np.flatnonzero(np.abs(row) > config.pivot_tol)
        if nonzero.size:
            tableau.pivot(i, int(nonzero[0]))
        else:
            redundant.append(i)

    if redundant:
        keep = [i for i in range(len(tableau.basis)) if i not in set(redundant)]
        tableau.tab = tableau.tab[keep]
        tableau.basis = [tableau.basis[i] for i in keep]
        logger.debug("Dropped %d redundant equality rows", len(redundant))


def solve_min(lp: LinearProgram, config: SolverConfig | None = None) -> SolveOutcome:
    """Minimize lp.objective; Unbounded means unbounded below."""
    negated = LinearProgram(
        objective=-np.asarray(lp.objective, dtype=np.float64),
        a_ub=lp.a_ub,
        b_ub=lp.b_ub,
        a_eq=lp.a_eq,
        b_eq=lp.b_eq,
        nonneg=lp.nonneg,
    )
    outcome = solve(negated, config)
    if not outcome.is_optimal:
        return outcome
    return SolveOutcome(OutcomeStatus.OPTIMAL, value=-outcome.value + 0.0, solution=outcome.solution)
