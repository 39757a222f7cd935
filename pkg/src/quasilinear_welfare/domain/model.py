"""Domain types shared by the analysis modules."""

import math
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from quasilinear_welfare.common.logging import get_logger

logger = get_logger(__name__)

BUNDLE_TOL = 1e-9


class DatasetValidationError(ValueError):
    """Raised when an operation receives an invalid dataset or candidate point."""

    def __init__(self, violations: list["Violation"]):
        self.violations = violations
        summary = "; ".join(str(v) for v in violations[:5])
        more = f" (+{len(violations) - 5} more)" if len(violations) > 5 else ""
        super().__init__(f"invalid dataset: {summary}{more}")


@dataclass(frozen=True)
class Violation:
    """A single failed dataset invariant; row and column are 1-based."""

    row: int | None
    column: int | None
    reason: str

    def __str__(self) -> str:
        if self.row is None:
            return self.reason
        return f"{self.reason} at ({self.row},{self.column})"


def _as_matrix(values) -> np.ndarray:
    matrix = np.array(values, dtype=np.float64)
    if matrix.ndim == 1:
        matrix = matrix.reshape(-1, 1)
    matrix.setflags(write=False)
    return matrix


def _as_vector(values) -> np.ndarray:
    vector = np.atleast_1d(np.array(values, dtype=np.float64))
    vector.setflags(write=False)
    return vector


@dataclass(frozen=True, eq=False)
class Dataset:
    """T observations of K-vector prices and quantities in numeraire units.

    Construction never rejects data; call `validate` or `ensure_valid`.
    A 1-D input is read as T observations of a single good.
    """

    prices: np.ndarray
    quantities: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "prices", _as_matrix(self.prices))
        object.__setattr__(self, "quantities", _as_matrix(self.quantities))

    @property
    def T(self) -> int:
        return self.prices.shape[0]

    @property
    def K(self) -> int:
        return self.prices.shape[1]

    def __eq__(self, other) -> bool:
        if not isinstance(other, Dataset):
            return NotImplemented
        return np.array_equal(self.prices, other.prices) and np.array_equal(
            self.quantities, other.quantities
        )

    def __hash__(self) -> int:
        return hash((self.prices.tobytes(), self.quantities.tobytes(), self.prices.shape))

    def __str__(self) -> str:
        return f"Dataset(T={self.T}, K={self.K})"

    def observation(self, t: int) -> "CandidatePoint":
        """Observation t (0-based) as a candidate point."""
        return CandidatePoint(quantity=self.quantities[t], price=self.prices[t])

    def drop_last(self) -> "Dataset":
        return Dataset(prices=self.prices[:-1], quantities=self.quantities[:-1])

    def with_quantities(self, quantities) -> "Dataset":
        """Same prices, new quantities (the d argument of the shape results)."""
        return Dataset(prices=self.prices, quantities=quantities)

    def matching_rows(self, bundle: np.ndarray, tol: float = BUNDLE_TOL) -> list[int]:
        """Indices t with x^t equal to bundle within an absolute tolerance."""
        bundle = np.asarray(bundle, dtype=np.float64)
        close = np.all(np.abs(self.quantities - bundle) <= tol, axis=1)
        return [int(t) for t in np.flatnonzero(close)]


@dataclass(frozen=True, eq=False)
class CandidatePoint:
    """A candidate quantity-price tuple (x~, p~)."""

    quantity: np.ndarray
    price: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "quantity", _as_vector(self.quantity))
        object.__setattr__(self, "price", _as_vector(self.price))


@dataclass(frozen=True)
class Epsilon:
    """Approximation error in numeraire units."""

    value: float

    def __post_init__(self):
        if not self.value >= 0:
            raise ValueError(f"epsilon must be nonnegative, got {self.value}")

    def __float__(self) -> float:
        return float(self.value)


class BoundStatus(str, Enum):
    FEASIBLE = "Feasible"
    INFEASIBLE = "Infeasible"


@dataclass(frozen=True)
class BoundInterval:
    """Lower/upper bound pair; infinite ends are +/- math.inf.

    When status is INFEASIBLE the ends carry no meaning.
    """

    lower: float = -math.inf
    upper: float = math.inf
    status: BoundStatus = BoundStatus.FEASIBLE
    notes: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if self.status is BoundStatus.FEASIBLE and self.lower > self.upper:
            raise ValueError(f"lower bound {self.lower} exceeds upper bound {self.upper}")

    @classmethod
    def infeasible(cls, note: str | None = None) -> "BoundInterval":
        return cls(
            lower=math.nan,
            upper=math.nan,
            status=BoundStatus.INFEASIBLE,
            notes=(note,) if note else (),
        )

    @property
    def is_feasible(self) -> bool:
        return self.status is BoundStatus.FEASIBLE

    @property
    def is_finite(self) -> bool:
        return self.is_feasible and math.isfinite(self.lower) and math.isfinite(self.upper)

    def __str__(self) -> str:
        if not self.is_feasible:
            return "BoundInterval(Infeasible)"
        return f"BoundInterval([{self.lower}, {self.upper}])"


def validate(dataset: Dataset) -> list[Violation]:
    """Check every Dataset invariant.

    Returns:
        An empty list when the dataset is valid, otherwise every violation
        found (row, column, reason), with 1-based positions
    """
    violations: list[Violation] = []
    prices, quantities = dataset.prices, dataset.quantities

    if prices.ndim != 2 or quantities.ndim != 2:
        return [Violation(None, None, "prices and quantities must be matrices")]
    if prices.shape[0] < 1:
        violations.append(Violation(None, None, "dataset has no observations"))
    if prices.shape[1] < 1:
        violations.append(Violation(None, None, "dataset has no goods"))
    if prices.shape != quantities.shape:
        violations.append(
            Violation(
                None,
                None,
                f"shape mismatch: prices {prices.shape} vs quantities {quantities.shape}",
            )
        )
        return violations

    for row, col in zip(*np.nonzero(~np.isfinite(prices))):
        violations.append(Violation(int(row) + 1, int(col) + 1, "non-finite price"))
    for row, col in zip(*np.nonzero(np.isfinite(prices) & (prices <= 0))):
        violations.append(Violation(int(row) + 1, int(col) + 1, "nonpositive price"))
    for row, col in zip(*np.nonzero(~np.isfinite(quantities))):
        violations.append(Violation(int(row) + 1, int(col) + 1, "non-finite quantity"))
    for row, col in zip(*np.nonzero(np.isfinite(quantities) & (quantities < 0))):
        violations.append(Violation(int(row) + 1, int(col) + 1, "negative quantity"))

    return violations


def validate_point(point: CandidatePoint, n_goods: int | None = None) -> list[Violation]:
    """Check a candidate point: x~ >= 0, p~ > 0, both of length K."""
    violations: list[Violation] = []
    if point.quantity.shape != point.price.shape:
        violations.append(Violation(None, None, "candidate quantity and price lengths differ"))
    if n_goods is not None and point.price.shape[0] != n_goods:
        violations.append(
            Violation(None, None, f"candidate has {point.price.shape[0]} goods, dataset has {n_goods}")
        )
    if not np.all(np.isfinite(point.price) & (point.price > 0)):
        violations.append(Violation(None, None, "candidate price must be strictly positive"))
    if not np.all(np.isfinite(point.quantity) & (point.quantity >= 0)):
        violations.append(Violation(None, None, "candidate quantity must be nonnegative"))
    return violations


def ensure_valid(dataset: Dataset) -> None:
    """Raise DatasetValidationError unless the dataset is valid."""
    violations = validate(dataset)
    if violations:
        raise DatasetValidationError(violations)


def ensure_price(price, n_goods: int) -> np.ndarray:
    """Coerce a counterfactual price to a strictly positive K-vector."""
    vector = np.atleast_1d(np.asarray(price, dtype=np.float64))
    if vector.shape != (n_goods,):
        raise DatasetValidationError(
            [Violation(None, None, f"price has shape {vector.shape}, expected ({n_goods},)")]
        )
    if not np.all(np.isfinite(vector) & (vector > 0)):
        raise DatasetValidationError([Violation(None, None, "price must be strictly positive")])
    return vector


def ensure_bundle(bundle, n_goods: int) -> np.ndarray:
    """Coerce a bundle to a nonnegative K-vector."""
    vector = np.atleast_1d(np.asarray(bundle, dtype=np.float64))
    if vector.shape != (n_goods,):
        raise DatasetValidationError(
            [Violation(None, None, f"bundle has shape {vector.shape}, expected ({n_goods},)")]
        )
    if not np.all(np.isfinite(vector) & (vector >= 0)):
        raise DatasetValidationError([Violation(None, None, "bundle must be nonnegative")])
    return vector


def augment(dataset: Dataset, point: CandidatePoint) -> Dataset:
    """Append the candidate as observation T+1; the input dataset is unchanged."""
    ensure_valid(dataset)
    violations = validate_point(point, dataset.K)
    if violations:
        raise DatasetValidationError(violations)

    prices = np.vstack([dataset.prices, point.price.reshape(1, -1)])
    quantities = np.vstack([dataset.quantities, point.quantity.reshape(1, -1)])
    return Dataset(prices=prices, quantities=quantities)
