"""Cross-checks of every LP route against its combinatorial counterpart."""

import math
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from quasilinear_welfare.analysis.construct import (
    build_rationalizing_utility,
    verify_rationalization,
)
from quasilinear_welfare.analysis.counterfactual import halfspace_system, quantity_bounds
from quasilinear_welfare.analysis.rationality import (
    epsilon_star_bruteforce,
    epsilon_star_cycles,
    epsilon_star_lp,
)
from quasilinear_welfare.analysis.welfare import (
    WelfareQuery,
    h_function,
    indirect_diff_bounds,
    utility_diff_bounds,
    utility_diff_lower_sequences,
    utility_diff_upper_sequences,
)
from quasilinear_welfare.common.logging import get_logger
from quasilinear_welfare.common.sequences import (
    DEFAULT_CYCLE_CAP,
    DEFAULT_SEQUENCE_CAP,
    OracleCapError,
)
from quasilinear_welfare.domain.model import BUNDLE_TOL, Dataset, ensure_valid

logger = get_logger(__name__)

ORACLE_TOL = 1e-6


@dataclass(frozen=True)
class OracleCheck:
    """One comparison; agree is None when the check was skipped."""

    name: str
    agree: bool | None
    detail: str = ""

    @property
    def skipped(self) -> bool:
        return self.agree is None


@dataclass
class OracleReport:
    eps_star: dict[str, float | None] = field(default_factory=dict)
    cycle: tuple[int, ...] | None = None
    checks: list[OracleCheck] = field(default_factory=list)

    @property
    def all_agree(self) -> bool:
        return all(c.agree is not False for c in self.checks)

    @property
    def failures(self) -> list[OracleCheck]:
        return [c for c in self.checks if c.agree is False]

    def to_dict(self) -> dict[str, Any]:
        """JSON-ready form; cycle indices are 1-based."""
        return {
            "eps_star": self.eps_star,
            "cycle": [t + 1 for t in self.cycle] if self.cycle else None,
            "agree": self.all_agree,
            "checks": [
                {"name": c.name, "agree": c.agree, "skipped": c.skipped, "detail": c.detail}
                for c in self.checks
            ],
        }


def _close(a: float, b: float, tol: float = ORACLE_TOL) -> bool:
    if math.isinf(a) or math.isinf(b):
        return a == b
    return abs(a - b) <= tol * (1.0 + max(abs(a), abs(b)))


def _off_data_bundle(dataset: Dataset, t: int) -> np.ndarray | None:
    """A bundle near x^t that matches no observed bundle."""
    X = dataset.quantities
    for shift in (0.1, 0.37, 1.0):
        candidate = 0.5 * (X[t] + X[(t + 1) % dataset.T]) + shift
        if not dataset.matching_rows(candidate, BUNDLE_TOL):
            return candidate
    return None


def _check_epsilon(dataset: Dataset, report: OracleReport, cycle_cap: int) -> float:
    lp = epsilon_star_lp(dataset).value
    karp, certificate = epsilon_star_cycles(dataset)
    report.eps_star = {"lp": lp, "cycles": karp.value, "bruteforce": None}
    report.cycle = certificate.sequence if certificate else None

    agree = _close(lp, karp.value)
    detail = f"lp={lp:.12g} cycles={karp.value:.12g}"
    try:
        brute = epsilon_star_bruteforce(dataset, cap=cycle_cap).value
        report.eps_star["bruteforce"] = brute
        agree = agree and _close(lp, brute)
        detail += f" bruteforce={brute:.12g}"
    except OracleCapError as e:
        detail += f" (bruteforce skipped: {e})"
    report.checks.append(OracleCheck("eps_star", agree, detail))
    return lp


def _check_construction(dataset: Dataset, eps: float, report: OracleReport, cap: int) -> None:
    utility = build_rationalizing_utility(dataset, eps, cap=cap)
    agree = verify_rationalization(utility, dataset, eps)
    report.checks.append(OracleCheck("construct", agree, f"{len(utility)} pieces"))


def _check_quantity_bounds(dataset: Dataset, eps: float, report: OracleReport, cap: int) -> None:
    mismatches = []
    for t in range(dataset.T):
        price = dataset.prices[t]
        system = halfspace_system(dataset, eps, price, cap=cap)
        for k in range(dataset.K):
            lp = quantity_bounds(dataset, eps, price, k, eps_star=eps)
            enum = system.extrema(k)
            if lp.is_feasible != enum.is_feasible or (
                lp.is_feasible and not (_close(lp.lower, enum.lower) and _close(lp.upper, enum.upper))
            ):
                mismatches.append(f"t={t + 1} k={k + 1}: lp={lp} halfspaces={enum}")
    report.checks.append(OracleCheck("quantity_bounds", not mismatches, "; ".join(mismatches)))


def _check_utility_bounds(dataset: Dataset, eps: float, report: OracleReport, cap: int) -> None:
    mismatches = []
    X = dataset.quantities
    for t in range(dataset.T):
        # repeated bundles add tie equalities the sequence formulas do not see
        if len(dataset.matching_rows(X[t])) > 1:
            continue
        off = _off_data_bundle(dataset, t)
        if off is None:
            continue
        lp = utility_diff_bounds(dataset, eps, off, X[t], eps_star=eps)
        upper = utility_diff_upper_sequences(dataset, eps, off, t, cap=cap).value
        if not _close(lp.upper, upper):
            mismatches.append(f"upper from t={t + 1}: lp={lp.upper:.12g} sequences={upper:.12g}")
        lp = utility_diff_bounds(dataset, eps, X[t], off, eps_star=eps)
        lower = utility_diff_lower_sequences(dataset, eps, off, t, cap=cap).value
        if not _close(lp.lower, lower):
            mismatches.append(f"lower to t={t + 1}: lp={lp.lower:.12g} sequences={lower:.12g}")
    report.checks.append(OracleCheck("utility_bounds", not mismatches, "; ".join(mismatches)))


def _check_welfare_sandwich(dataset: Dataset, eps: float, report: OracleReport, cap: int) -> None:
    problems = []
    P = dataset.prices
    for t in range(dataset.T):
        p0 = P[(t + 1) % dataset.T]
        if np.allclose(p0, P[t]):
            p0 = 1.5 * P[t]
        upper = indirect_diff_bounds(dataset, WelfareQuery(p1=P[t], p0=p0, eps=eps), eps_star=eps).upper
        h = h_function(dataset, eps, t, p0, cap=cap).value
        slack = ORACLE_TOL * (1.0 + abs(h))
        if not h - eps - slack <= upper <= h + eps + slack:
            problems.append(f"t={t + 1}: upper={upper:.12g} outside h={h:.12g} +/- {eps:.6g}")

        same = indirect_diff_bounds(dataset, WelfareQuery(p1=P[t], p0=P[t], eps=eps), eps_star=eps)
        if not _close(same.upper, eps):
            problems.append(f"t={t + 1}: upper at p1=p0 is {same.upper:.12g}, expected {eps:.12g}")
    report.checks.append(OracleCheck("welfare_sandwich", not problems, "; ".join(problems)))


def run_oracle_suite(
    dataset: Dataset,
    cap: int = DEFAULT_SEQUENCE_CAP,
    cycle_cap: int = DEFAULT_CYCLE_CAP,
) -> OracleReport:
    """Run every oracle comparison at eps = epsilon*(D).

    Sequence-based checks are skipped when T exceeds `cap`; brute-force cycle
    enumeration when T exceeds `cycle_cap`.
    """
    ensure_valid(dataset)
    report = OracleReport()
    eps = _check_epsilon(dataset, report, cycle_cap)

    for name, check in (
        ("construct", _check_construction),
        ("quantity_bounds", _check_quantity_bounds),
        ("utility_bounds", _check_utility_bounds),
        ("welfare_sandwich", _check_welfare_sandwich),
    ):
        if dataset.T > cap:
            report.checks.append(OracleCheck(name, None, f"T={dataset.T} exceeds oracle cap {cap}"))
            continue
        check(dataset, eps, report, cap)

    for failure in report.failures:
        logger.error("Oracle disagreement in %s: %s", failure.name, failure.detail)
    logger.info(
        "Oracle suite: %d checks, %d failed, %d skipped",
        len(report.checks),
        len(report.failures),
        sum(c.skipped for c in report.checks),
    )
    return report
