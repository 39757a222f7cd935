"""CLI entrypoint: epsilon*, bound grids, pre-processing, synthetic data, oracle checks and stored runs.

Exit codes: 0 ok, 1 oracle disagreement or failed output assertion, 2 input error.
"""

import argparse
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

import numpy as np
import pandas as pd

from quasilinear_welfare.analysis.counterfactual import quantity_bounds
from quasilinear_welfare.analysis.oracles import ORACLE_TOL, run_oracle_suite
from quasilinear_welfare.analysis.rationality import epsilon_star_cycles, epsilon_star_lp
from quasilinear_welfare.analysis.welfare import (
    WelfareQuery,
    h_function,
    indirect_diff_bounds,
    utility_diff_bounds,
    utility_diff_lower_sequences,
    utility_diff_upper_sequences,
)
from quasilinear_welfare.common.logging import get_logger, setup_logging
from quasilinear_welfare.common.sequences import DEFAULT_SEQUENCE_CAP, OracleCapError
from quasilinear_welfare.domain.model import BoundInterval, Dataset, DatasetValidationError
from quasilinear_welfare.estimation.kernel import (
    EstimationError,
    KernelConfig,
    bandwidth_rule,
    robinson_beta,
)
from quasilinear_welfare.estimation.pseudo_dataset import build_pseudo_dataset
from quasilinear_welfare.estimation.synthetic import SyntheticSpec, synth_cross_section
from quasilinear_welfare.load.csv_files import (
    InputFormatError,
    read_cross_section,
    read_dataset,
    write_cross_section,
    write_dataset,
    write_frame,
    write_json,
)
from quasilinear_welfare.storage.database import Database
from quasilinear_welfare.storage.run_repository import RunRepository

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_DISAGREEMENT = 1
EXIT_INPUT_ERROR = 2
MONOTONE_TOL = 1e-7


@dataclass(frozen=True)
class EpsMode:
    """`adaptive` (eps = epsilon*), `fixed=V` or `sweep=a,b,c`."""

    kind: str = "adaptive"
    values: tuple[float, ...] = ()

    @classmethod
    def parse(cls, text: str) -> "EpsMode":
        text = text.strip()
        if text == "adaptive":
            return cls()
        kind, sep, rest = text.partition("=")
        if not sep or kind not in ("fixed", "sweep"):
            raise ValueError(f"expected adaptive, fixed=V or sweep=a,b,c, got {text!r}")
        values = tuple(float(v) for v in rest.split(","))
        if any(not v >= 0 for v in values):
            raise ValueError(f"eps values must be nonnegative, got {rest!r}")
        if kind == "fixed" and len(values) != 1:
            raise ValueError("fixed mode takes exactly one value")
        return cls(kind=kind, values=values)

    def eps_values(self) -> list[float | None]:
        """eps arguments to pass to the bound functions; None means epsilon*."""
        return [None] if self.kind == "adaptive" else list(self.values)

    def __str__(self) -> str:
        if self.kind == "adaptive":
            return "adaptive"
        return f"{self.kind}=" + ",".join(f"{v:g}" for v in self.values)


def parse_vector(text: str) -> np.ndarray:
    return np.array([float(v) for v in text.split(",")], dtype=np.float64)


def parse_grid(text: str) -> np.ndarray:
    """MIN:MAX:STEPS, STEPS >= 1 evenly spaced points including both ends."""
    parts = text.split(":")
    if len(parts) != 3:
        raise ValueError(f"grid must be MIN:MAX:STEPS, got {text!r}")
    low, high, steps = float(parts[0]), float(parts[1]), int(parts[2])
    if steps < 1:
        raise ValueError(f"grid steps must be >= 1, got {steps}")
    return np.linspace(low, high, steps)


def parse_query(text: str) -> tuple[np.ndarray, np.ndarray]:
    """`a,b/c,d`: first vector (p1 or x1), then second (p0 or x0)."""
    first, sep, second = text.partition("/")
    if not sep:
        raise ValueError(f"query must look like a,b/c,d, got {text!r}")
    return parse_vector(first), parse_vector(second)


@dataclass
class RunConfig:
    """Everything a command needs; built from parsed arguments."""

    command: str
    input: Path | None = None
    output: Path | None = None
    eps: EpsMode = field(default_factory=EpsMode)
    grid: list[float] | None = None
    good: int = 1
    base_price: list[float] | None = None
    queries: list[tuple[list[float], list[float]]] = field(default_factory=list)
    bandwidth_y: float | None = None
    income: float | None = None
    max_points: int | None = None
    seed: int = 0
    n: int = 1000
    noise: float = 0.1
    oracle_cap: int = DEFAULT_SEQUENCE_CAP
    workers: int = 1
    db_path: Path | None = None
    run_command: str | None = None
    content_hash: str | None = None

    @classmethod
    def from_args(cls, args: argparse.Namespace) -> "RunConfig":
        grid = None
        if getattr(args, "grid", None) is not None:
            grid = parse_grid(args.grid).tolist()
        elif getattr(args, "prices", None) is not None:
            grid = parse_vector(args.prices).tolist()
        base = getattr(args, "base_price", None)
        return cls(
            command=args.command,
            input=getattr(args, "input", None),
            output=getattr(args, "output", None),
            eps=getattr(args, "eps", None) or EpsMode(),
            grid=grid,
            good=getattr(args, "good", 1),
            base_price=parse_vector(base).tolist() if base else None,
            queries=[
                (first.tolist(), second.tolist())
                for first, second in map(parse_query, getattr(args, "query", None) or [])
            ],
            bandwidth_y=getattr(args, "bandwidth_y", None),
            income=getattr(args, "income", None),
            max_points=getattr(args, "max_points", None),
            seed=getattr(args, "seed", 0),
            n=getattr(args, "n", 1000),
            noise=getattr(args, "noise", 0.1),
            oracle_cap=getattr(args, "oracle_cap", DEFAULT_SEQUENCE_CAP),
            workers=getattr(args, "workers", 1),
            db_path=getattr(args, "db_path", None),
            run_command=getattr(args, "run_command", None),
            content_hash=getattr(args, "hash", None),
        )

    def to_dict(self) -> dict[str, Any]:
        params = asdict(self)
        params["eps"] = str(self.eps)
        for key in ("input", "output", "db_path"):
            if params[key] is not None:
                params[key] = str(params[key])
        return params


def _map_rows(fn: Callable[[Any], dict], items: Iterable[Any], workers: int) -> list[dict]:
    """Evaluate rows, in parallel when workers > 1; results keep input order."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _interval_columns(interval: BoundInterval) -> dict[str, Any]:
    return {"lower": interval.lower, "upper": interval.upper, "status": interval.status.value}


def _vector_columns(prefix: str, vector) -> dict[str, float]:
    return {f"{prefix}_{k + 1}": float(v) for k, v in enumerate(vector)}


def _record(config: RunConfig, report: Any, exit_code: int) -> None:
    if config.db_path is None:
        return
    with Database(config.db_path) as db:
        repo = RunRepository(db)
        repo.initialize()
        repo.record(config.command, config.to_dict(), report, exit_code)


def _require_input(config: RunConfig) -> Path:
    if config.input is None:
        raise InputFormatError("--input is required")
    return config.input


def _eps_used(eps: float | None, eps_star: float) -> float:
    return eps_star if eps is None else eps


def cmd_eps(config: RunConfig) -> int:
    """epsilon* by LP and by maximum mean cycle, with the attaining cycle."""
    dataset = read_dataset(_require_input(config))
    lp = epsilon_star_lp(dataset).value
    karp, certificate = epsilon_star_cycles(dataset)
    report = {
        "eps_star": lp,
        "eps_star_cycles": karp.value,
        "cycle": [t + 1 for t in certificate.sequence] if certificate else None,
    }
    exit_code = EXIT_OK
    if abs(lp - karp.value) > ORACLE_TOL:
        logger.error("epsilon* disagreement: LP %.12g vs cycles %.12g", lp, karp.value)
        exit_code = EXIT_DISAGREEMENT
    logger.info("epsilon* = %.12g", lp)
    write_json(report, config.output)
    _record(config, report, exit_code)
    return exit_code


def _counterfactual_price(dataset: Dataset, config: RunConfig, value: float) -> np.ndarray:
    if config.base_price is not None:
        base = np.array(config.base_price, dtype=np.float64)
    else:
        base = dataset.prices.mean(axis=0)
    if base.shape[0] != dataset.K:
        raise InputFormatError(f"--base-price has {base.shape[0]} entries for K={dataset.K}")
    price = base.copy()
    price[config.good - 1] = value
    return price


def monotonicity_violations(frame: pd.DataFrame) -> list[str]:
    """Rows where a K=1 bound grid increases with price (feasible rows only)."""
    problems = []
    for eps, group in frame[frame["status"] == "Feasible"].groupby("eps", sort=False):
        group = group.sort_values("p", kind="stable")
        for column in ("upper", "lower"):
            values = group[column].to_numpy()
            for i in range(1, len(values)):
                previous, current = values[i - 1], values[i]
                if current > previous + MONOTONE_TOL * (1.0 + (abs(previous) if math.isfinite(previous) else 0.0)):
                    problems.append(
                        f"{column} increases from {previous:.12g} to {current:.12g} "
                        f"at p={group['p'].iloc[i]:.12g} (eps={eps:.6g})"
                    )
    return problems


def cmd_bounds_quantity(config: RunConfig) -> int:
    """Grid of quantity bounds for good --good over counterfactual prices."""
    dataset = read_dataset(_require_input(config))
    if config.grid is None:
        raise InputFormatError("bounds-quantity needs --grid or --prices")
    if not 1 <= config.good <= dataset.K:
        raise InputFormatError(f"--good must be in 1..{dataset.K}, got {config.good}")
    eps_star = epsilon_star_lp(dataset).value
    k = config.good - 1

    def row(item: tuple[float | None, float]) -> dict:
        eps, value = item
        price = _counterfactual_price(dataset, config, value)
        interval = quantity_bounds(dataset, eps, price, k, eps_star=eps_star)
        return {"p": value, "eps": _eps_used(eps, eps_star), **_interval_columns(interval)}

    items = [(eps, value) for eps in config.eps.eps_values() for value in config.grid]
    frame = pd.DataFrame(_map_rows(row, items, config.workers), columns=["p", "eps", "lower", "upper", "status"])

    exit_code = EXIT_OK
    if dataset.K == 1:
        problems = monotonicity_violations(frame)
        for problem in problems:
            logger.error("Monotonicity assertion failed: %s", problem)
        if problems:
            exit_code = EXIT_DISAGREEMENT

    logger.info("Computed %d quantity-bound rows (epsilon* = %.12g)", len(frame), eps_star)
    write_frame(frame, config.output)
    _record(config, frame.to_dict(orient="records"), exit_code)
    return exit_code


def _welfare_queries(dataset: Dataset, config: RunConfig) -> list[tuple[np.ndarray, np.ndarray]]:
    queries = [(np.array(a), np.array(b)) for a, b in config.queries]
    if config.grid is not None:
        if config.base_price is None:
            raise InputFormatError("a welfare grid needs --base-price as p0")
        p0 = np.array(config.base_price)
        queries += [(_counterfactual_price(dataset, config, value), p0) for value in config.grid]
    if not queries:
        raise InputFormatError("bounds-welfare needs --query or --grid with --base-price")
    return queries


def cmd_bounds_welfare(config: RunConfig) -> int:
    """Bounds on V(p1) - V(p0) per query, with the discrete-surplus sandwich where p1 is observed."""
    dataset = read_dataset(_require_input(config))
    queries = _welfare_queries(dataset, config)
    eps_star = epsilon_star_lp(dataset).value
    check_sandwich = dataset.T <= config.oracle_cap

    def row(item: tuple[float | None, tuple[np.ndarray, np.ndarray]]) -> dict:
        eps, (p1, p0) = item
        bounds = indirect_diff_bounds(dataset, WelfareQuery(p1=p1, p0=p0, eps=eps), eps_star=eps_star)
        eps_used = _eps_used(eps, eps_star)
        result = {
            **_vector_columns("p1", p1),
            **_vector_columns("p0", p0),
            "eps": eps_used,
            **_interval_columns(bounds.interval),
            "region": bounds.region.value,
            "h": math.nan,
            "sandwich_ok": None,
        }
        observed = [t for t in range(dataset.T) if np.allclose(dataset.prices[t], p1, rtol=0.0, atol=1e-12)]
        if check_sandwich and observed and bounds.interval.is_feasible:
            h = h_function(dataset, eps_used, observed[0], p0, cap=config.oracle_cap).value
            slack = ORACLE_TOL * (1.0 + abs(h))
            result["h"] = h
            result["sandwich_ok"] = bool(h - eps_used - slack <= bounds.upper <= h + eps_used + slack)
        return result

    items = [(eps, query) for eps in config.eps.eps_values() for query in queries]
    frame = pd.DataFrame(_map_rows(row, items, config.workers))

    exit_code = EXIT_OK
    violated = int(frame["sandwich_ok"].eq(False).sum())
    if violated:
        logger.error("Welfare sandwich violated on %d rows", violated)
        exit_code = EXIT_DISAGREEMENT

    logger.info("Computed %d welfare rows", len(frame))
    write_frame(frame, config.output)
    _record(config, frame.to_dict(orient="records"), exit_code)
    return exit_code


def cmd_bounds_utility(config: RunConfig) -> int:
    """Bounds on u(x1) - u(x0) per query, with the sequence formulas as cross-checks."""
    dataset = read_dataset(_require_input(config))
    if not config.queries:
        raise InputFormatError("bounds-utility needs at least one --query x1/x0")
    eps_star = epsilon_star_lp(dataset).value
    use_sequences = dataset.T <= config.oracle_cap

    def row(item: tuple[float | None, tuple[list[float], list[float]]]) -> dict:
        eps, (x1, x0) = item
        x1, x0 = np.array(x1), np.array(x0)
        interval = utility_diff_bounds(dataset, eps, x1, x0, eps_star=eps_star)
        eps_used = _eps_used(eps, eps_star)
        result = {
            **_vector_columns("x1", x1),
            **_vector_columns("x0", x0),
            "eps": eps_used,
            **_interval_columns(interval),
            "upper_sequences": math.nan,
            "lower_sequences": math.nan,
        }
        if use_sequences and interval.is_feasible:
            starts, finals = dataset.matching_rows(x0), dataset.matching_rows(x1)
            if len(starts) == 1 and not finals:
                result["upper_sequences"] = utility_diff_upper_sequences(
                    dataset, eps_used, x1, starts[0], cap=config.oracle_cap
                ).value
            if len(finals) == 1 and not starts:
                result["lower_sequences"] = utility_diff_lower_sequences(
                    dataset, eps_used, x0, finals[0], cap=config.oracle_cap
                ).value
        return result

    items = [(eps, query) for eps in config.eps.eps_values() for query in config.queries]
    frame = pd.DataFrame(_map_rows(row, items, config.workers))

    mismatched = 0
    for bound, oracle in (("upper", "upper_sequences"), ("lower", "lower_sequences")):
        checked = frame[oracle].notna()
        gap = (frame.loc[checked, bound] - frame.loc[checked, oracle]).abs()
        mismatched += int((gap > ORACLE_TOL * (1.0 + frame.loc[checked, oracle].abs())).sum())
    exit_code = EXIT_OK
    if mismatched:
        logger.error("Utility LP and sequence bounds disagree on %d entries", mismatched)
        exit_code = EXIT_DISAGREEMENT

    logger.info("Computed %d utility rows", len(frame))
    write_frame(frame, config.output)
    _record(config, frame.to_dict(orient="records"), exit_code)
    return exit_code


def cmd_preprocess(config: RunConfig) -> int:
    """Kernel-smoothed pseudo-dataset D(y) from a cross-section."""
    cs = read_cross_section(_require_input(config))
    if config.income is None:
        raise InputFormatError("preprocess needs --income")
    if config.bandwidth_y is not None:
        cfg = KernelConfig(h_p=bandwidth_rule(cs, config.bandwidth_y), h_y=config.bandwidth_y)
    else:
        cfg = KernelConfig.standardized(cs)

    if cs.d_w:
        fit = robinson_beta(cs, cfg)
        beta, excluded = fit.beta, fit.excluded
    else:
        beta, excluded = np.zeros(0), 0
    pseudo = build_pseudo_dataset(cs, config.income, cfg, beta, max_points=config.max_points)

    report = {
        "h_p": cfg.h_p,
        "h_y": cfg.h_y,
        "beta": beta.tolist(),
        "excluded": excluded,
        "retained": pseudo.retained,
        "clamped": pseudo.clamped,
        "T": pseudo.dataset.T,
    }
    logger.info("Pre-processing report: %s", report)
    write_dataset(pseudo.dataset, config.output)
    _record(config, report, EXIT_OK)
    return EXIT_OK


def cmd_synth(config: RunConfig) -> int:
    """Seeded synthetic cross-section."""
    spec = SyntheticSpec(noise_scale=config.noise)
    cs = synth_cross_section(config.seed, config.n, spec)
    write_cross_section(cs, config.output)
    _record(config, {"n": cs.n, "seed": config.seed, "spec": asdict(spec)}, EXIT_OK)
    return EXIT_OK


def cmd_check(config: RunConfig) -> int:
    """Full oracle suite on a dataset."""
    dataset = read_dataset(_require_input(config))
    report = run_oracle_suite(dataset, cap=config.oracle_cap)
    exit_code = EXIT_OK if report.all_agree else EXIT_DISAGREEMENT
    write_json(report.to_dict(), config.output)
    _record(config, report.to_dict(), exit_code)
    return exit_code


def cmd_runs(config: RunConfig) -> int:
    """Stored run reports from --db-path, newest first."""
    if config.db_path is None:
        raise InputFormatError("runs needs --db-path")
    if not config.db_path.exists():
        raise InputFormatError(f"no run database at {config.db_path}")

    with Database(config.db_path) as db:
        repo = RunRepository(db)
        repo.initialize()
        if config.content_hash is not None:
            run = repo.get_run(config.content_hash)
            if run is None:
                raise InputFormatError(f"no stored run with hash {config.content_hash}")
            runs = [run]
        else:
            runs = repo.list_runs(config.run_command)

    logger.info("Read %d stored runs", len(runs))
    write_json([run.to_dict() for run in runs], config.output)
    return EXIT_OK


def _eps_mode(text: str) -> EpsMode:
    try:
        return EpsMode.parse(text)
    except ValueError as e:
        raise argparse.ArgumentTypeError(str(e)) from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="quasilinear_welfare",
        description="Counterfactual and welfare bounds for approximately quasilinear demand data",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--output", type=Path, default=None, help="Output file (default: stdout)")
    common.add_argument("--db-path", type=Path, default=None, help="DuckDB file to record the run in")
    common.add_argument("--verbose", action="store_true", help="Enable debug logging")

    with_input = argparse.ArgumentParser(add_help=False, parents=[common])
    with_input.add_argument("--input", type=Path, required=True, help="Input CSV")

    bounds = argparse.ArgumentParser(add_help=False, parents=[with_input])
    bounds.add_argument(
        "--eps",
        type=_eps_mode,
        default=EpsMode(),
        help="adaptive (eps = epsilon*), fixed=V or sweep=a,b,c (default: adaptive)",
    )
    bounds.add_argument("--workers", type=int, default=1, help="Threads for grid rows (default: 1)")
    bounds.add_argument(
        "--oracle-cap",
        type=int,
        default=DEFAULT_SEQUENCE_CAP,
        help=f"Largest T for sequence-based diagnostics (default: {DEFAULT_SEQUENCE_CAP})",
    )

    priced = argparse.ArgumentParser(add_help=False)
    grid = priced.add_mutually_exclusive_group()
    grid.add_argument("--grid", default=None, help="Price grid MIN:MAX:STEPS")
    grid.add_argument("--prices", default=None, help="Explicit comma-separated price list")
    priced.add_argument("--good", type=int, default=1, help="1-based good whose price varies (default: 1)")
    priced.add_argument(
        "--base-price",
        default=None,
        help="Comma-separated prices of the other goods (default: mean observed prices)",
    )

    eps_parser = subparsers.add_parser("eps", help="Minimal approximation error", parents=[with_input])
    eps_parser.set_defaults(func=cmd_eps)

    quantity = subparsers.add_parser(
        "bounds-quantity", help="Counterfactual quantity bounds over a price grid", parents=[bounds, priced]
    )
    quantity.set_defaults(func=cmd_bounds_quantity)

    welfare = subparsers.add_parser(
        "bounds-welfare", help="Indirect utility change bounds", parents=[bounds, priced]
    )
    welfare.add_argument("--query", action="append", help="p1/p0 as a,b/c,d (repeatable)")
    welfare.set_defaults(func=cmd_bounds_welfare)

    utility = subparsers.add_parser("bounds-utility", help="Utility difference bounds", parents=[bounds])
    utility.add_argument("--query", action="append", help="x1/x0 as a,b/c,d (repeatable)")
    utility.set_defaults(func=cmd_bounds_utility)

    preprocess = subparsers.add_parser(
        "preprocess", help="Kernel-smoothed pseudo-dataset from a cross-section", parents=[with_input]
    )
    preprocess.add_argument("--income", type=float, default=None, help="Income level y for D(y)")
    preprocess.add_argument(
        "--bandwidth-y",
        type=float,
        default=None,
        help="Income bandwidth; the price bandwidth follows the sd ratio (default: 0.75 standardized)",
    )
    preprocess.add_argument("--max-points", type=int, default=None, help="Thin retained prices to this many")
    preprocess.set_defaults(func=cmd_preprocess)

    synth = subparsers.add_parser("synth", help="Seeded synthetic cross-section", parents=[common])
    synth.add_argument("--seed", type=int, default=0, help="Random seed (default: 0)")
    synth.add_argument("--n", type=int, default=1000, help="Number of records (default: 1000)")
    synth.add_argument("--noise", type=float, default=0.1, help="Noise scale (default: 0.1)")
    synth.set_defaults(func=cmd_synth)

    check = subparsers.add_parser("check", help="Run the oracle suite", parents=[with_input])
    check.add_argument(
        "--oracle-cap",
        type=int,
        default=DEFAULT_SEQUENCE_CAP,
        help=f"Largest T for enumeration oracles (default: {DEFAULT_SEQUENCE_CAP})",
    )
    check.set_defaults(func=cmd_check)

    runs = subparsers.add_parser("runs", help="List run reports stored with --db-path", parents=[common])
    runs.add_argument("--command", dest="run_command", default=None, help="Only runs of this command")
    runs.add_argument("--hash", default=None, help="Show the run with this content hash")
    runs.set_defaults(func=cmd_runs)

    return parser


def main(argv: list[str] | None = None) -> int:
    """CLI entrypoint."""
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(logging.DEBUG if args.verbose else logging.INFO)

    try:
        config = RunConfig.from_args(args)
        return args.func(config)
    except (InputFormatError, DatasetValidationError, EstimationError, OracleCapError) as e:
        logger.error("%s", e)
        return EXIT_INPUT_ERROR
    except ValueError as e:
        logger.error("Invalid arguments: %s", e)
        return EXIT_INPUT_ERROR


if __name__ == "__main__":
    sys.exit(main())
