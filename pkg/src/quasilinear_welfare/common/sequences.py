"""Enumeration of acyclic observation sequences and simple cycles.

The enumeration oracles grow factorially in the number of observations, so
every entry point is guarded by an explicit cap.
"""

from collections.abc import Iterator
from itertools import permutations

DEFAULT_SEQUENCE_CAP = 7
DEFAULT_CYCLE_CAP = 8


class OracleCapError(ValueError):
    """Raised when an enumeration oracle is asked for too many observations."""

    pass


def check_cap(n_obs: int, cap: int, what: str) -> None:
    """Refuse enumeration when n_obs exceeds cap."""
    if n_obs > cap:
        raise OracleCapError(
            f"{what} enumerates all sequences and is capped at T={cap}; got T={n_obs}"
        )


def acyclic_sequences(
    n_obs: int,
    start: int | None = None,
    cap: int = DEFAULT_SEQUENCE_CAP,
) -> Iterator[tuple[int, ...]]:
    """Yield every sequence of pairwise distinct indices of length >= 1.

    Args:
        n_obs: Number of observations T (indices are 0..T-1)
        start: If given, only sequences whose first index is `start`
        cap: Largest T accepted

    Yields:
        Tuples of 0-based observation indices, shortest first
    """
    check_cap(n_obs, cap, "acyclic sequence enumeration")

    if start is None:
        for length in range(1, n_obs + 1):
            yield from permutations(range(n_obs), length)
        return

    if not 0 <= start < n_obs:
        raise IndexError(f"start index {start} out of range for T={n_obs}")

    others = [t for t in range(n_obs) if t != start]
    for length in range(0, n_obs):
        for rest in permutations(others, length):
            yield (start, *rest)


def simple_cycles(n_obs: int, cap: int = DEFAULT_CYCLE_CAP) -> Iterator[tuple[int, ...]]:
    """Yield every simple directed cycle of length >= 2 on the complete digraph.

    Each cycle is yielded once, rotated so its smallest index comes first;
    the two orientations of a cycle are distinct cycles.
    """
    check_cap(n_obs, cap, "cycle enumeration")

    for first in range(n_obs):
        later = range(first + 1, n_obs)
        for length in range(1, n_obs - first):
            for rest in permutations(later, length):
                yield (first, *rest)
