"""Combinatorics of complex-activity performance variants.

A complex activity (e.g. eating lunch) decomposes into an ordered sequence of
weighted atomic activities and the context attributes they touch.  A subset of
the atomic activities is *core*: the activity only reaches its goal if every
core step is performed.  Counting subsets of the atomic activities then gives
three quantities for an activity with ``eta`` atomic steps of which ``q`` are
core:

* all performance variants:            2**eta
* variants that reach the goal:        2**(eta - q)
* variants that never reach the goal:  2**eta - 2**(eta - q)

Core membership is selected by weight (units at or above a threshold), start
and end sets positionally (the first and last few units in sequence order).
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

__all__ = [
    "UnitKind",
    "AtomicUnit",
    "ComplexActivityProfile",
    "count_all_ways",
    "count_goal_reaching",
    "count_never_reaching",
    "derive_profile",
    "load_units",
]

# 2**62 is the largest power of two representable alongside its complement
# arithmetic in an unsigned 64-bit word.
_MAX_ETA = 62


class UnitKind(enum.Enum):
    """Whether a unit is a granular task step or an environment parameter."""

    ATOMIC_ACTIVITY = "atomic_activity"
    CONTEXT_ATTRIBUTE = "context_attribute"


@dataclass(frozen=True)
class AtomicUnit:
    """One weighted step (or context parameter) of a complex activity."""

    label: str
    weight: float
    sequence_index: int
    kind: UnitKind

    def __post_init__(self) -> None:
        if not 0.0 <= self.weight <= 1.0:
            raise ValueError(f"unit weight must be in [0, 1], got {self.weight!r}")
        if self.sequence_index < 0:
            raise ValueError(
                f"sequence_index must be non-negative, got {self.sequence_index!r}"
            )


@dataclass(frozen=True)
class ComplexActivityProfile:
    """A complex activity with derived start/end/core sets and variant counts.

    Index sets hold the ``sequence_index`` values of the selected units.
    ``zeta``, ``theta`` and ``psi`` count all / goal-reaching / goal-failing
    performance variants over the atomic activities only; context attributes
    are catalogued but never enter the counts.
    """

    atomic_activities: tuple[AtomicUnit, ...]
    context_attributes: tuple[AtomicUnit, ...]
    start_atomic: frozenset[int]
    start_context: frozenset[int]
    end_atomic: frozenset[int]
    end_context: frozenset[int]
    core_atomic: frozenset[int]
    core_context: frozenset[int]
    zeta: int
    theta: int
    psi: int

    @property
    def eta(self) -> int:
        """Number of atomic activities."""
        return len(self.atomic_activities)

    @property
    def mu(self) -> int:
        """Number of context attributes."""
        return len(self.context_attributes)

    @property
    def core_atomic_count(self) -> int:
        return len(self.core_atomic)

    @property
    def core_context_count(self) -> int:
        return len(self.core_context)


def count_all_ways(eta: int) -> int:
    """Count every subset of ``eta`` atomic activities: 2**eta.

    ``eta`` must be in [0, 62] so the result fits an unsigned 64-bit integer.
    """
    _check_eta(eta)
    return 1 << eta


def count_goal_reaching(eta: int, q: int) -> int:
    """Count subsets of ``eta`` atomic activities containing all ``q`` core ones.

    Every core activity is pinned, leaving ``eta - q`` free choices: 2**(eta-q).
    """
    _check_eta_q(eta, q)
    return 1 << (eta - q)


def count_never_reaching(eta: int, q: int) -> int:
    """Count subsets missing at least one of the ``q`` core activities.

    Computed both as the complement 2**eta - 2**(eta-q) and as the factored
    form 2**(eta-q) * (2**q - 1); the two must agree.
    """
    _check_eta_q(eta, q)
    complement_form = (1 << eta) - (1 << (eta - q))
    factored_form = (1 << (eta - q)) * ((1 << q) - 1)
    if complement_form != factored_form:
        raise AssertionError(
            f"closed forms disagree for eta={eta}, q={q}: "
            f"{complement_form} != {factored_form}"
        )
    return complement_form


def derive_profile(
    atomic: Sequence[AtomicUnit],
    context: Sequence[AtomicUnit],
    core_weight_threshold: float,
    boundary_width: int,
) -> ComplexActivityProfile:
    """Derive start/end/core sets and variant counts for a complex activity.

    Core sets hold every unit whose weight is at or above
    ``core_weight_threshold`` (ties count as core).  Start and end sets hold
    the first and last ``boundary_width`` units in sequence order.  The counts
    use ``eta = len(atomic)`` and ``q = len(core_atomic)``.
    """
    if not atomic:
        raise ValueError("atomic activity list must be non-empty")
    if not context:
        raise ValueError("context attribute list must be non-empty")
    if not 0.0 <= core_weight_threshold <= 1.0:
        raise ValueError(
            f"core_weight_threshold must be in [0, 1], got {core_weight_threshold!r}"
        )
    if boundary_width < 1:
        raise ValueError(f"boundary_width must be positive, got {boundary_width!r}")
    if boundary_width > len(atomic) or boundary_width > len(context):
        raise ValueError(
            f"boundary_width {boundary_width} exceeds a unit list length "
            f"(atomic={len(atomic)}, context={len(context)})"
        )
    atomic = tuple(atomic)
    context = tuple(context)
    _check_sequence_indices(atomic, "atomic")
    _check_sequence_indices(context, "context")

    core_atomic = frozenset(
        u.sequence_index for u in atomic if u.weight >= core_weight_threshold
    )
    core_context = frozenset(
        u.sequence_index for u in context if u.weight >= core_weight_threshold
    )
    ordered_atomic = sorted(atomic, key=lambda u: u.sequence_index)
    ordered_context = sorted(context, key=lambda u: u.sequence_index)
    start_atomic = frozenset(u.sequence_index for u in ordered_atomic[:boundary_width])
    end_atomic = frozenset(u.sequence_index for u in ordered_atomic[-boundary_width:])
    start_context = frozenset(
        u.sequence_index for u in ordered_context[:boundary_width]
    )
    end_context = frozenset(u.sequence_index for u in ordered_context[-boundary_width:])

    eta = len(atomic)
    q = len(core_atomic)
    return ComplexActivityProfile(
        atomic_activities=atomic,
        context_attributes=context,
        start_atomic=start_atomic,
        start_context=start_context,
        end_atomic=end_atomic,
        end_context=end_context,
        core_atomic=core_atomic,
        core_context=core_context,
        zeta=count_all_ways(eta),
        theta=count_goal_reaching(eta, q),
        psi=count_never_reaching(eta, q),
    )


def load_units(path: str | Path) -> tuple[list[AtomicUnit], list[AtomicUnit]]:
    """Load activity units from a CSV file with columns kind,label,weight,sequence_index.

    Returns the atomic activities and context attributes as two lists, each in
    file order.
    """
    path = Path(path)
    atomic: list[AtomicUnit] = []
    context: list[AtomicUnit] = []
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        expected = ["kind", "label", "weight", "sequence_index"]
        if reader.fieldnames is None or list(reader.fieldnames) != expected:
            raise ValueError(
                f"{path}: expected header {','.join(expected)}, "
                f"got {','.join(reader.fieldnames or [])}"
            )
        for lineno, row in enumerate(reader, start=2):
            try:
                kind = UnitKind(row["kind"])
            except ValueError:
                raise ValueError(
                    f"{path}:{lineno}: unknown unit kind {row['kind']!r}"
                ) from None
            try:
                unit = AtomicUnit(
                    label=row["label"],
                    weight=float(row["weight"]),
                    sequence_index=int(row["sequence_index"]),
                    kind=kind,
                )
            except ValueError as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from None
            (atomic if kind is UnitKind.ATOMIC_ACTIVITY else context).append(unit)
    return atomic, context


def _check_eta(eta: int) -> None:
    if eta < 0:
        raise ValueError(f"eta must be non-negative, got {eta!r}")
    if eta > _MAX_ETA:
        raise OverflowError(
            f"eta={eta} exceeds {_MAX_ETA}; 2**eta would not fit 64 bits"
        )


def _check_eta_q(eta: int, q: int) -> None:
    _check_eta(eta)
    if q < 0:
        raise ValueError(f"q must be non-negative, got {q!r}")
    if q > eta:
        raise ValueError(f"q={q} exceeds eta={eta}")


def _check_sequence_indices(units: Iterable[AtomicUnit], name: str) -> None:
    seen: set[int] = set()
    for u in units:
        if u.sequence_index in seen:
            raise ValueError(
                f"duplicate sequence_index {u.sequence_index} in {name} units"
            )
        seen.add(u.sequence_index)
