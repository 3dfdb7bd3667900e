"""Structured refinement directives parsed from user text.

A directive targets one schema slot/value. ``set``, ``remove`` and ``negate``
are hard constraints (the guard filters on them); ``add_soft`` only tilts
scoring and annotates reports.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

from .catalog import AttributeSchema, BINARY_DETAIL
from .errors import SchemaError

SET = "set"
REMOVE = "remove"
NEGATE = "negate"
ADD_SOFT = "add_soft"

KINDS = (SET, REMOVE, NEGATE, ADD_SOFT)
HARD_KINDS = (SET, REMOVE, NEGATE)

# Relative color token resolved against the anchor before encoding.
DARKEN_STEP = "darken-step"


@dataclass(frozen=True)
class Directive:
    kind: str
    slot: str
    value: str
    id: str

    def describe(self) -> str:
        """Human-readable fact used in rationales ("no pocket", "color black")."""
        if self.kind in (REMOVE, NEGATE):
            return f"no {self.value}"
        if self.slot == "detail":
            return f"has {self.value}"
        return f"{self.slot} {self.value}"


@dataclass(frozen=True)
class ConstraintSet:
    directives: tuple[Directive, ...]
    raw_text: str = ""
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self):
        ids = [d.id for d in self.directives]
        if len(set(ids)) != len(ids):
            raise SchemaError("directive ids must be unique")

    def hard(self) -> tuple[Directive, ...]:
        return tuple(d for d in self.directives if d.kind in HARD_KINDS)

    def soft(self) -> tuple[Directive, ...]:
        return tuple(d for d in self.directives if d.kind == ADD_SOFT)

    def touched_slots(self) -> frozenset[str]:
        return frozenset(d.slot for d in self.directives)

    def is_empty(self) -> bool:
        return not self.directives


def empty_constraints(raw_text: str = "") -> ConstraintSet:
    return ConstraintSet(directives=(), raw_text=raw_text)


def validate_constraints(constraints: ConstraintSet, schema: AttributeSchema) -> None:
    """Every directive must resolve to a known slot/value pair."""
    for d in constraints.directives:
        if d.kind not in KINDS:
            raise SchemaError(f"unknown directive kind {d.kind!r}")
        slot = schema.slot(d.slot)
        if d.value == DARKEN_STEP:
            raise SchemaError(
                f"directive {d.id} still carries the relative value {DARKEN_STEP!r}; "
                "resolve it against the anchor first"
            )
        schema.check_value(d.slot, d.value)
        if d.kind == REMOVE and slot.kind != BINARY_DETAIL:
            # remove on a categorical slot behaves like negate; normalize upstream.
            continue


def resolve_relative(
    constraints: ConstraintSet,
    anchor_color: str | None,
    darkness_order: tuple[str, ...],
) -> ConstraintSet:
    """Replace darken-step with the next darker color after the anchor's.

    The darkest color maps to itself. Without a known anchor color the
    directive is dropped with a warning.
    """
    directives = []
    warnings = list(constraints.warnings)
    for d in constraints.directives:
        if d.value != DARKEN_STEP:
            directives.append(d)
            continue
        if anchor_color is None or anchor_color not in darkness_order:
            warnings.append(f"dropped {d.id}: no anchor color to darken from")
            continue
        pos = darkness_order.index(anchor_color)
        darker = darkness_order[min(pos + 1, len(darkness_order) - 1)]
        directives.append(replace(d, value=darker))
    return ConstraintSet(
        directives=tuple(directives),
        raw_text=constraints.raw_text,
        warnings=tuple(warnings),
    )
