"""Specialist ranker ensemble, the post-retrieval attribute guard, and
constraint-satisfaction scoring.

The guard checks candidate metadata directly, which is ground truth at this
scale. A probabilistic visual verifier can be plugged in through the same
``Verifier`` contract without touching callers.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .catalog import AttributeSchema, BINARY_DETAIL, Catalog, Item
from .composer import WeightedQuery
from .constraints import ADD_SOFT, ConstraintSet, Directive, NEGATE, REMOVE, SET
from .errors import DimensionError, SchemaError, UnknownItemError
from .index import CandidateSet, ExactIndex


@dataclass(frozen=True)
class SpecialistRanker:
    """Adds weight * <q_slot, x_slot> on one slot to the base score."""

    slot: str
    weight: float

    def __post_init__(self):
        if self.weight < 0:
            raise SchemaError(f"specialist weight for {self.slot!r} must be >= 0")


@dataclass
class GuardVerdict:
    item_id: str
    satisfied: list[str]
    violated: list[str]


@dataclass
class GuardReport:
    verdicts: list[GuardVerdict]
    kept: list[str]
    dropped: list[str]

    def verdict_for(self, item_id: str) -> GuardVerdict | None:
        for v in self.verdicts:
            if v.item_id == item_id:
                return v
        return None


class Verifier(Protocol):
    def satisfies(self, item: Item, directive: Directive, schema: AttributeSchema) -> bool: ...


def item_satisfies(item: Item, directive: Directive, schema: AttributeSchema) -> bool:
    """Check one directive against raw metadata."""
    slot = schema.slot(directive.slot)
    schema.check_value(directive.slot, directive.value)
    if slot.kind == BINARY_DETAIL:
        present = directive.value in item.details
        if directive.kind in (SET, ADD_SOFT):
            return present
        return not present  # remove / negate
    value = item.attrs.get(directive.slot)
    if directive.kind in (SET, ADD_SOFT):
        if directive.slot == "style" and directive.kind == ADD_SOFT:
            # soft style wishes also count tag matches
            return value == directive.value or directive.value in item.tags
        return value == directive.value
    return value != directive.value  # remove / negate


class MetadataVerifier:
    """Ground-truth verifier backed by item metadata."""

    def satisfies(self, item: Item, directive: Directive, schema: AttributeSchema) -> bool:
        return item_satisfies(item, directive, schema)


def ensemble_rank(
    candidates: CandidateSet,
    query: WeightedQuery,
    rankers: list[SpecialistRanker],
    index: ExactIndex,
) -> CandidateSet:
    """Re-score candidates with the specialist bonuses and re-sort.

    final = base weighted cosine + sum_r weight_r * <q_slot, x_slot>; ties
    break by ascending id. An empty (or all-zero) ranker pool reproduces the
    input ordering.
    """
    layout = index.layout
    if query.vector.layout != layout:
        raise DimensionError("query layout does not match the index")
    for r in rankers:
        layout.slot_range(r.slot)  # raises SchemaError on unknown slots
    scored = []
    for item_id, base in candidates.entries:
        x = index.vector_for(item_id)
        bonus = 0.0
        for r in rankers:
            if r.weight == 0.0:
                continue
            sl = layout.slot_slice(r.slot)
            bonus += r.weight * float(query.vector.values[sl] @ x[sl])
        scored.append((item_id, base + bonus))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return CandidateSet(entries=scored, query_id=candidates.query_id, truncated_at=candidates.truncated_at)


def verify_candidates(
    candidates: CandidateSet,
    constraints: ConstraintSet,
    catalog: Catalog,
    schema: AttributeSchema,
    verifier: Verifier | None = None,
) -> GuardReport:
    """Check every directive against metadata; hard violators are dropped,
    soft directives only annotate. Relative order of kept items is preserved."""
    verifier = verifier or MetadataVerifier()
    verdicts, kept, dropped = [], [], []
    for item_id, _ in candidates.entries:
        item = catalog.get(item_id)
        if item is None:
            raise UnknownItemError(f"candidate {item_id!r} not in catalog")
        satisfied, violated, hard_violation = [], [], False
        for d in constraints.directives:
            if verifier.satisfies(item, d, schema):
                satisfied.append(d.id)
            else:
                violated.append(d.id)
                if d.kind != ADD_SOFT:
                    hard_violation = True
        verdicts.append(GuardVerdict(item_id=item_id, satisfied=satisfied, violated=violated))
        (dropped if hard_violation else kept).append(item_id)
    return GuardReport(verdicts=verdicts, kept=kept, dropped=dropped)


def apply_guard(candidates: CandidateSet, report: GuardReport) -> CandidateSet:
    keep = set(report.kept)
    entries = [(i, s) for i, s in candidates.entries if i in keep]
    return CandidateSet(entries=entries, query_id=candidates.query_id, truncated_at=candidates.truncated_at)


def csr(
    candidates: CandidateSet,
    constraints: ConstraintSet,
    catalog: Catalog,
    schema: AttributeSchema,
    k: int,
) -> float:
    """Fraction of the top-min(k, n) candidates satisfying every hard constraint."""
    if k < 1:
        raise SchemaError("k must be >= 1")
    if not candidates.entries:
        return 0.0
    hard = constraints.hard()
    top = candidates.entries[: min(k, len(candidates.entries))]
    good = 0
    for item_id, _ in top:
        item = catalog.get(item_id)
        if item is None:
            raise UnknownItemError(f"candidate {item_id!r} not in catalog")
        if all(item_satisfies(item, d, schema) for d in hard):
            good += 1
    return good / len(top)


def specialists_for(constraints: ConstraintSet, weight: float = 4.0) -> list[SpecialistRanker]:
    """One specialist per touched slot; the fixed Thought-phase tool rule."""
    return [SpecialistRanker(slot=name, weight=weight) for name in sorted(constraints.touched_slots())]
