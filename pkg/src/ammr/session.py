"""Per-session memory: accept/reject counters turned into similarity weights.

The multiplier law is the minimal monotone, bounded choice that is neutral at
zero feedback: m(v) = clamp(1 + alpha * (accept - reject) / (accept + reject + 1)).
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from pathlib import Path

from .catalog import AttributeSchema, BINARY_DETAIL, Item
from .embedding import SliceLayout

ALPHA = 0.5
WEIGHT_MIN = 0.1
WEIGHT_MAX = 4.0
MAX_RECENT_TOKENS = 16


@dataclass
class SessionMemory:
    session_id: str
    counts: dict[tuple[str, str], tuple[int, int]] = field(default_factory=dict)
    recent_tokens: tuple[str, ...] = ()
    created_at: float = field(default_factory=time.time)

    def accept_count(self, slot: str, value: str) -> int:
        return self.counts.get((slot, value), (0, 0))[0]

    def reject_count(self, slot: str, value: str) -> int:
        return self.counts.get((slot, value), (0, 0))[1]


def apply_feedback(memory: SessionMemory, item: Item, verdict: str, schema: AttributeSchema) -> SessionMemory:
    """Pure update: bump the matching counter for every (slot, value) on the item."""
    if verdict not in ("accept", "reject"):
        raise ValueError(f"verdict must be accept or reject, got {verdict!r}")
    counts = dict(memory.counts)
    pairs = [(slot, value) for slot, value in item.attrs.items()]
    detail_slots = [s.name for s in schema.slots if s.kind == BINARY_DETAIL]
    for slot_name in detail_slots:
        slot = schema.slot(slot_name)
        for d in item.details:
            if d in slot.vocab:
                pairs.append((slot_name, d))
    for key in pairs:
        acc, rej = counts.get(key, (0, 0))
        counts[key] = (acc + 1, rej) if verdict == "accept" else (acc, rej + 1)
    return SessionMemory(
        session_id=memory.session_id,
        counts=counts,
        recent_tokens=memory.recent_tokens,
        created_at=memory.created_at,
    )


def record_token(memory: SessionMemory, token: str) -> SessionMemory:
    tokens = (*memory.recent_tokens, token)[-MAX_RECENT_TOKENS:]
    return SessionMemory(
        session_id=memory.session_id,
        counts=memory.counts,
        recent_tokens=tokens,
        created_at=memory.created_at,
    )


def value_multiplier(accept: int, reject: int) -> float:
    raw = 1.0 + ALPHA * (accept - reject) / (accept + reject + 1)
    return min(WEIGHT_MAX, max(WEIGHT_MIN, raw))


def derive_weights(
    memory: SessionMemory,
    layout: SliceLayout,
    schema: AttributeSchema,
) -> tuple[dict[str, float], dict[tuple[str, str], float]]:
    """Slot weights (mean of the slot's value multipliers) plus the per-value
    activation multipliers themselves. Fresh memory yields all 1.0."""
    multipliers: dict[tuple[str, str], float] = {}
    slot_weights: dict[str, float] = {}
    for slot in schema.slots:
        if slot.name not in layout.slot_names:
            continue
        values = []
        for value in slot.vocab:
            acc, rej = memory.counts.get((slot.name, value), (0, 0))
            m = value_multiplier(acc, rej)
            multipliers[(slot.name, value)] = m
            values.append(m)
        slot_weights[slot.name] = sum(values) / len(values)
    return slot_weights, multipliers


# -- snapshots ---------------------------------------------------------------


def save_snapshot(memories: dict[str, SessionMemory], path: str | Path) -> None:
    doc = {}
    for sid, mem in memories.items():
        doc[sid] = {
            "counts": [
                {"slot": slot, "value": value, "accept": acc, "reject": rej}
                for (slot, value), (acc, rej) in sorted(mem.counts.items())
            ],
            "recent_tokens": list(mem.recent_tokens),
            "created_at": mem.created_at,
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_snapshot(path: str | Path) -> dict[str, SessionMemory]:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    out = {}
    for sid, entry in doc.items():
        counts = {
            (c["slot"], c["value"]): (int(c["accept"]), int(c["reject"]))
            for c in entry.get("counts", [])
        }
        out[sid] = SessionMemory(
            session_id=sid,
            counts=counts,
            recent_tokens=tuple(entry.get("recent_tokens", ())),
            created_at=float(entry.get("created_at", 0.0)),
        )
    return out
