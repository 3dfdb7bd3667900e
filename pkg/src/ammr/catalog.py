"""Attribute schema, biased synthetic catalogs, and their persistent form.

The catalog file is JSON-Lines with a fixed key order per record:
``{"id":...,"attrs":{...},"details":[...],"brand":...,"price_cents":...,"tags":[...]}``.
That ordering is the canonical form; ``serialize_item_record`` reproduces a
parsed canonical line byte for byte.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

from .errors import FormatError, SchemaError

CATEGORICAL = "categorical"
BINARY_DETAIL = "binary-detail"

# Fixed brand pool; generate_catalog draws from it with Zipf(1.0) weights.
BRAND_POOL = (
    "Aster", "Bellune", "Cobble", "Drift", "Ember",
    "Fable", "Grove", "Halcyon", "Indigo", "Juno",
)

PRICE_MIN_CENTS = 1500
PRICE_MAX_CENTS = 25000


@dataclass(frozen=True)
class SlotDef:
    """One attribute family: a categorical slot or a set of binary details."""

    name: str
    kind: str
    vocab: tuple[str, ...]

    @property
    def slice_width(self) -> int:
        # One coordinate per vocabulary value for both slot kinds.
        return len(self.vocab)


@dataclass(frozen=True)
class AttributeSchema:
    slots: tuple[SlotDef, ...]
    version: int = 1

    def __post_init__(self):
        seen = set()
        for slot in self.slots:
            if slot.name in seen:
                raise SchemaError(f"duplicate slot {slot.name!r}")
            seen.add(slot.name)
            if slot.kind not in (CATEGORICAL, BINARY_DETAIL):
                raise SchemaError(f"slot {slot.name!r} has unknown kind {slot.kind!r}")
            if len(slot.vocab) < 2:
                raise SchemaError(f"slot {slot.name!r} needs at least 2 vocabulary values")
            if len(set(slot.vocab)) != len(slot.vocab):
                raise SchemaError(f"slot {slot.name!r} has duplicate vocabulary values")
        if self.total_width <= 0:
            raise SchemaError("schema has zero total slice width")

    @property
    def total_width(self) -> int:
        return sum(s.slice_width for s in self.slots)

    @property
    def slot_names(self) -> tuple[str, ...]:
        return tuple(s.name for s in self.slots)

    def slot(self, name: str) -> SlotDef:
        for s in self.slots:
            if s.name == name:
                return s
        raise SchemaError(f"unknown slot {name!r}")

    def has_slot(self, name: str) -> bool:
        return any(s.name == name for s in self.slots)

    def check_value(self, slot_name: str, value: str) -> None:
        slot = self.slot(slot_name)
        if value not in slot.vocab:
            raise SchemaError(f"unknown value {value!r} for slot {slot_name!r}")

    def find_value_slot(self, value: str) -> str | None:
        """First slot (schema order) whose vocabulary contains ``value``."""
        for s in self.slots:
            if value in s.vocab:
                return s.name
        return None


@dataclass(frozen=True)
class Item:
    id: str
    attrs: dict[str, str]
    details: tuple[str, ...]
    brand: str
    price_cents: int
    tags: tuple[str, ...] = ()

    def __eq__(self, other):
        if not isinstance(other, Item):
            return NotImplemented
        return (
            self.id == other.id
            and self.attrs == other.attrs
            and set(self.details) == set(other.details)
            and self.brand == other.brand
            and self.price_cents == other.price_cents
            and self.tags == other.tags
        )

    def __hash__(self):
        return hash(self.id)


@dataclass
class Catalog:
    schema_version: int
    items: list[Item] = field(default_factory=list)

    def __post_init__(self):
        self._by_id = {item.id: item for item in self.items}
        if len(self._by_id) != len(self.items):
            raise SchemaError("catalog contains duplicate item ids")

    def __len__(self):
        return len(self.items)

    def get(self, item_id: str) -> Item | None:
        return self._by_id.get(item_id)

    def __contains__(self, item_id: str) -> bool:
        return item_id in self._by_id


def default_schema_path() -> Path:
    return Path(resources.files("ammr.data") / "schema.json")


def load_schema(path: str | Path) -> AttributeSchema:
    """Load and validate a schema file.

    Slice widths are derived from vocabulary sizes, never read from the file.
    """
    with open(path, "r", encoding="utf-8") as fh:
        raw = fh.read()
    try:
        doc = json.loads(raw)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"schema file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict) or "slots" not in doc:
        raise SchemaError("schema file must be an object with a 'slots' list")
    slots = []
    for entry in doc["slots"]:
        try:
            slots.append(SlotDef(name=entry["name"], kind=entry["kind"], vocab=tuple(entry["vocab"])))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed slot entry {entry!r}") from exc
    return AttributeSchema(slots=tuple(slots), version=int(doc.get("version", 1)))


def validate_item(item: Item, schema: AttributeSchema) -> None:
    if not item.id:
        raise SchemaError("item id must be non-empty")
    for slot_name, value in item.attrs.items():
        slot = schema.slot(slot_name)
        if slot.kind != CATEGORICAL:
            raise SchemaError(f"attrs key {slot_name!r} is not a categorical slot")
        if value not in slot.vocab:
            raise SchemaError(f"unknown value {value!r} for slot {slot_name!r} (item {item.id})")
    detail_slots = [s for s in schema.slots if s.kind == BINARY_DETAIL]
    detail_vocab = {v for s in detail_slots for v in s.vocab}
    for d in item.details:
        if d not in detail_vocab:
            raise SchemaError(f"unknown detail {d!r} (item {item.id})")
    if item.price_cents < 0:
        raise SchemaError(f"negative price on item {item.id}")


def _parse_skew(schema: AttributeSchema, skew: Mapping[str, float] | None):
    """Validate `slot.value -> probability` entries and bucket them per slot."""
    per_slot: dict[str, dict[str, float]] = {}
    if not skew:
        return per_slot
    for key, prob in skew.items():
        if "." not in key:
            raise SchemaError(f"skew key {key!r} must look like slot.value")
        slot_name, value = key.split(".", 1)
        if not schema.has_slot(slot_name):
            raise SchemaError(f"skew references unknown slot {slot_name!r}")
        schema.check_value(slot_name, value)
        if not (0.0 <= prob <= 1.0):
            raise SchemaError(f"skew probability for {key!r} outside [0, 1]")
        per_slot.setdefault(slot_name, {})[value] = float(prob)
    for slot_name, values in per_slot.items():
        slot = schema.slot(slot_name)
        if slot.kind == CATEGORICAL:
            total = sum(values.values())
            free = len(slot.vocab) - len(values)
            if total > 1.0 + 1e-9:
                raise SchemaError(f"skew probabilities for slot {slot_name!r} exceed 1")
            if free == 0 and abs(total - 1.0) > 1e-9:
                raise SchemaError(f"skew for slot {slot_name!r} covers all values but sums to {total}")
    return per_slot


def _categorical_probs(slot: SlotDef, skewed: dict[str, float]) -> np.ndarray:
    probs = np.empty(len(slot.vocab))
    free = [i for i, v in enumerate(slot.vocab) if v not in skewed]
    remaining = 1.0 - sum(skewed.values())
    for i, v in enumerate(slot.vocab):
        probs[i] = skewed.get(v, remaining / len(free) if free else 0.0)
    return probs / probs.sum()


def generate_catalog(
    schema: AttributeSchema,
    size: int,
    skew: Mapping[str, float] | None = None,
    seed: int = 0,
) -> Catalog:
    """Draw a synthetic catalog; a pure function of its arguments.

    Unskewed values are drawn uniformly within their slot. A skew entry
    ``slot.value -> p`` forces that value's marginal to ``p`` (categorical) or
    activates the detail with probability ``p``. Draws are independent across
    slots, so a marginal skew also holds within any other slot's subgroups.
    """
    if size < 1:
        raise SchemaError("catalog size must be >= 1")
    per_slot = _parse_skew(schema, skew)
    rng = np.random.default_rng(seed)

    columns: dict[str, np.ndarray] = {}
    detail_masks: dict[str, dict[str, np.ndarray]] = {}
    for slot in schema.slots:
        skewed = per_slot.get(slot.name, {})
        if slot.kind == CATEGORICAL:
            probs = _categorical_probs(slot, skewed)
            idx = rng.choice(len(slot.vocab), size=size, p=probs)
            columns[slot.name] = idx
        else:
            masks = {}
            for value in slot.vocab:
                p = skewed.get(value, 0.5)
                masks[value] = rng.random(size) < p
            detail_masks[slot.name] = masks

    zipf = 1.0 / np.arange(1, len(BRAND_POOL) + 1)
    brand_idx = rng.choice(len(BRAND_POOL), size=size, p=zipf / zipf.sum())
    prices = rng.integers(PRICE_MIN_CENTS, PRICE_MAX_CENTS + 1, size=size)

    style_slot = next((s for s in schema.slots if s.name == "style"), None)
    extra_tag_mask = rng.random(size) < 0.3
    extra_tag_idx = (
        rng.choice(len(style_slot.vocab), size=size) if style_slot is not None else None
    )

    width = len(str(max(size - 1, 1)))
    width = max(width, 6)
    items = []
    for i in range(size):
        attrs = {
            slot.name: slot.vocab[columns[slot.name][i]]
            for slot in schema.slots
            if slot.kind == CATEGORICAL
        }
        details = tuple(
            value
            for slot in schema.slots
            if slot.kind == BINARY_DETAIL
            for value in slot.vocab
            if detail_masks[slot.name][value][i]
        )
        tags: list[str] = []
        if style_slot is not None:
            tags.append(attrs[style_slot.name])
            if extra_tag_mask[i]:
                extra = style_slot.vocab[extra_tag_idx[i]]
                if extra not in tags:
                    tags.append(extra)
        items.append(
            Item(
                id=f"item-{i:0{width}d}",
                attrs=attrs,
                details=details,
                brand=BRAND_POOL[brand_idx[i]],
                price_cents=int(prices[i]),
                tags=tuple(tags),
            )
        )
    return Catalog(schema_version=schema.version, items=items)


def serialize_item_record(item: Item) -> str:
    record = {
        "id": item.id,
        "attrs": item.attrs,
        "details": list(item.details),
        "brand": item.brand,
        "price_cents": item.price_cents,
        "tags": list(item.tags),
    }
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False)


def parse_item_record(line: str, schema: AttributeSchema, line_no: int | None = None) -> Item:
    """Parse one catalog line; the inverse of ``serialize_item_record``."""
    try:
        doc = json.loads(line)
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", line=line_no, column=exc.colno) from exc
    if not isinstance(doc, dict):
        raise FormatError("record is not a JSON object", line=line_no)
    try:
        item = Item(
            id=doc["id"],
            attrs=dict(doc["attrs"]),
            details=tuple(doc.get("details", ())),
            brand=doc["brand"],
            price_cents=int(doc["price_cents"]),
            tags=tuple(doc.get("tags", ())),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise FormatError(f"missing or malformed field: {exc}", line=line_no) from exc
    try:
        validate_item(item, schema)
    except SchemaError as exc:
        raise FormatError(str(exc), line=line_no) from exc
    return item


def save_catalog(catalog: Catalog, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for item in catalog.items:
            fh.write(serialize_item_record(item))
            fh.write("\n")


def load_catalog(path: str | Path, schema: AttributeSchema) -> Catalog:
    items = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            items.append(parse_item_record(line, schema, line_no=line_no))
    return Catalog(schema_version=schema.version, items=items)


def catalog_to_lines(catalog: Catalog) -> Iterable[str]:
    for item in catalog.items:
        yield serialize_item_record(item)
