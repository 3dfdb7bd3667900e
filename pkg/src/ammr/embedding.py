"""Vector-space encoders over the attribute schema.

Disentangled encoding assigns every slot a contiguous slice: categorical
slots are one-hot, detail slots carry one coordinate per active detail and
are normalized to unit norm when nonzero, so distinct slots are orthogonal
by construction. The universal encoder deliberately entangles the same
information through per-slot scaling and a fixed random rotation, which is
what makes fine details sink in similarity rankings.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .catalog import AttributeSchema, BINARY_DETAIL, CATEGORICAL, Catalog, Item
from .constraints import ADD_SOFT, ConstraintSet, NEGATE, REMOVE, SET, validate_constraints
from .errors import DimensionError, FormatError, SchemaError

# Under-weighting of detail (and to a lesser degree material/style) is what
# reproduces the "fine attributes sink" failure of the entangled baseline.
DEFAULT_SLOT_SCALES = {
    "color": 1.0,
    "silhouette": 1.0,
    "material": 0.5,
    "detail": 0.1,
    "style": 0.3,
}

EMB_MAGIC = b"AMMREMB"
EMB_VERSION = 1


@dataclass(frozen=True)
class SliceLayout:
    """Contiguous, non-overlapping (slot, offset, width) partition."""

    entries: tuple[tuple[str, int, int], ...]
    total_dim: int

    def __post_init__(self):
        expected = 0
        for name, offset, width in self.entries:
            if offset != expected or width <= 0:
                raise SchemaError(f"layout slice {name!r} is not contiguous")
            expected = offset + width
        if expected != self.total_dim:
            raise SchemaError("layout widths do not sum to total_dim")

    @classmethod
    def from_schema(cls, schema: AttributeSchema) -> "SliceLayout":
        entries = []
        offset = 0
        for slot in schema.slots:
            entries.append((slot.name, offset, slot.slice_width))
            offset += slot.slice_width
        return cls(entries=tuple(entries), total_dim=offset)

    @property
    def slot_names(self) -> tuple[str, ...]:
        return tuple(name for name, _, _ in self.entries)

    def slot_range(self, name: str) -> tuple[int, int]:
        for entry_name, offset, width in self.entries:
            if entry_name == name:
                return offset, width
        raise SchemaError(f"layout has no slice for slot {name!r}")

    def slot_slice(self, name: str) -> slice:
        offset, width = self.slot_range(name)
        return slice(offset, offset + width)

    def dim_scales(self, slot_scales: dict[str, float]) -> np.ndarray:
        scales = np.ones(self.total_dim)
        for name, offset, width in self.entries:
            scales[offset : offset + width] = slot_scales.get(name, 1.0)
        return scales

    def slot_index_of_dim(self) -> np.ndarray:
        """Slot ordinal for every coordinate (used by weighted norms)."""
        out = np.empty(self.total_dim, dtype=np.intp)
        for i, (_, offset, width) in enumerate(self.entries):
            out[offset : offset + width] = i
        return out


@dataclass
class EmbeddingVector:
    values: np.ndarray
    layout: SliceLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.total_dim,):
            raise DimensionError(
                f"vector length {self.values.shape} does not match layout dim {self.layout.total_dim}"
            )
        if not np.all(np.isfinite(self.values)):
            raise DimensionError("embedding contains non-finite entries")

    def slot(self, name: str) -> np.ndarray:
        return self.values[self.layout.slot_slice(name)]

    def copy(self) -> "EmbeddingVector":
        return EmbeddingVector(self.values.copy(), self.layout)


@dataclass
class DeltaVector:
    values: np.ndarray
    touched_slots: frozenset[str]
    layout: SliceLayout

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        for name, offset, width in self.layout.entries:
            if name not in self.touched_slots and np.any(self.values[offset : offset + width] != 0.0):
                raise DimensionError(f"delta has mass outside touched slot {name!r}")


@dataclass
class MaskVector:
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if np.any(self.values < 0.0) or np.any(self.values > 1.0):
            raise DimensionError("mask entries must lie in [0, 1]")


def _check_layout(schema: AttributeSchema, layout: SliceLayout) -> None:
    if layout != SliceLayout.from_schema(schema):
        raise SchemaError("layout was not derived from this schema")


def _value_coord(schema: AttributeSchema, layout: SliceLayout, slot_name: str, value: str) -> int:
    slot = schema.slot(slot_name)
    schema.check_value(slot_name, value)
    offset, _ = layout.slot_range(slot_name)
    return offset + slot.vocab.index(value)


def encode_item_disentangled(item: Item, schema: AttributeSchema, layout: SliceLayout) -> EmbeddingVector:
    """One-hot categorical slices; detail slice unit-normalized when nonzero."""
    _check_layout(schema, layout)
    values = np.zeros(layout.total_dim)
    details = set(item.details)
    for slot in schema.slots:
        offset, width = layout.slot_range(slot.name)
        if slot.kind == CATEGORICAL:
            value = item.attrs.get(slot.name)
            if value is None:
                continue
            if value not in slot.vocab:
                raise SchemaError(f"item {item.id}: unknown value {value!r} for slot {slot.name!r}")
            values[offset + slot.vocab.index(value)] = 1.0
        else:
            for j, detail in enumerate(slot.vocab):
                if detail in details:
                    values[offset + j] = 1.0
            norm = np.linalg.norm(values[offset : offset + width])
            if norm > 0:
                values[offset : offset + width] /= norm
    return EmbeddingVector(values, layout)


@lru_cache(maxsize=16)
def rotation_matrix(seed: int, dim: int) -> np.ndarray:
    """Fixed random rotation; seed 0 is the identity by convention."""
    if seed == 0:
        return np.eye(dim)
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    q = q * np.sign(np.diag(r))  # unique orientation
    return q


def encode_item_universal(
    item: Item,
    schema: AttributeSchema,
    layout: SliceLayout,
    seed: int = 7,
    slot_scales: dict[str, float] | None = None,
) -> EmbeddingVector:
    """Entangled baseline encoding: normalize(R . diag_by_slot(scales) . v)."""
    scales = DEFAULT_SLOT_SCALES if slot_scales is None else slot_scales
    base = encode_item_disentangled(item, schema, layout)
    scaled = base.values * layout.dim_scales(scales)
    rotated = rotation_matrix(seed, layout.total_dim) @ scaled
    norm = np.linalg.norm(rotated)
    if norm > 0:
        rotated = rotated / norm
    return EmbeddingVector(rotated, layout)


def encode_constraints(
    constraints: ConstraintSet,
    schema: AttributeSchema,
    layout: SliceLayout,
    anchor: EmbeddingVector,
) -> tuple[DeltaVector, MaskVector]:
    """Render directives as a sparse delta plus a touched-slot mask.

    set drives the target coordinate to 1 (categorical: the whole slice to
    the value's one-hot); remove/negate drive it to 0. Coordinates outside
    touched slots stay exactly zero; re-normalization of edited slices is
    deferred to composition.
    """
    _check_layout(schema, layout)
    if anchor.layout != layout:
        raise DimensionError("anchor does not use the given layout")
    validate_constraints(constraints, schema)

    work = anchor.values.copy()
    touched: set[str] = set()
    for d in constraints.directives:
        slot = schema.slot(d.slot)
        touched.add(d.slot)
        if d.kind in (SET, ADD_SOFT):
            if slot.kind == CATEGORICAL:
                offset, width = layout.slot_range(d.slot)
                work[offset : offset + width] = 0.0
                work[_value_coord(schema, layout, d.slot, d.value)] = 1.0
            else:
                work[_value_coord(schema, layout, d.slot, d.value)] = 1.0
        elif d.kind in (REMOVE, NEGATE):
            work[_value_coord(schema, layout, d.slot, d.value)] = 0.0

    delta = work - anchor.values
    mask = np.zeros(layout.total_dim)
    for name in touched:
        mask[layout.slot_slice(name)] = 1.0
    return (
        DeltaVector(delta, frozenset(touched), layout),
        MaskVector(mask),
    )


def render_delta_universal(
    delta: DeltaVector,
    layout: SliceLayout,
    seed: int = 7,
    slot_scales: dict[str, float] | None = None,
) -> EmbeddingVector:
    """Carry a delta into the universal space with the item transform (R . S),
    without normalization: in the entangled space a detail edit really is small.
    """
    scales = DEFAULT_SLOT_SCALES if slot_scales is None else slot_scales
    scaled = delta.values * layout.dim_scales(scales)
    rotated = rotation_matrix(seed, layout.total_dim) @ scaled
    return EmbeddingVector(rotated, layout)


# -- bulk encoders -------------------------------------------------------


def encode_catalog_disentangled(catalog: Catalog, schema: AttributeSchema, layout: SliceLayout) -> np.ndarray:
    _check_layout(schema, layout)
    n = len(catalog.items)
    matrix = np.zeros((n, layout.total_dim))
    for slot in schema.slots:
        offset, width = layout.slot_range(slot.name)
        index = {v: j for j, v in enumerate(slot.vocab)}
        if slot.kind == CATEGORICAL:
            for i, item in enumerate(catalog.items):
                value = item.attrs.get(slot.name)
                if value is not None:
                    matrix[i, offset + index[value]] = 1.0
        else:
            for i, item in enumerate(catalog.items):
                for detail in item.details:
                    j = index.get(detail)
                    if j is not None:
                        matrix[i, offset + j] = 1.0
            block = matrix[:, offset : offset + width]
            norms = np.linalg.norm(block, axis=1, keepdims=True)
            np.divide(block, norms, out=block, where=norms > 0)
    return matrix


def encode_catalog_universal(
    catalog: Catalog,
    schema: AttributeSchema,
    layout: SliceLayout,
    seed: int = 7,
    slot_scales: dict[str, float] | None = None,
) -> np.ndarray:
    scales = DEFAULT_SLOT_SCALES if slot_scales is None else slot_scales
    base = encode_catalog_disentangled(catalog, schema, layout)
    rotated = (base * layout.dim_scales(scales)) @ rotation_matrix(seed, layout.total_dim).T
    norms = np.linalg.norm(rotated, axis=1, keepdims=True)
    np.divide(rotated, norms, out=rotated, where=norms > 0)
    return rotated


# -- external embedding ingestion ----------------------------------------


def write_embeddings(path: str | Path, layout: SliceLayout, matrix: np.ndarray) -> None:
    """Binary ingestion format: magic, version, layout table, f32 rows."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[1] != layout.total_dim:
        raise DimensionError("matrix shape does not match layout")
    with open(path, "wb") as fh:
        fh.write(EMB_MAGIC)
        fh.write(struct.pack("<H", EMB_VERSION))
        fh.write(struct.pack("<H", len(layout.entries)))
        for name, offset, width in layout.entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", offset, width))
        fh.write(struct.pack("<I", matrix.shape[0]))
        fh.write(np.ascontiguousarray(matrix, dtype="<f4").tobytes())


def read_embeddings(path: str | Path) -> tuple[SliceLayout, np.ndarray]:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(EMB_MAGIC)] != EMB_MAGIC:
        raise FormatError("not an embedding file (bad magic)")
    pos = len(EMB_MAGIC)

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        out = struct.unpack_from(fmt, blob, pos)
        pos += size
        return out

    (version,) = take("<H")
    if version != EMB_VERSION:
        raise FormatError(f"unsupported embedding file version {version}")
    (n_entries,) = take("<H")
    entries = []
    for _ in range(n_entries):
        (name_len,) = take("<H")
        name = blob[pos : pos + name_len].decode("utf-8")
        pos += name_len
        offset, width = take("<II")
        entries.append((name, offset, width))
    layout = SliceLayout(entries=tuple(entries), total_dim=sum(w for _, _, w in entries))
    (n_rows,) = take("<I")
    data = np.frombuffer(blob, dtype="<f4", count=n_rows * layout.total_dim, offset=pos)
    return layout, data.reshape(n_rows, layout.total_dim).astype(np.float64)
