"""Query composition operators and the triplet/orthogonality trainer.

Four operator variants share the signature (anchor vector, text encoding) ->
query vector: a plain additive baseline, the slice-wise delta shift, and the
two parametric gating forms (TIRG and gated FiLM, identical algebra, distinct
variant tags so their parameterizations may diverge).
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .catalog import AttributeSchema, BINARY_DETAIL, CATEGORICAL, Item
from .constraints import ConstraintSet, Directive, REMOVE
from .embedding import (
    DeltaVector,
    EmbeddingVector,
    SliceLayout,
    encode_constraints,
    encode_item_disentangled,
)
from .errors import DimensionError, FormatError, TrainError

VARIANTS = ("baseline", "delta_shift", "tirg", "film")
PARAMS_MAGIC = b"AMMRCMP"
PARAMS_VERSION = 1


@dataclass
class WeightedQuery:
    """A composed query plus the per-slot weights that tilt similarity."""

    vector: EmbeddingVector
    slot_weights: dict[str, float]
    warnings: tuple[str, ...] = ()

    @classmethod
    def uniform(cls, vector: EmbeddingVector) -> "WeightedQuery":
        return cls(vector=vector, slot_weights={name: 1.0 for name in vector.layout.slot_names})


@dataclass
class ComposerParams:
    w0: np.ndarray
    w1: np.ndarray
    bias: np.ndarray
    variant: str

    def __post_init__(self):
        self.w0 = np.asarray(self.w0, dtype=np.float64)
        self.w1 = np.asarray(self.w1, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        d = self.bias.shape[0]
        if self.w0.shape != (d, d) or self.w1.shape != (d, d):
            raise DimensionError("composer matrices must be square and match the bias length")
        for arr in (self.w0, self.w1, self.bias):
            if not np.all(np.isfinite(arr)):
                raise DimensionError("composer parameters contain non-finite entries")
        if self.variant not in VARIANTS:
            raise DimensionError(f"unknown composer variant {self.variant!r}")

    @property
    def dim(self) -> int:
        return self.bias.shape[0]

    @classmethod
    def identity_init(cls, dim: int, variant: str) -> "ComposerParams":
        return cls(w0=np.eye(dim), w1=np.zeros((dim, dim)), bias=np.zeros(dim), variant=variant)

    def copy(self) -> "ComposerParams":
        return ComposerParams(self.w0.copy(), self.w1.copy(), self.bias.copy(), self.variant)


@dataclass(frozen=True)
class Triplet:
    anchor_item: Item
    constraints: ConstraintSet
    positive: Item
    negative: Item


@dataclass
class TrainConfig:
    margin: float = 0.2
    learning_rate: float = 0.05
    epochs: int = 300
    ortho_weight: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.margin <= 0 or self.learning_rate <= 0:
            raise TrainError("margin and learning_rate must be positive")


@dataclass
class TrainResult:
    params: ComposerParams
    losses: list[float] = field(default_factory=list)

    @property
    def initial_loss(self) -> float:
        return self.losses[0]

    @property
    def final_loss(self) -> float:
        return self.losses[-1]


def _check_same_layout(a: EmbeddingVector, b: EmbeddingVector) -> None:
    if a.layout != b.layout:
        raise DimensionError("vectors use different layouts")


def compose_baseline(v: EmbeddingVector, t_text: EmbeddingVector) -> EmbeddingVector:
    """q = normalize(v + t); zero text or a degenerate zero sum returns the anchor."""
    _check_same_layout(v, t_text)
    if not t_text.values.any():
        return v.copy()
    total = v.values + t_text.values
    norm = np.linalg.norm(total)
    if norm < 1e-12:
        return v.copy()
    return EmbeddingVector(total / norm, v.layout)


def compose_delta_shift(v: EmbeddingVector, delta: DeltaVector, layout: SliceLayout) -> EmbeddingVector:
    """Slice-wise addition: touched slices get the delta and are re-normalized,
    untouched coordinates are carried over bit-identically."""
    if v.layout != layout or delta.layout != layout:
        raise DimensionError("delta/anchor layouts disagree")
    out = v.values.copy()
    for name in delta.touched_slots:
        sl = layout.slot_slice(name)
        shifted = v.values[sl] + delta.values[sl]
        norm = np.linalg.norm(shifted)
        out[sl] = shifted / norm if norm > 0 else shifted
    return EmbeddingVector(out, layout)


def _gated(v: EmbeddingVector, t: DeltaVector, params: ComposerParams, variant: str) -> EmbeddingVector:
    if params.variant != variant:
        raise DimensionError(f"params tagged {params.variant!r}, expected {variant!r}")
    if params.dim != v.layout.total_dim:
        raise DimensionError("params dimension does not match the layout")
    mask = _sigmoid(params.w1 @ t.values + params.bias)
    q = params.w0 @ v.values + mask * v.values
    norm = np.linalg.norm(q)
    if norm > 0:
        q = q / norm
    return EmbeddingVector(q, v.layout)


def compose_tirg(v: EmbeddingVector, t: DeltaVector, params: ComposerParams) -> EmbeddingVector:
    """q = W0 v + sigmoid(W1 t + bias) * v, normalized."""
    return _gated(v, t, params, "tirg")


def compose_film(v: EmbeddingVector, t: DeltaVector, params: ComposerParams) -> EmbeddingVector:
    """Gated-FiLM form; same algebra as TIRG under a distinct variant tag."""
    return _gated(v, t, params, "film")


def apply_memory(
    q: EmbeddingVector,
    memory_weights: dict[str, float],
    layout: SliceLayout,
) -> WeightedQuery:
    """Attach per-slot similarity weights; unknown slots are ignored with a warning."""
    weights = {name: 1.0 for name in layout.slot_names}
    warnings = []
    for name, w in memory_weights.items():
        if name not in weights:
            warnings.append(f"ignored weight for unknown slot {name!r}")
            continue
        if w < 0:
            raise DimensionError(f"negative weight for slot {name!r}")
        weights[name] = float(w)
    return WeightedQuery(vector=q, slot_weights=weights, warnings=tuple(warnings))


def apply_value_multipliers(
    q: EmbeddingVector,
    multipliers: dict[tuple[str, str], float],
    schema: AttributeSchema,
    layout: SliceLayout,
) -> EmbeddingVector:
    """Scale individual value coordinates of the query (session feedback)."""
    out = q.values.copy()
    for (slot_name, value), mult in multipliers.items():
        if not schema.has_slot(slot_name):
            continue
        slot = schema.slot(slot_name)
        if value not in slot.vocab:
            continue
        offset, _ = layout.slot_range(slot_name)
        out[offset + slot.vocab.index(value)] *= mult
    return EmbeddingVector(out, layout)


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- training --------------------------------------------------------------


def validate_triplet(triplet: Triplet, schema: AttributeSchema) -> None:
    """positive must satisfy the constraints and match the anchor on untouched
    slots; negative must violate at least one hard constraint."""
    from .ranking import item_satisfies  # late import; ranking depends on this module

    touched = triplet.constraints.touched_slots()
    for slot in schema.slots:
        if slot.name in touched:
            continue
        if slot.kind == BINARY_DETAIL:
            if set(triplet.positive.details) != set(triplet.anchor_item.details):
                raise TrainError(f"positive {triplet.positive.id} edits untouched detail slot")
        elif triplet.positive.attrs.get(slot.name) != triplet.anchor_item.attrs.get(slot.name):
            raise TrainError(f"positive {triplet.positive.id} differs on untouched slot {slot.name}")
    unsatisfied = [
        d.id for d in triplet.constraints.hard() if not item_satisfies(triplet.positive, d, schema)
    ]
    if unsatisfied:
        raise TrainError(f"positive {triplet.positive.id} violates {unsatisfied}")
    if all(item_satisfies(triplet.negative, d, schema) for d in triplet.constraints.hard()):
        raise TrainError(f"negative {triplet.negative.id} violates nothing")


@dataclass
class _Batch:
    v: np.ndarray  # (B, d) anchors
    t: np.ndarray  # (B, d) constraint deltas
    p: np.ndarray  # (B, d) unit positives
    n: np.ndarray  # (B, d) unit negatives
    slot_mask: np.ndarray  # (S, d) indicator of each slot's coordinates
    slot_of_dim: np.ndarray  # (d,) slot ordinal per coordinate


def _prepare_batch(
    triplets: list[Triplet], layout: SliceLayout, schema: AttributeSchema
) -> _Batch:
    if not triplets:
        raise TrainError("need at least one triplet")
    v, t, p, n = [], [], [], []
    for tri in triplets:
        validate_triplet(tri, schema)
        anchor = encode_item_disentangled(tri.anchor_item, schema, layout)
        delta, _ = encode_constraints(tri.constraints, schema, layout, anchor)
        v.append(anchor.values)
        t.append(delta.values)
        p.append(_unit(encode_item_disentangled(tri.positive, schema, layout).values))
        n.append(_unit(encode_item_disentangled(tri.negative, schema, layout).values))
    n_slots = len(layout.entries)
    slot_mask = np.zeros((n_slots, layout.total_dim))
    for i, (_, offset, width) in enumerate(layout.entries):
        slot_mask[i, offset : offset + width] = 1.0
    return _Batch(
        v=np.array(v), t=np.array(t), p=np.array(p), n=np.array(n),
        slot_mask=slot_mask, slot_of_dim=layout.slot_index_of_dim(),
    )


def _unit(x: np.ndarray) -> np.ndarray:
    norm = np.linalg.norm(x)
    return x / norm if norm > 0 else x


def _loss_and_grad(params: ComposerParams, batch: _Batch, margin: float, lam: float):
    """Hinge ranking loss plus cross-slot contribution orthogonality.

    The orthogonality term penalizes the composer for mixing slots: with
    u_s the output mass produced from input slice s alone, it sums
    <u_s, u_s'>^2 over distinct slot pairs. At block-diagonal W0 the
    contributions have disjoint support and the penalty vanishes.
    """
    V, T, P, N = batch.v, batch.t, batch.p, batch.n
    B, d = V.shape

    Z = T @ params.w1.T + params.bias
    M = _sigmoid(Z)
    MV = M * V
    U = V @ params.w0.T + MV
    norms = np.linalg.norm(U, axis=1, keepdims=True)
    safe = np.where(norms > 0, norms, 1.0)
    Q = U / safe

    sp = np.sum(Q * P, axis=1)
    sn = np.sum(Q * N, axis=1)
    h = margin - sp + sn
    active = h > 0
    hinge_loss = float(np.sum(np.where(active, h, 0.0)))

    # per-slot contributions: u_s = W0[:, slice_s] v_s + (m * v restricted to s)
    VS = V[:, None, :] * batch.slot_mask[None, :, :]  # (B, S, d) input per slot
    UC = np.einsum("bsj,ij->bsi", VS, params.w0) + MV[:, None, :] * batch.slot_mask[None, :, :]
    C = np.einsum("bsi,bti->bst", UC, UC)
    S = C.shape[1]
    off = C * (1.0 - np.eye(S)[None, :, :])
    ortho_loss = float(np.sum(off * off))

    loss = hinge_loss + lam * ortho_loss
    if not np.isfinite(loss):
        raise TrainError("loss is non-finite")

    # hinge gradient through the normalization
    dQ = active[:, None] * (N - P)
    dU_hinge = (dQ - Q * np.sum(dQ * Q, axis=1, keepdims=True)) / safe

    # orthogonality gradient: dO/dUC = 4 * offdiag(C) @ UC, scaled by lambda
    dUC = 4.0 * lam * np.einsum("bst,bti->bsi", off, UC)

    # total per-slot gradient: the hinge part reaches every contribution equally
    G = dU_hinge[:, None, :] + dUC  # (B, S, d)

    grad_w0 = np.einsum("bsi,bsj->ij", G, VS)
    g_mv = G[np.arange(B)[:, None], batch.slot_of_dim[None, :], np.arange(d)[None, :]]
    g_m = g_mv * V
    g_z = g_m * M * (1.0 - M)
    grad_w1 = g_z.T @ T
    grad_bias = np.sum(g_z, axis=0)

    return loss, grad_w0, grad_w1, grad_bias


def train_composer(
    triplets: list[Triplet],
    config: TrainConfig,
    layout: SliceLayout,
    schema: AttributeSchema,
    variant: str = "tirg",
) -> TrainResult:
    """Full-batch gradient descent with halving on loss increase.

    Deterministic for a fixed (triplets, config); epochs=0 returns the
    identity initialization untouched.
    """
    if variant not in ("tirg", "film"):
        raise TrainError(f"variant {variant!r} has no trainable parameters")
    batch = _prepare_batch(triplets, layout, schema)
    params = ComposerParams.identity_init(layout.total_dim, variant)
    lr = config.learning_rate

    loss, gw0, gw1, gb = _loss_and_grad(params, batch, config.margin, config.ortho_weight)
    losses = [loss]
    for _ in range(config.epochs):
        while True:
            trial = ComposerParams(
                params.w0 - lr * gw0, params.w1 - lr * gw1, params.bias - lr * gb, variant
            )
            new_loss, nw0, nw1, nb = _loss_and_grad(trial, batch, config.margin, config.ortho_weight)
            if new_loss <= loss or lr < 1e-12:
                break
            lr /= 2.0
        if new_loss > loss:
            losses.append(loss)  # step rejected even at the smallest rate
            continue
        params, loss, gw0, gw1, gb = trial, new_loss, nw0, nw1, nb
        losses.append(loss)
    return TrainResult(params=params, losses=losses)


def triplet_accuracy(
    params: ComposerParams,
    triplets: list[Triplet],
    layout: SliceLayout,
    schema: AttributeSchema,
) -> float:
    """Fraction of triplets with sim(q, positive) > sim(q, negative)."""
    compose = compose_tirg if params.variant == "tirg" else compose_film
    correct = 0
    for tri in triplets:
        anchor = encode_item_disentangled(tri.anchor_item, schema, layout)
        delta, _ = encode_constraints(tri.constraints, schema, layout, anchor)
        q = compose(anchor, delta, params)
        p = _unit(encode_item_disentangled(tri.positive, schema, layout).values)
        n = _unit(encode_item_disentangled(tri.negative, schema, layout).values)
        if float(q.values @ p) > float(q.values @ n):
            correct += 1
    return correct / len(triplets)


def make_detail_edit_triplets(
    schema: AttributeSchema,
    n: int,
    seed: int,
    detail: str = "pocket",
) -> list[Triplet]:
    """Synthetic remove-a-detail task: positives drop the detail, negatives
    keep it; categorical attrs are shared so the detail slice is the signal."""
    detail_slot = next(s for s in schema.slots if s.kind == BINARY_DETAIL)
    if detail not in detail_slot.vocab:
        raise TrainError(f"unknown detail {detail!r}")
    others = [v for v in detail_slot.vocab if v != detail]
    cat_slots = [s for s in schema.slots if s.kind == CATEGORICAL]
    rng = np.random.default_rng(seed)
    constraints = ConstraintSet(
        directives=(Directive(kind=REMOVE, slot=detail_slot.name, value=detail, id="c0"),),
        raw_text=f"without a {detail}",
    )
    triplets = []
    for i in range(n):
        attrs = {s.name: s.vocab[rng.integers(len(s.vocab))] for s in cat_slots}
        anchor_extra = [v for v in others if rng.random() < 0.4]
        pos_extra = [v for v in others if rng.random() < 0.4]
        neg_extra = [v for v in others if rng.random() < 0.4]
        base = dict(brand="Aster", price_cents=5000, tags=())
        triplets.append(
            Triplet(
                anchor_item=Item(id=f"tri-{i}-a", attrs=attrs, details=(detail, *anchor_extra), **base),
                constraints=constraints,
                positive=Item(id=f"tri-{i}-p", attrs=attrs, details=tuple(pos_extra), **base),
                negative=Item(id=f"tri-{i}-n", attrs=attrs, details=(detail, *neg_extra), **base),
            )
        )
    return triplets


# -- triplet persistence ------------------------------------------------------


def save_triplets(triplets: list[Triplet], path: str | Path) -> None:
    """JSONL, one self-contained triplet per line (full item records)."""
    import json

    from .catalog import serialize_item_record

    def record(item: Item) -> dict:
        return json.loads(serialize_item_record(item))

    with open(path, "w", encoding="utf-8") as fh:
        for tri in triplets:
            doc = {
                "anchor": record(tri.anchor_item),
                "constraints": [
                    {"kind": d.kind, "slot": d.slot, "value": d.value}
                    for d in tri.constraints.directives
                ],
                "positive": record(tri.positive),
                "negative": record(tri.negative),
            }
            fh.write(json.dumps(doc, separators=(",", ":")) + "\n")


def load_triplets(path: str | Path, schema: AttributeSchema) -> list[Triplet]:
    import json

    from .catalog import parse_item_record

    triplets = []
    with open(path, "r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            directives = tuple(
                Directive(kind=c["kind"], slot=c["slot"], value=c["value"], id=f"c{i}")
                for i, c in enumerate(doc["constraints"])
            )
            triplets.append(
                Triplet(
                    anchor_item=parse_item_record(json.dumps(doc["anchor"]), schema, line_no),
                    constraints=ConstraintSet(directives=directives),
                    positive=parse_item_record(json.dumps(doc["positive"]), schema, line_no),
                    negative=parse_item_record(json.dumps(doc["negative"]), schema, line_no),
                )
            )
    return triplets


# -- params persistence -----------------------------------------------------


def write_params(path: str | Path, params: ComposerParams) -> None:
    with open(path, "wb") as fh:
        fh.write(PARAMS_MAGIC)
        fh.write(struct.pack("<H", PARAMS_VERSION))
        fh.write(struct.pack("<B", VARIANTS.index(params.variant)))
        fh.write(struct.pack("<I", params.dim))
        fh.write(np.ascontiguousarray(params.w0, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.w1, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(params.bias, dtype="<f8").tobytes())


def read_params(path: str | Path) -> ComposerParams:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(PARAMS_MAGIC)] != PARAMS_MAGIC:
        raise FormatError("not a composer params file (bad magic)")
    pos = len(PARAMS_MAGIC)
    version, variant_idx = struct.unpack_from("<HB", blob, pos)
    pos += struct.calcsize("<HB")
    if version != PARAMS_VERSION:
        raise FormatError(f"unsupported params version {version}")
    (dim,) = struct.unpack_from("<I", blob, pos)
    pos += 4
    size = dim * dim * 8
    w0 = np.frombuffer(blob, dtype="<f8", count=dim * dim, offset=pos).reshape(dim, dim)
    pos += size
    w1 = np.frombuffer(blob, dtype="<f8", count=dim * dim, offset=pos).reshape(dim, dim)
    pos += size
    bias = np.frombuffer(blob, dtype="<f8", count=dim, offset=pos)
    return ComposerParams(w0=w0.copy(), w1=w1.copy(), bias=bias.copy(), variant=VARIANTS[variant_idx])
