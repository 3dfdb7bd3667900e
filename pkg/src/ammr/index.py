"""Exact and inverted-file nearest-neighbour search over catalog embeddings.

Similarity is the slot-weighted cosine
``sim_w(q, x) = sum_s w_s <q_s, x_s> / (|q|_w |x|_w)``; ties are broken by
ascending item id. Rows are stored sorted by item id so the kernels' row-index
tie-break coincides with the id tie-break.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernels
from .composer import WeightedQuery
from .embedding import EmbeddingVector, SliceLayout
from .errors import BuildError, DimensionError, FormatError, UnknownItemError

INDEX_MAGIC = b"AMMRIDX"
INDEX_VERSION = 1

KIND_EXACT = "exact"
KIND_IVF = "ivf"

# Defaults sit inside the 200-500 candidate band; lists/probe match the
# shipped recall report.
DEFAULT_K = 300
DEFAULT_N_LISTS = 256
DEFAULT_N_PROBE = 16
KMEANS_ITERS = 20


@dataclass
class CandidateSet:
    entries: list[tuple[str, float]]
    query_id: str = ""
    truncated_at: int = 0
    # critic demotion reorders entries on purpose; it clears this flag
    sorted_scores: bool = True

    def __post_init__(self):
        ids = [i for i, _ in self.entries]
        if len(set(ids)) != len(ids):
            raise BuildError("candidate set contains duplicate ids")
        if self.sorted_scores:
            scores = [s for _, s in self.entries]
            if any(a < b for a, b in zip(scores, scores[1:])):
                raise BuildError("candidate scores must be non-increasing")

    def ids(self) -> list[str]:
        return [i for i, _ in self.entries]

    def __len__(self):
        return len(self.entries)


@dataclass(eq=False)
class ExactIndex:
    vectors: np.ndarray  # (n, d), rows in ascending item-id order
    item_ids: tuple[str, ...]
    layout: SliceLayout
    _slot_sqnorms: np.ndarray = field(init=False, repr=False)
    _ordinal: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.item_ids):
            raise BuildError("vector row count must equal the id count")
        if self.vectors.shape[1] != self.layout.total_dim:
            raise DimensionError("vector width does not match the layout")
        if not np.all(np.isfinite(self.vectors)):
            raise BuildError("index vectors contain non-finite entries")
        self._slot_sqnorms = _slot_sqnorms(self.vectors, self.layout)
        self._ordinal = {item_id: i for i, item_id in enumerate(self.item_ids)}

    def __len__(self):
        return self.vectors.shape[0]

    @property
    def kind(self) -> str:
        return KIND_EXACT

    def ordinal_of(self, item_id: str) -> int:
        try:
            return self._ordinal[item_id]
        except KeyError:
            raise UnknownItemError(f"id {item_id!r} not in index") from None

    def vector_for(self, item_id: str) -> np.ndarray:
        return self.vectors[self.ordinal_of(item_id)]

    def row_weighted_norms(self, slot_weights: np.ndarray) -> np.ndarray:
        return np.sqrt(self._slot_sqnorms @ slot_weights)


@dataclass(eq=False)
class IvfIndex(ExactIndex):
    centroids: np.ndarray = None
    lists: list[np.ndarray] = None

    def __post_init__(self):
        super().__post_init__()
        self.centroids = np.ascontiguousarray(self.centroids, dtype=np.float64)
        if not np.all(np.isfinite(self.centroids)):
            raise BuildError("centroids contain non-finite entries")
        counts = sum(len(lst) for lst in self.lists)
        seen = np.concatenate([lst for lst in self.lists]) if self.lists else np.array([])
        if counts != len(self) or len(np.unique(seen)) != len(self):
            raise BuildError("inverted lists must partition the ordinals")

    @property
    def kind(self) -> str:
        return KIND_IVF

    @property
    def n_lists(self) -> int:
        return self.centroids.shape[0]


def _slot_sqnorms(matrix: np.ndarray, layout: SliceLayout) -> np.ndarray:
    out = np.empty((matrix.shape[0], len(layout.entries)))
    for i, (_, offset, width) in enumerate(layout.entries):
        block = matrix[:, offset : offset + width]
        out[:, i] = np.einsum("ij,ij->i", block, block)
    return out


def _kmeans(matrix: np.ndarray, n_lists: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Plain Lloyd iterations, fixed count, seeded row-sample init."""
    rng = np.random.default_rng(seed)
    n = matrix.shape[0]
    centroids = matrix[rng.choice(n, size=n_lists, replace=False)].copy()
    labels = kernels.assign_nearest(matrix, centroids)
    for _ in range(KMEANS_ITERS):
        for c in range(n_lists):
            members = matrix[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
        labels = kernels.assign_nearest(matrix, centroids)
    return centroids, labels


def build_index(
    embeddings: np.ndarray,
    item_ids: Sequence[str],
    layout: SliceLayout,
    kind: str = KIND_EXACT,
    n_lists: int = DEFAULT_N_LISTS,
    seed: int = 0,
) -> ExactIndex:
    """Build an exact or IVF index; rows are re-sorted by ascending item id."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.ndim != 2 or embeddings.shape[0] == 0:
        raise BuildError("need a non-empty 2-d embedding matrix")
    if len(item_ids) != embeddings.shape[0]:
        raise BuildError("id count does not match the matrix")
    order = np.argsort(np.asarray(item_ids, dtype=object), kind="stable")
    ids_sorted = tuple(item_ids[i] for i in order)
    matrix = np.ascontiguousarray(embeddings[order])

    if kind == KIND_EXACT:
        return ExactIndex(vectors=matrix, item_ids=ids_sorted, layout=layout)
    if kind != KIND_IVF:
        raise BuildError(f"unknown index kind {kind!r}")
    n = matrix.shape[0]
    if n_lists < 1 or n_lists > n:
        raise BuildError(f"n_lists must be in [1, {n}], got {n_lists}")
    centroids, labels = _kmeans(matrix, n_lists, seed)
    lists = [np.flatnonzero(labels == c).astype(np.intp) for c in range(n_lists)]
    return IvfIndex(
        vectors=matrix, item_ids=ids_sorted, layout=layout, centroids=centroids, lists=lists
    )


def _as_weighted(query: WeightedQuery | EmbeddingVector) -> WeightedQuery:
    if isinstance(query, EmbeddingVector):
        return WeightedQuery.uniform(query)
    return query


def search(
    index: ExactIndex,
    query: WeightedQuery | EmbeddingVector,
    k: int = DEFAULT_K,
    n_probe: int = DEFAULT_N_PROBE,
    query_id: str = "",
) -> CandidateSet:
    """Top-k by weighted cosine; IVF scans only the n_probe nearest lists."""
    wquery = _as_weighted(query)
    q = wquery.vector
    if q.layout != index.layout:
        raise DimensionError("query layout does not match the index")
    if k < 1:
        raise DimensionError("k must be >= 1")
    k = min(k, len(index))

    slot_w = np.array([wquery.slot_weights.get(name, 1.0) for name in index.layout.slot_names])
    dim_w = np.repeat(slot_w, [width for _, _, width in index.layout.entries])
    wq = q.values * dim_w
    q_norm = float(np.sqrt(np.sum(dim_w * q.values * q.values)))
    row_norms = index.row_weighted_norms(slot_w)

    subset = None
    if isinstance(index, IvfIndex):
        n_probe = max(1, min(n_probe, index.n_lists))
        dists = np.sum((index.centroids - q.values) ** 2, axis=1)
        probe = np.argsort(dists, kind="stable")[:n_probe]
        chosen = [index.lists[c] for c in probe if len(index.lists[c])]
        if not chosen:
            return CandidateSet(entries=[], query_id=query_id, truncated_at=k)
        subset = np.concatenate(chosen)

    rows, scores = kernels.topk_scan(index.vectors, wq, row_norms, q_norm, k, subset)
    entries = [(index.item_ids[r], float(s)) for r, s in zip(rows, scores)]
    return CandidateSet(entries=entries, query_id=query_id, truncated_at=k)


def measure_recall(
    index: IvfIndex,
    oracle: ExactIndex,
    queries: Sequence[WeightedQuery | EmbeddingVector],
    k: int = 100,
    n_probe: int = DEFAULT_N_PROBE,
) -> float:
    """Mean |ivf_topk intersect exact_topk| / k over the query set."""
    total = 0.0
    for i, query in enumerate(queries):
        approx = set(search(index, query, k=k, n_probe=n_probe, query_id=str(i)).ids())
        exact = set(search(oracle, query, k=k, query_id=str(i)).ids())
        total += len(approx & exact) / k
    return total / len(queries)


# -- persistence -------------------------------------------------------------


def save_index(index: ExactIndex, path: str | Path) -> None:
    with open(path, "wb") as fh:
        fh.write(INDEX_MAGIC)
        fh.write(struct.pack("<H", INDEX_VERSION))
        fh.write(struct.pack("<B", 0 if index.kind == KIND_EXACT else 1))
        fh.write(struct.pack("<H", len(index.layout.entries)))
        for name, offset, width in index.layout.entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            fh.write(struct.pack("<II", offset, width))
        fh.write(struct.pack("<I", len(index)))
        for item_id in index.item_ids:
            raw = item_id.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
        fh.write(np.ascontiguousarray(index.vectors, dtype="<f4").tobytes())
        if isinstance(index, IvfIndex):
            fh.write(struct.pack("<I", index.n_lists))
            fh.write(np.ascontiguousarray(index.centroids, dtype="<f4").tobytes())
            for lst in index.lists:
                fh.write(struct.pack("<I", len(lst)))
                fh.write(np.ascontiguousarray(lst, dtype="<u4").tobytes())


def load_index(path: str | Path) -> ExactIndex:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[: len(INDEX_MAGIC)] != INDEX_MAGIC:
        raise FormatError("not an index file (bad magic)")
    pos = len(INDEX_MAGIC)

    def take(fmt):
        nonlocal pos
        out = struct.unpack_from(fmt, blob, pos)
        pos += struct.calcsize(fmt)
        return out

    (version,) = take("<H")
    if version != INDEX_VERSION:
        raise FormatError(f"unsupported index version {version}")
    (kind_code,) = take("<B")
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
    ids = []
    for _ in range(n_rows):
        (id_len,) = take("<H")
        ids.append(blob[pos : pos + id_len].decode("utf-8"))
        pos += id_len
    count = n_rows * layout.total_dim
    vectors = np.frombuffer(blob, dtype="<f4", count=count, offset=pos).astype(np.float64)
    pos += count * 4
    vectors = vectors.reshape(n_rows, layout.total_dim)
    if kind_code == 0:
        return ExactIndex(vectors=vectors, item_ids=tuple(ids), layout=layout)
    (n_lists,) = take("<I")
    ccount = n_lists * layout.total_dim
    centroids = np.frombuffer(blob, dtype="<f4", count=ccount, offset=pos).astype(np.float64)
    pos += ccount * 4
    lists = []
    for _ in range(n_lists):
        (length,) = take("<I")
        lst = np.frombuffer(blob, dtype="<u4", count=length, offset=pos).astype(np.intp)
        pos += length * 4
        lists.append(lst)
    return IvfIndex(
        vectors=vectors,
        item_ids=tuple(ids),
        layout=layout,
        centroids=centroids.reshape(n_lists, layout.total_dim),
        lists=lists,
    )
