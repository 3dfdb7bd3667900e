import numpy as np
import pytest

from ammr.composer import WeightedQuery
from ammr.embedding import EmbeddingVector, SliceLayout
from ammr.errors import BuildError, DimensionError
from ammr.index import (
    IvfIndex,
    build_index,
    load_index,
    measure_recall,
    save_index,
    search,
)

LAYOUT = SliceLayout(entries=(("a", 0, 3), ("b", 3, 5)), total_dim=8)


def _ids(n):
    return [f"v{i:04d}" for i in range(n)]


def _vectors(n, rng):
    x = rng.standard_normal((n, LAYOUT.total_dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


def naive_weighted_topk(matrix, ids, query, slot_weights, k):
    """Independent re-implementation: python sort over per-row weighted cosine."""
    w = np.concatenate([np.full(width, slot_weights[name]) for name, _, width in LAYOUT.entries])
    scored = []
    for i in range(matrix.shape[0]):
        num = float(np.sum(w * query * matrix[i]))
        qn = float(np.sqrt(np.sum(w * query * query)))
        xn = float(np.sqrt(np.sum(w * matrix[i] * matrix[i])))
        score = num / (qn * xn) if qn > 0 and xn > 0 else 0.0
        scored.append((ids[i], score))
    scored.sort(key=lambda e: (-e[1], e[0]))
    return scored[:k]


def test_exact_matches_naive_oracle(rng):
    matrix = _vectors(60, rng)
    ids = _ids(60)
    index = build_index(matrix, ids, LAYOUT, kind="exact")
    for trial in range(10):
        qv = rng.standard_normal(LAYOUT.total_dim)
        weights = {"a": float(rng.uniform(0.1, 3.0)), "b": float(rng.uniform(0.1, 3.0))}
        query = WeightedQuery(EmbeddingVector(qv, LAYOUT), weights)
        got = search(index, query, k=9).entries
        expected = naive_weighted_topk(matrix, ids, qv, weights, 9)
        assert [g[0] for g in got] == [e[0] for e in expected]
        assert np.allclose([g[1] for g in got], [e[1] for e in expected], atol=1e-10)


def test_self_query_scores_one(rng):
    matrix = _vectors(20, rng)
    index = build_index(matrix, _ids(20), LAYOUT, kind="exact")
    hit = search(index, EmbeddingVector(matrix[7], LAYOUT), k=1)
    assert hit.entries[0][0] == "v0007"
    assert hit.entries[0][1] == pytest.approx(1.0, abs=1e-12)


def test_default_k_is_inside_candidate_band(rng):
    matrix = _vectors(600, rng)
    index = build_index(matrix, _ids(600), LAYOUT)
    result = search(index, EmbeddingVector(matrix[0], LAYOUT))
    assert len(result) == 300
    assert 200 <= result.truncated_at <= 500


def test_ivf_partition(rng):
    matrix = _vectors(1000, rng)
    index = build_index(matrix, _ids(1000), LAYOUT, kind="ivf", n_lists=16, seed=7)
    sizes = [len(lst) for lst in index.lists]
    assert sum(sizes) == 1000
    all_ordinals = np.concatenate(index.lists)
    assert len(np.unique(all_ordinals)) == 1000


def test_single_list_ivf_equals_exact(rng):
    matrix = _vectors(200, rng)
    exact = build_index(matrix, _ids(200), LAYOUT, kind="exact")
    ivf = build_index(matrix, _ids(200), LAYOUT, kind="ivf", n_lists=1, seed=0)
    q = EmbeddingVector(rng.standard_normal(LAYOUT.total_dim), LAYOUT)
    assert search(ivf, q, k=25, n_probe=1).entries == search(exact, q, k=25).entries


def test_full_probe_equals_exact(rng):
    matrix = _vectors(500, rng)
    exact = build_index(matrix, _ids(500), LAYOUT, kind="exact")
    ivf = build_index(matrix, _ids(500), LAYOUT, kind="ivf", n_lists=20, seed=3)
    for _ in range(5):
        q = EmbeddingVector(rng.standard_normal(LAYOUT.total_dim), LAYOUT)
        assert search(ivf, q, k=40, n_probe=20).entries == search(exact, q, k=40).entries


def test_recall_monotone_in_probes(rng):
    matrix = _vectors(2000, rng)
    ids = _ids(2000)
    exact = build_index(matrix, ids, LAYOUT, kind="exact")
    ivf = build_index(matrix, ids, LAYOUT, kind="ivf", n_lists=32, seed=9)
    queries = [EmbeddingVector(rng.standard_normal(LAYOUT.total_dim), LAYOUT) for _ in range(12)]
    recalls = [measure_recall(ivf, exact, queries, k=20, n_probe=p) for p in (1, 2, 4, 8, 16, 32)]
    assert all(b >= a for a, b in zip(recalls, recalls[1:]))
    assert recalls[-1] == 1.0
    assert recalls[0] < 1.0  # n_probe=1 on 32 lists misses something


def test_build_determinism(rng):
    matrix = _vectors(300, rng)
    a = build_index(matrix, _ids(300), LAYOUT, kind="ivf", n_lists=8, seed=21)
    b = build_index(matrix, _ids(300), LAYOUT, kind="ivf", n_lists=8, seed=21)
    assert np.array_equal(a.centroids, b.centroids)
    q = EmbeddingVector(rng.standard_normal(LAYOUT.total_dim), LAYOUT)
    assert search(a, q, k=10, n_probe=2).entries == search(b, q, k=10, n_probe=2).entries


def test_zero_weight_slot_annihilates(rng):
    matrix = _vectors(50, rng)
    index = build_index(matrix, _ids(50), LAYOUT)
    qv = rng.standard_normal(LAYOUT.total_dim)
    masked = qv.copy()
    masked[LAYOUT.slot_slice("b")] = 0.0
    # zero weight on b must rank like a query living only on slice a, with
    # per-row norms also ignoring slice b
    got = search(index, WeightedQuery(EmbeddingVector(qv, LAYOUT), {"a": 1.0, "b": 0.0}), k=50)
    trimmed = matrix.copy()
    trimmed[:, LAYOUT.slot_slice("b")] = 0.0
    expected = naive_weighted_topk(trimmed, _ids(50), masked, {"a": 1.0, "b": 1.0}, 50)
    assert [g[0] for g in got.entries] == [e[0] for e in expected]


def test_scale_invariance_power_of_two(rng):
    matrix = _vectors(80, rng)
    index = build_index(matrix, _ids(80), LAYOUT)
    qv = rng.standard_normal(LAYOUT.total_dim)
    base = search(index, EmbeddingVector(qv, LAYOUT), k=30).ids()
    for c in (0.25, 4.0, 1024.0):
        scaled = search(index, EmbeddingVector(c * qv, LAYOUT), k=30).ids()
        assert scaled == base


def test_build_errors(rng):
    with pytest.raises(BuildError):
        build_index(np.zeros((0, 8)), [], LAYOUT)
    matrix = _vectors(5, rng)
    with pytest.raises(BuildError):
        build_index(matrix, _ids(5), LAYOUT, kind="ivf", n_lists=6)
    with pytest.raises(DimensionError):
        search(build_index(matrix, _ids(5), LAYOUT), EmbeddingVector(matrix[0], LAYOUT), k=0)


def test_rows_sorted_by_id(rng):
    matrix = _vectors(4, rng)
    ids = ["zz", "aa", "mm", "bb"]
    index = build_index(matrix, ids, LAYOUT)
    assert list(index.item_ids) == ["aa", "bb", "mm", "zz"]
    assert np.array_equal(index.vector_for("zz"), matrix[0])


def test_save_load_round_trip(tmp_path, rng):
    matrix = _vectors(120, rng)
    ids = _ids(120)
    for kind, kwargs in (("exact", {}), ("ivf", {"n_lists": 6, "seed": 2})):
        index = build_index(matrix, ids, LAYOUT, kind=kind, **kwargs)
        path = tmp_path / f"{kind}.bin"
        save_index(index, path)
        loaded = load_index(path)
        assert loaded.kind == kind
        assert loaded.item_ids == index.item_ids
        assert loaded.layout == LAYOUT
        # f32 storage: searches agree on the quantized vectors
        q = EmbeddingVector(matrix[11], LAYOUT)
        requantized = build_index(
            index.vectors.astype(np.float32).astype(np.float64), ids, LAYOUT, kind="exact"
        )
        assert search(loaded, q, k=5, n_probe=6).ids() == search(requantized, q, k=5).ids()
        if kind == "ivf":
            assert isinstance(loaded, IvfIndex)
            assert [l.tolist() for l in loaded.lists] == [l.tolist() for l in index.lists]
