import numpy as np
import pytest

from ammr.composer import (
    ComposerParams,
    WeightedQuery,
    apply_memory,
    apply_value_multipliers,
    compose_baseline,
    compose_delta_shift,
    compose_film,
    compose_tirg,
)
from ammr.constraints import ConstraintSet, Directive
from ammr.embedding import (
    EmbeddingVector,
    encode_constraints,
    encode_item_disentangled,
)
from ammr.errors import DimensionError
from ammr.index import build_index, search

from conftest import random_constraints, random_item
from test_embedding import make_item


def test_baseline_identity(schema, layout):
    v = encode_item_disentangled(make_item(schema), schema, layout)
    zero = EmbeddingVector(np.zeros(layout.total_dim), layout)
    q = compose_baseline(v, zero)
    assert np.array_equal(q.values, v.values)


def test_baseline_antipodal_degenerate(layout):
    vals = np.zeros(layout.total_dim)
    vals[0] = 1.0
    v = EmbeddingVector(vals, layout)
    t = EmbeddingVector(-vals, layout)
    q = compose_baseline(v, t)
    assert np.array_equal(q.values, v.values)


def test_baseline_normalizes(schema, layout):
    v = encode_item_disentangled(make_item(schema), schema, layout)
    t = EmbeddingVector(np.full(layout.total_dim, 0.1), layout)
    q = compose_baseline(v, t)
    assert np.isclose(np.linalg.norm(q.values), 1.0)


def test_delta_shift_zero_delta_bit_exact(schema, layout):
    v = encode_item_disentangled(make_item(schema), schema, layout)
    delta, _ = encode_constraints(ConstraintSet(directives=()), schema, layout, v)
    q = compose_delta_shift(v, delta, layout)
    assert np.array_equal(q.values, v.values)


def test_delta_shift_set_color(schema, layout):
    v = encode_item_disentangled(make_item(schema, color="blue"), schema, layout)
    cs = ConstraintSet(directives=(Directive("set", "color", "black", "c0"),))
    delta, _ = encode_constraints(cs, schema, layout, v)
    q = compose_delta_shift(v, delta, layout)
    color = schema.slot("color")
    expected = np.zeros(len(color.vocab))
    expected[color.vocab.index("black")] = 1.0
    assert np.array_equal(q.values[layout.slot_slice("color")], expected)
    outside = np.ones(layout.total_dim, dtype=bool)
    outside[layout.slot_slice("color")] = False
    assert np.array_equal(q.values[outside], v.values[outside])


def test_delta_shift_remove_pocket_renormalizes(schema, layout):
    # two active details; dropping one leaves a unit slice on the survivor
    v = encode_item_disentangled(make_item(schema, details=("pocket", "belt")), schema, layout)
    cs = ConstraintSet(directives=(Directive("remove", "detail", "pocket", "c0"),))
    delta, _ = encode_constraints(cs, schema, layout, v)
    q = compose_delta_shift(v, delta, layout)
    det = q.values[layout.slot_slice("detail")]
    assert det[0] == 0.0  # pocket
    assert det[1] == pytest.approx(1.0)  # belt, renormalized from 1/sqrt(2)
    assert np.isclose(np.linalg.norm(det), 1.0)


def test_delta_shift_locality_random(schema, layout, rng):
    for _ in range(100):
        v = encode_item_disentangled(random_item(schema, rng), schema, layout)
        cs = random_constraints(schema, rng)
        delta, _ = encode_constraints(cs, schema, layout, v)
        q = compose_delta_shift(v, delta, layout)
        for name in layout.slot_names:
            if name not in delta.touched_slots:
                sl = layout.slot_slice(name)
                assert np.array_equal(q.values[sl], v.values[sl])


@pytest.mark.parametrize("compose,variant", [(compose_tirg, "tirg"), (compose_film, "film")])
def test_gated_identity_init(compose, variant, layout, rng):
    params = ComposerParams.identity_init(layout.total_dim, variant)
    for _ in range(20):
        vals = rng.standard_normal(layout.total_dim)
        v = EmbeddingVector(vals / np.linalg.norm(vals), layout)
        t = EmbeddingVector(rng.standard_normal(layout.total_dim), layout)
        from ammr.embedding import DeltaVector

        delta = DeltaVector(t.values, frozenset(layout.slot_names), layout)
        q = compose(v, delta, params)
        # mask is exactly 0.5 everywhere -> q ~ 1.5 v, same direction
        assert float(q.values @ v.values) == pytest.approx(1.0, abs=1e-12)


def test_gated_saturated_bias(layout, rng):
    from ammr.embedding import DeltaVector

    params = ComposerParams(
        w0=np.eye(layout.total_dim),
        w1=np.zeros((layout.total_dim, layout.total_dim)),
        bias=np.full(layout.total_dim, -50.0),
        variant="tirg",
    )
    vals = rng.standard_normal(layout.total_dim)
    v = EmbeddingVector(vals / np.linalg.norm(vals), layout)
    delta = DeltaVector(np.zeros(layout.total_dim), frozenset(), layout)
    q = compose_tirg(v, delta, params)
    assert float(q.values @ v.values) == pytest.approx(1.0, abs=1e-9)


def test_gated_variant_mismatch(layout):
    from ammr.embedding import DeltaVector

    params = ComposerParams.identity_init(layout.total_dim, "film")
    v = EmbeddingVector(np.ones(layout.total_dim), layout)
    delta = DeltaVector(np.zeros(layout.total_dim), frozenset(), layout)
    with pytest.raises(DimensionError):
        compose_tirg(v, delta, params)


def test_apply_memory_neutral_weights(schema, layout, small_catalog):
    from ammr.embedding import encode_catalog_disentangled

    matrix = encode_catalog_disentangled(small_catalog, schema, layout)
    index = build_index(matrix, [i.id for i in small_catalog.items], layout)
    v = encode_item_disentangled(small_catalog.items[0], schema, layout)
    plain = search(index, WeightedQuery.uniform(v), k=20).ids()
    weighted = search(index, apply_memory(v, {n: 1.0 for n in layout.slot_names}, layout), k=20).ids()
    assert plain == weighted


def test_apply_memory_unknown_slot_warns(schema, layout):
    v = encode_item_disentangled(make_item(schema), schema, layout)
    wq = apply_memory(v, {"sleeve": 2.0}, layout)
    assert wq.warnings and "sleeve" in wq.warnings[0]
    assert wq.slot_weights["color"] == 1.0


def test_apply_value_multipliers(schema, layout):
    v = encode_item_disentangled(make_item(schema, color="blue"), schema, layout)
    out = apply_value_multipliers(v, {("color", "blue"): 0.5}, schema, layout)
    coord = layout.slot_range("color")[0] + schema.slot("color").vocab.index("blue")
    assert out.values[coord] == 0.5
    others = np.ones(layout.total_dim, dtype=bool)
    others[coord] = False
    assert np.array_equal(out.values[others], v.values[others])


def test_ranking_scale_invariance(schema, layout, small_catalog):
    from ammr.embedding import encode_catalog_disentangled

    matrix = encode_catalog_disentangled(small_catalog, schema, layout)
    index = build_index(matrix, [i.id for i in small_catalog.items], layout)
    v = encode_item_disentangled(small_catalog.items[3], schema, layout)
    weights = {"color": 2.0, "material": 1.0, "silhouette": 1.0, "detail": 4.0, "style": 0.5}
    base = search(index, WeightedQuery(v, weights), k=30).ids()
    for c in (4.0, 0.125):
        scaled = WeightedQuery(EmbeddingVector(c * v.values, layout), weights)
        assert search(index, scaled, k=30).ids() == base
