import numpy as np
import pytest

from ammr.catalog import default_schema_path, generate_catalog, load_schema
from ammr.embedding import (
    SliceLayout,
    encode_catalog_disentangled,
    encode_catalog_universal,
)
from ammr.evaluation import Fig3Config, build_fig3_catalog
from ammr.index import build_index
from ammr.planner import (
    Engine,
    FileTrendSource,
    default_lexicon_path,
    default_trends_path,
    load_lexicon,
)


@pytest.fixture(scope="session")
def schema():
    return load_schema(default_schema_path())


@pytest.fixture(scope="session")
def layout(schema):
    return SliceLayout.from_schema(schema)


@pytest.fixture(scope="session")
def lexicon():
    return load_lexicon(default_lexicon_path())


@pytest.fixture(scope="session")
def small_catalog(schema):
    return generate_catalog(schema, 500, skew={"detail.pocket": 0.8}, seed=3)


@pytest.fixture(scope="session")
def fig3_catalog(schema):
    return build_fig3_catalog(schema, Fig3Config())


@pytest.fixture(scope="session")
def fig3_dis_index(fig3_catalog, schema, layout):
    matrix = encode_catalog_disentangled(fig3_catalog, schema, layout)
    return build_index(matrix, [i.id for i in fig3_catalog.items], layout)


@pytest.fixture(scope="session")
def fig3_uni_index(fig3_catalog, schema, layout):
    matrix = encode_catalog_universal(fig3_catalog, schema, layout, seed=7)
    return build_index(matrix, [i.id for i in fig3_catalog.items], layout)


@pytest.fixture(scope="session")
def fig3_engine(fig3_catalog, fig3_dis_index, schema, layout, lexicon):
    return Engine(
        schema=schema,
        layout=layout,
        catalog=fig3_catalog,
        index=fig3_dis_index,
        lexicon=lexicon,
        trend_source=FileTrendSource(default_trends_path()),
        encoder="disentangled",
        encoder_seed=7,
    )


@pytest.fixture(scope="session")
def fig3_uni_engine(fig3_catalog, fig3_uni_index, schema, layout, lexicon):
    return Engine(
        schema=schema,
        layout=layout,
        catalog=fig3_catalog,
        index=fig3_uni_index,
        lexicon=lexicon,
        encoder="universal",
        encoder_seed=7,
    )


def random_item(schema, rng, item_id="it"):
    """Uniform random item; shared helper for randomized properties."""
    from ammr.catalog import BRAND_POOL, Item

    attrs = {}
    details = []
    for slot in schema.slots:
        if slot.kind == "categorical":
            attrs[slot.name] = slot.vocab[rng.integers(len(slot.vocab))]
        else:
            details.extend(v for v in slot.vocab if rng.random() < 0.5)
    return Item(
        id=item_id,
        attrs=attrs,
        details=tuple(details),
        brand=BRAND_POOL[rng.integers(len(BRAND_POOL))],
        price_cents=int(rng.integers(1500, 25001)),
        tags=(attrs.get("style", "casual"),),
    )


def random_constraints(schema, rng, max_directives=3):
    """Random mixed hard/soft constraint set over the schema."""
    from ammr.constraints import ADD_SOFT, ConstraintSet, Directive, NEGATE, REMOVE, SET

    kinds = [SET, REMOVE, NEGATE, ADD_SOFT]
    n = int(rng.integers(1, max_directives + 1))
    directives = []
    used = set()
    for _ in range(n):
        slot = schema.slots[rng.integers(len(schema.slots))]
        kind = kinds[rng.integers(len(kinds))]
        if slot.kind == "categorical" and kind == REMOVE:
            kind = NEGATE
        value = slot.vocab[rng.integers(len(slot.vocab))]
        if (kind, slot.name, value) in used:
            continue
        used.add((kind, slot.name, value))
        directives.append(
            Directive(kind=kind, slot=slot.name, value=value, id=f"c{len(directives)}")
        )
    return ConstraintSet(directives=tuple(directives), raw_text="random")


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240817)
