"""Record service responses as test fixtures for the console snapshot tests.

Run from the repo root: python frontend/scripts/record_fixtures.py
"""

import json
from pathlib import Path

from fastapi.testclient import TestClient

from ammr.catalog import default_schema_path, load_schema
from ammr.embedding import SliceLayout, encode_catalog_disentangled
from ammr.evaluation import Fig3Config, build_fig3_catalog
from ammr.index import build_index
from ammr.planner import (
    Engine,
    FileTrendSource,
    default_lexicon_path,
    default_trends_path,
    load_lexicon,
)
from ammr.service import create_app

FIXTURES = Path(__file__).resolve().parent.parent / "tests" / "fixtures"


def main():
    schema = load_schema(default_schema_path())
    layout = SliceLayout.from_schema(schema)
    catalog = build_fig3_catalog(schema, Fig3Config(size=3000))
    index = build_index(
        encode_catalog_disentangled(catalog, schema, layout),
        [item.id for item in catalog.items],
        layout,
    )
    engine = Engine(
        schema=schema, layout=layout, catalog=catalog, index=index,
        lexicon=load_lexicon(default_lexicon_path()),
        trend_source=FileTrendSource(default_trends_path()),
    )
    client = TestClient(create_app(engine))
    FIXTURES.mkdir(parents=True, exist_ok=True)

    def dump(name, payload):
        (FIXTURES / name).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        print("wrote", name)

    sid = client.post("/sessions").json()["session_id"]
    dump("items_page.json", client.get("/catalog/items", params={"offset": 0, "limit": 8}).json())
    dump(
        "refine_without_pocket.json",
        client.post(
            f"/sessions/{sid}/refine",
            json={"anchor_item_id": "twin-pocketed", "text": "without a pocket", "k": 6},
        ).json(),
    )
    dump(
        "refine_multi_constraint.json",
        client.post(
            f"/sessions/{sid}/refine",
            json={"anchor_item_id": "twin-pocketed", "text": "darker + belt, no stripes", "k": 4},
        ).json(),
    )
    dump("memory_fresh.json", client.get(f"/sessions/{sid}/memory").json())

    floral = [item for item in catalog.items if item.attrs["style"] == "floral"][:3]
    for item in floral:
        client.post(f"/sessions/{sid}/feedback", json={"item_id": item.id, "verdict": "reject"})
    dump("memory_after_rejections.json", client.get(f"/sessions/{sid}/memory").json())


if __name__ == "__main__":
    main()
