"""Command line entry points (``ammr ...``)."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .catalog import (
    default_schema_path,
    generate_catalog,
    load_catalog,
    load_schema,
    save_catalog,
)
from .composer import (
    TrainConfig,
    load_triplets,
    make_detail_edit_triplets,
    save_triplets,
    train_composer,
    triplet_accuracy,
    write_params,
)
from .embedding import (
    SliceLayout,
    encode_catalog_disentangled,
    encode_catalog_universal,
    read_embeddings,
)
from .errors import AmmrError
from .evaluation import Fig3Config, evaluate_run, run_fig3_experiment
from .index import build_index, load_index, save_index
from .planner import (
    CriticPolicy,
    Engine,
    FileTrendSource,
    HttpTextBackend,
    default_lexicon_path,
    default_trends_path,
    load_lexicon,
    rewrite_query,
)


@click.group()
def main():
    """Mixed-modality refinement engine."""


def _parse_skew(pairs: tuple[str, ...]) -> dict[str, float]:
    skew = {}
    for pair in pairs:
        key, _, value = pair.partition("=")
        if not value:
            raise click.BadParameter(f"--skew expects slot.value=p, got {pair!r}")
        skew[key] = float(value)
    return skew


@main.command("gen-catalog")
@click.option("--schema", "schema_path", type=click.Path(exists=True), default=None)
@click.option("--size", type=int, required=True)
@click.option("--seed", type=int, default=0)
@click.option("--skew", multiple=True, help="slot.value=probability, repeatable")
@click.option("-o", "--out", type=click.Path(), required=True)
def gen_catalog(schema_path, size, seed, skew, out):
    """Generate a biased synthetic catalog (JSON-Lines)."""
    schema = load_schema(schema_path or default_schema_path())
    catalog = generate_catalog(schema, size, skew=_parse_skew(skew), seed=seed)
    save_catalog(catalog, out)
    click.echo(f"wrote {len(catalog)} items to {out}")


@main.command("gen-triplets")
@click.option("--schema", "schema_path", type=click.Path(exists=True), default=None)
@click.option("--count", type=int, default=250)
@click.option("--seed", type=int, default=7)
@click.option("--detail", default="pocket")
@click.option("-o", "--out", type=click.Path(), required=True)
def gen_triplets(schema_path, count, seed, detail, out):
    """Generate synthetic remove-a-detail training triplets (JSONL)."""
    schema = load_schema(schema_path or default_schema_path())
    triplets = make_detail_edit_triplets(schema, count, seed, detail=detail)
    save_triplets(triplets, out)
    click.echo(f"wrote {len(triplets)} triplets to {out}")


@main.command("train")
@click.option("--triplets", "triplets_path", type=click.Path(exists=True), required=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True), default=None)
@click.option("--variant", type=click.Choice(["tirg", "film"]), default="tirg")
@click.option("--epochs", type=int, default=300)
@click.option("--seed", type=int, default=0)
@click.option("--margin", type=float, default=0.2)
@click.option("--learning-rate", type=float, default=0.05)
@click.option("--ortho-weight", type=float, default=0.1)
@click.option("--holdout", type=int, default=0, help="reserve the last N triplets for accuracy")
@click.option("-o", "--out", type=click.Path(), required=True)
def train(triplets_path, schema_path, variant, epochs, seed, margin, learning_rate, ortho_weight, holdout, out):
    """Train a TIRG/FiLM composer on a triplets file."""
    schema = load_schema(schema_path or default_schema_path())
    layout = SliceLayout.from_schema(schema)
    triplets = load_triplets(triplets_path, schema)
    train_set = triplets[: len(triplets) - holdout] if holdout else triplets
    config = TrainConfig(
        margin=margin, learning_rate=learning_rate, epochs=epochs,
        ortho_weight=ortho_weight, seed=seed,
    )
    result = train_composer(train_set, config, layout, schema, variant=variant)
    write_params(out, result.params)
    click.echo(
        f"trained {variant} on {len(train_set)} triplets: "
        f"loss {result.initial_loss:.4f} -> {result.final_loss:.4f}"
    )
    if holdout:
        acc = triplet_accuracy(result.params, triplets[-holdout:], layout, schema)
        click.echo(f"held-out accuracy: {acc:.3f} ({holdout} triplets)")


@main.command("build-index")
@click.option("--catalog", "catalog_path", type=click.Path(exists=True), required=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True), default=None)
@click.option("--encoder", type=click.Choice(["disentangled", "universal"]), default="disentangled")
@click.option("--encoder-seed", type=int, default=7)
@click.option("--kind", type=click.Choice(["exact", "ivf"]), default="exact")
@click.option("--lists", type=int, default=256)
@click.option("--seed", type=int, default=0)
@click.option("--embeddings", "embeddings_path", type=click.Path(exists=True), default=None,
              help="ingest externally computed vectors instead of encoding")
@click.option("-o", "--out", type=click.Path(), required=True)
def build_index_cmd(catalog_path, schema_path, encoder, encoder_seed, kind, lists, seed, embeddings_path, out):
    """Encode a catalog (or ingest embeddings) and build a search index."""
    schema = load_schema(schema_path or default_schema_path())
    layout = SliceLayout.from_schema(schema)
    catalog = load_catalog(catalog_path, schema)
    if embeddings_path:
        file_layout, matrix = read_embeddings(embeddings_path)
        if file_layout != layout:
            raise click.ClickException("embedding file layout does not match the schema")
        if matrix.shape[0] != len(catalog):
            raise click.ClickException("embedding row count does not match the catalog")
    elif encoder == "universal":
        matrix = encode_catalog_universal(catalog, schema, layout, seed=encoder_seed)
    else:
        matrix = encode_catalog_disentangled(catalog, schema, layout)
    ids = [item.id for item in catalog.items]
    index = build_index(matrix, ids, layout, kind=kind, n_lists=lists, seed=seed)
    save_index(index, out)
    click.echo(f"built {kind} index over {len(index)} vectors -> {out}")


@main.group("eval")
def eval_group():
    """Reproduction experiments and metric suites."""


@eval_group.command("fig3")
@click.option("--seed", type=int, default=7)
@click.option("--size", type=int, default=10000)
@click.option("--pocket-skew", type=float, default=0.8)
@click.option("--k", type=int, default=10)
@click.option("--kind", type=click.Choice(["exact", "ivf"]), default="exact")
@click.option("--lists", type=int, default=64)
@click.option("--schema", "schema_path", type=click.Path(exists=True), default=None)
@click.option("-o", "--out", type=click.Path(), default=None)
def eval_fig3(seed, size, pocket_skew, k, kind, lists, schema_path, out):
    """Run the pocket-attribute flip experiment."""
    schema = load_schema(schema_path or default_schema_path())
    config = Fig3Config(seed=seed, size=size, pocket_skew=pocket_skew, k=k, index_kind=kind, n_lists=lists)
    report = run_fig3_experiment(config, schema)
    text = report.to_json()
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


@eval_group.command("suite")
@click.option("--queries", "queries_path", type=click.Path(exists=True), required=True,
              help="JSONL: {\"anchor_id\":..., \"utterance\":...}")
@click.option("--catalog", "catalog_path", type=click.Path(exists=True), required=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True), default=None)
@click.option("--pipeline", type=click.Choice(["ammr", "baseline"]), default="ammr")
@click.option("--k", type=int, default=10)
@click.option("--encoder-seed", type=int, default=7)
@click.option("-o", "--out", type=click.Path(), default=None)
def eval_suite(queries_path, catalog_path, schema_path, pipeline, k, encoder_seed, out):
    """Score a query suite with one pipeline configuration."""
    from .evaluation import EvalQuery

    schema = load_schema(schema_path or default_schema_path())
    layout = SliceLayout.from_schema(schema)
    catalog = load_catalog(catalog_path, schema)
    lexicon = load_lexicon(default_lexicon_path())

    if pipeline == "baseline":
        matrix = encode_catalog_universal(catalog, schema, layout, seed=encoder_seed)
        encoder = "universal"
        variant, specialists, guard = "baseline", False, False
    else:
        matrix = encode_catalog_disentangled(catalog, schema, layout)
        encoder = "disentangled"
        variant, specialists, guard = "delta_shift", True, True
    ids = [item.id for item in catalog.items]
    index = build_index(matrix, ids, layout, kind="exact")
    engine = Engine(
        schema=schema, layout=layout, catalog=catalog, index=index,
        lexicon=lexicon, encoder=encoder, encoder_seed=encoder_seed,
    )

    queries = []
    with open(queries_path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            doc = json.loads(line)
            constraints = rewrite_query(doc["utterance"], lexicon, schema)
            queries.append(EvalQuery(anchor_id=doc["anchor_id"], utterance=doc["utterance"],
                                     constraints=constraints))
    report = evaluate_run(
        queries, engine, pipeline, k=k, variant=variant,
        use_specialists=specialists, use_guard=guard,
        seeds={"encoder_seed": encoder_seed},
    )
    text = report.to_json()
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote {out}")
    else:
        click.echo(text, nl=False)


@main.command("serve")
@click.option("--port", type=int, default=8080)
@click.option("--host", default="127.0.0.1")
@click.option("--index", "index_path", type=click.Path(exists=True), required=True)
@click.option("--catalog", "catalog_path", type=click.Path(exists=True), required=True)
@click.option("--schema", "schema_path", type=click.Path(exists=True), default=None)
@click.option("--lexicon", "lexicon_path", type=click.Path(exists=True), default=None)
@click.option("--trend-file", type=click.Path(exists=True), default=None)
@click.option("--encoder", type=click.Choice(["disentangled", "universal"]), default="disentangled")
@click.option("--encoder-seed", type=int, default=7)
@click.option("--max-price", type=int, default=None)
@click.option("--max-brand-share", type=float, default=1.0)
@click.option("--ui-dir", type=click.Path(exists=True), default=None)
def serve(port, host, index_path, catalog_path, schema_path, lexicon_path, trend_file,
          encoder, encoder_seed, max_price, max_brand_share, ui_dir):
    """Serve the refinement API (and optionally the console UI)."""
    import uvicorn

    from .service import create_app

    schema = load_schema(schema_path or default_schema_path())
    catalog = load_catalog(catalog_path, schema)
    index = load_index(index_path)
    lexicon = load_lexicon(lexicon_path or default_lexicon_path())
    trends = FileTrendSource(trend_file or default_trends_path())
    policy = CriticPolicy(max_price_cents=max_price, max_brand_share=max_brand_share)
    engine = Engine(
        schema=schema, layout=index.layout, catalog=catalog, index=index,
        lexicon=lexicon, trend_source=trends, policy=policy,
        backend=HttpTextBackend.from_env(), encoder=encoder, encoder_seed=encoder_seed,
    )
    uvicorn.run(create_app(engine, ui_dir=ui_dir), host=host, port=port, log_level="warning")


def entry() -> None:
    try:
        main(standalone_mode=True)
    except AmmrError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    entry()
