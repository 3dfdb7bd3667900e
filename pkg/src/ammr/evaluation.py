"""Metrics and reproduction experiments.

``run_fig3_experiment`` is the flagship: on the pocket-skewed catalog the
entangled baseline keeps pocketed near-twins in its top ranks for a
"without a pocket" query, while the slice-shift pipeline with a detail
specialist and the guard flips the ordering and reaches full constraint
satisfaction.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .catalog import AttributeSchema, Catalog, Item, generate_catalog
from .constraints import ConstraintSet
from .embedding import (
    SliceLayout,
    encode_catalog_disentangled,
    encode_catalog_universal,
)
from .errors import ConfigError, DomainError
from .index import CandidateSet, build_index, search
from .planner import Engine, Lexicon, default_lexicon_path, load_lexicon, rewrite_query
from .ranking import apply_guard, csr, ensemble_rank, item_satisfies, specialists_for, verify_candidates
from .composer import WeightedQuery, compose_baseline, compose_delta_shift
from .embedding import EmbeddingVector, encode_constraints, render_delta_universal


def gini(counts) -> float:
    """Mean absolute difference concentration: sum_ij |xi - xj| / (2 n sum x)."""
    x = np.asarray(counts, dtype=np.float64)
    if x.size == 0 or np.any(x < 0):
        raise DomainError("gini needs non-negative counts")
    total = x.sum()
    if total <= 0:
        raise DomainError("gini undefined for all-zero counts")
    diffs = np.abs(x[:, None] - x[None, :]).sum()
    return float(diffs / (2.0 * x.size * total))


@dataclass
class EvalQuery:
    anchor_id: str
    utterance: str
    constraints: ConstraintSet
    preserve_slots: tuple[str, ...] = ("silhouette",)

    def relevant(self, item: Item, anchor: Item, schema: AttributeSchema) -> bool:
        if not all(item_satisfies(item, d, schema) for d in self.constraints.hard()):
            return False
        return all(item.attrs.get(s) == anchor.attrs.get(s) for s in self.preserve_slots)


@dataclass
class MetricsReport:
    pipeline: str
    k: int
    csr_at_k: float
    attr_precision_at_k: float
    tail_recall_at_k: float | None
    brand_gini: float
    p50_latency_us: float
    p95_latency_us: float
    n_queries: int
    n_tail_queries: int
    seeds: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


def run_pipeline_query(
    engine: Engine,
    anchor: Item,
    constraints: ConstraintSet,
    k: int,
    variant: str = "delta_shift",
    use_specialists: bool = True,
    use_guard: bool = True,
    search_k: int | None = None,
) -> CandidateSet:
    """Direct compose -> search -> (ensemble) -> (guard) chain, no planner loop."""
    anchor_vec = engine.anchor_embedding(anchor)
    delta, _ = encode_constraints(
        constraints, engine.schema, engine.layout,
        # deltas are defined against the disentangled anchor pattern
        _disentangled_anchor(engine, anchor),
    )
    if variant == "baseline":
        rendered = (
            render_delta_universal(delta, engine.layout, seed=engine.encoder_seed)
            if engine.encoder == "universal"
            else EmbeddingVector(delta.values, engine.layout)
        )
        q = compose_baseline(anchor_vec, rendered)
    elif variant == "delta_shift":
        q = compose_delta_shift(anchor_vec, delta, engine.layout)
    else:
        raise ConfigError(f"pipeline runner supports baseline/delta_shift, not {variant!r}")
    wq = WeightedQuery.uniform(q)
    candidates = search(engine.index, wq, k=search_k or max(k, engine.search_k), n_probe=engine.n_probe)
    if use_specialists:
        candidates = ensemble_rank(candidates, wq, specialists_for(constraints), engine.index)
    if use_guard:
        report = verify_candidates(candidates, constraints, engine.catalog, engine.schema)
        candidates = apply_guard(candidates, report)
    return candidates


def _disentangled_anchor(engine: Engine, anchor: Item):
    from .embedding import encode_item_disentangled

    return encode_item_disentangled(anchor, engine.schema, engine.layout)


def evaluate_run(
    queries: list[EvalQuery],
    engine: Engine,
    pipeline: str,
    k: int = 10,
    variant: str = "delta_shift",
    use_specialists: bool = True,
    use_guard: bool = True,
    tail_threshold: float = 0.05,
    seeds: dict | None = None,
) -> MetricsReport:
    if not queries:
        raise ConfigError("need at least one query")
    catalog = engine.catalog
    schema = engine.schema
    n = len(catalog)

    latencies = []
    csr_values = []
    precision_values = []
    tail_recalls = []
    brand_counts: dict[str, int] = {b: 0 for b in {i.brand for i in catalog.items}}

    for query in queries:
        anchor = catalog.get(query.anchor_id)
        if anchor is None:
            raise ConfigError(f"anchor {query.anchor_id!r} not in catalog")
        started = time.perf_counter()
        result = run_pipeline_query(
            engine, anchor, query.constraints, k,
            variant=variant, use_specialists=use_specialists, use_guard=use_guard,
        )
        latencies.append((time.perf_counter() - started) * 1e6)

        top = result.entries[: min(k, len(result.entries))]
        top_items = [catalog.get(i) for i, _ in top]
        csr_values.append(csr(result, query.constraints, catalog, schema, k))

        hard = query.constraints.hard()
        if hard and top_items:
            per_directive = [
                sum(1 for it in top_items if item_satisfies(it, d, schema)) / len(top_items)
                for d in hard
            ]
            precision_values.append(sum(per_directive) / len(per_directive))
        else:
            precision_values.append(0.0)

        for it in top_items:
            brand_counts[it.brand] = brand_counts.get(it.brand, 0) + 1

        satisfier_freq = sum(
            1 for it in catalog.items if all(item_satisfies(it, d, schema) for d in hard)
        ) / n
        if satisfier_freq < tail_threshold:
            relevant = {
                it.id for it in catalog.items if query.relevant(it, anchor, schema)
            }
            if relevant:
                hits = sum(1 for i, _ in top if i in relevant)
                tail_recalls.append(hits / min(len(relevant), k))

    lat = np.array(latencies)
    return MetricsReport(
        pipeline=pipeline,
        k=k,
        csr_at_k=float(np.mean(csr_values)),
        attr_precision_at_k=float(np.mean(precision_values)),
        tail_recall_at_k=float(np.mean(tail_recalls)) if tail_recalls else None,
        brand_gini=gini(list(brand_counts.values())),
        p50_latency_us=float(np.percentile(lat, 50)),
        p95_latency_us=float(np.percentile(lat, 95)),
        n_queries=len(queries),
        n_tail_queries=len(tail_recalls),
        seeds=seeds or {},
    )


# -- the pocket flip experiment (fig3) ----------------------------------------


@dataclass
class Fig3Config:
    seed: int = 7
    size: int = 10000
    pocket_skew: float = 0.8
    k: int = 10
    index_kind: str = "exact"  # "ivf" with n_probe == n_lists must match exactly
    n_lists: int = 64

    def __post_init__(self):
        if self.size < 100 or not (0.0 < self.pocket_skew <= 1.0) or self.k < 1:
            raise ConfigError("invalid fig3 configuration")


@dataclass
class FlipReport:
    csr_baseline_at_10: float
    csr_ammr_at_10: float
    baseline_rank_pocketed: int
    baseline_rank_pocketfree: int
    ammr_rank_pocketed: int
    ammr_rank_pocketfree: int
    anchor_id: str
    utterance: str
    config: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2) + "\n"


TWIN_POCKETED = "twin-pocketed"
TWIN_POCKETFREE = "twin-pocketfree"


def build_fig3_catalog(schema: AttributeSchema, config: Fig3Config) -> Catalog:
    """Skewed catalog plus a planted twin pair differing only in the pocket."""
    catalog = generate_catalog(
        schema, config.size, skew={"detail.pocket": config.pocket_skew}, seed=config.seed
    )
    base = dict(
        attrs={"color": "blue", "material": "cotton", "silhouette": "hoodie", "style": "casual"},
        brand="Aster",
        price_cents=9900,
        tags=("casual",),
    )
    twins = [
        Item(id=TWIN_POCKETED, details=("pocket",), **base),
        Item(id=TWIN_POCKETFREE, details=(), **base),
    ]
    return Catalog(schema_version=schema.version, items=[*catalog.items, *twins])


def _rank_of(candidates: CandidateSet, item_id: str) -> int:
    for pos, (cid, _) in enumerate(candidates.entries, start=1):
        if cid == item_id:
            return pos
    return len(candidates.entries) + 1


def run_fig3_experiment(
    config: Fig3Config,
    schema: AttributeSchema,
    lexicon: Lexicon | None = None,
) -> FlipReport:
    report, _ = run_fig3_detailed(config, schema, lexicon)
    return report


def run_fig3_detailed(
    config: Fig3Config,
    schema: AttributeSchema,
    lexicon: Lexicon | None = None,
) -> tuple[FlipReport, dict]:
    """Like run_fig3_experiment but also returns the intermediate artifacts
    (catalog, engines, full rankings) for independent verification."""
    if lexicon is None:
        lexicon = load_lexicon(default_lexicon_path())
    layout = SliceLayout.from_schema(schema)
    catalog = build_fig3_catalog(schema, config)
    ids = [item.id for item in catalog.items]

    x_uni = encode_catalog_universal(catalog, schema, layout, seed=config.seed)
    x_dis = encode_catalog_disentangled(catalog, schema, layout)
    kwargs = dict(kind=config.index_kind, n_lists=config.n_lists, seed=config.seed)
    index_uni = build_index(x_uni, ids, layout, **kwargs)
    index_dis = build_index(x_dis, ids, layout, **kwargs)
    n_probe = config.n_lists  # exhaustive probing keeps IVF identical to exact

    utterance = "without a pocket"
    constraints = rewrite_query(utterance, lexicon, schema)
    anchor = catalog.get(TWIN_POCKETED)

    engine_uni = Engine(
        schema=schema, layout=layout, catalog=catalog, index=index_uni, lexicon=lexicon,
        encoder="universal", encoder_seed=config.seed, n_probe=n_probe,
    )
    engine_dis = Engine(
        schema=schema, layout=layout, catalog=catalog, index=index_dis, lexicon=lexicon,
        encoder="disentangled", encoder_seed=config.seed, n_probe=n_probe,
    )

    full = len(catalog)
    baseline_full = run_pipeline_query(
        engine_uni, anchor, constraints, k=full, variant="baseline",
        use_specialists=False, use_guard=False, search_k=full,
    )
    ammr_full = run_pipeline_query(
        engine_dis, anchor, constraints, k=full, variant="delta_shift",
        use_specialists=True, use_guard=False, search_k=full,
    )
    baseline_top = CandidateSet(entries=baseline_full.entries[: config.k], truncated_at=config.k)
    guard = verify_candidates(ammr_full, constraints, catalog, schema)
    ammr_kept = apply_guard(ammr_full, guard)
    ammr_top = CandidateSet(entries=ammr_kept.entries[: config.k], truncated_at=config.k)

    csr_baseline = csr(baseline_top, constraints, catalog, schema, config.k)
    csr_ammr = csr(ammr_top, constraints, catalog, schema, config.k)
    if csr_ammr < csr_baseline:
        raise ConfigError("flip failed: AMMR constraint satisfaction fell below the baseline")

    report = FlipReport(
        csr_baseline_at_10=csr_baseline,
        csr_ammr_at_10=csr_ammr,
        baseline_rank_pocketed=_rank_of(baseline_full, TWIN_POCKETED),
        baseline_rank_pocketfree=_rank_of(baseline_full, TWIN_POCKETFREE),
        ammr_rank_pocketed=_rank_of(ammr_full, TWIN_POCKETED),
        ammr_rank_pocketfree=_rank_of(ammr_full, TWIN_POCKETFREE),
        anchor_id=TWIN_POCKETED,
        utterance=utterance,
        config={
            "seed": config.seed,
            "size": config.size,
            "pocket_skew": config.pocket_skew,
            "k": config.k,
            "index_kind": config.index_kind,
            "n_lists": config.n_lists,
        },
    )
    artifacts = {
        "catalog": catalog,
        "constraints": constraints,
        "engine_uni": engine_uni,
        "engine_dis": engine_dis,
        "baseline_full": baseline_full,
        "ammr_full": ammr_full,
        "baseline_top": baseline_top,
        "ammr_top": ammr_top,
    }
    return report, artifacts


def write_report(text: str, path: str | Path) -> None:
    Path(path).write_text(text, encoding="utf-8")
