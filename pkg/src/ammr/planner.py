"""The agentic layer: query rewriting, the Thought-Action-Critic-Speak loop,
policy critic, and rationale templates.

Rewriting is lexicon-first and fully deterministic; an optional chat-style
text backend (JSON over HTTP, one attempt, 2 s timeout) may pick up phrases
the lexicon cannot resolve. Backend failure never fails an episode.
"""

from __future__ import annotations

import json
import math
import os
import re
import time
from dataclasses import dataclass, field
from pathlib import Path

import httpx

from .catalog import AttributeSchema, Catalog, Item
from .composer import (
    ComposerParams,
    WeightedQuery,
    apply_memory,
    apply_value_multipliers,
    compose_baseline,
    compose_delta_shift,
    compose_film,
    compose_tirg,
)
from .constraints import (
    ADD_SOFT,
    ConstraintSet,
    DARKEN_STEP,
    Directive,
    NEGATE,
    REMOVE,
    SET,
    resolve_relative,
)
from .embedding import (
    EmbeddingVector,
    SliceLayout,
    encode_constraints,
    encode_item_disentangled,
    encode_item_universal,
    render_delta_universal,
)
from .errors import ParseError, PlannerError, SchemaError
from .index import CandidateSet, ExactIndex, IvfIndex, search
from .ranking import (
    GuardReport,
    SpecialistRanker,
    apply_guard,
    ensemble_rank,
    specialists_for,
    verify_candidates,
)
from .session import SessionMemory, derive_weights, record_token

BACKEND_URL_ENV = "AMMR_TEXT_BACKEND_URL"
BACKEND_TIMEOUT_S = 2.0
DEFAULT_MAX_STEPS = 3

THOUGHT, ACTION, CRITIC, SPEAK = "thought", "action", "critic", "speak"

_STOPWORDS = {
    "a", "an", "the", "i", "me", "my", "it", "in", "on", "of", "to", "for",
    "and", "but", "with", "want", "would", "like", "love", "please", "show",
    "give", "get", "something", "this", "that", "them", "one", "vibes",
    "looking", "same", "more", "make", "be", "is", "keep", "everything",
    "about", "except", "rather", "instead", "version", "colour", "fabric",
}

_NEGATION_KINDS = {"no": NEGATE, "not": NEGATE, "without": REMOVE, "remove": REMOVE, "drop": REMOVE}
_ARTICLES = {"a", "an", "the", "any", "its", "that"}


# -- lexicon ----------------------------------------------------------------


@dataclass(frozen=True)
class Lexicon:
    """Phrase templates plus trend tokens. Templates are terminal (never
    expand to other phrases), so expansion cannot cycle."""

    entries: dict[str, tuple[tuple[str, str, str], ...]]  # phrase -> (kind, slot, value)*
    trend_tokens: dict[str, tuple[str, str]]  # token -> (slot, value), soft
    darkness_order: tuple[str, ...] = ()

    def max_phrase_len(self) -> int:
        return max((len(p.split()) for p in self.entries), default=1)


def default_lexicon_path() -> Path:
    from importlib import resources

    return Path(resources.files("ammr.data") / "lexicon.json")


def load_lexicon(path: str | Path) -> Lexicon:
    with open(path, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "entries" not in doc:  # bare phrase -> templates map
        doc = {"entries": doc}
    entries = {}
    for phrase, templates in doc.get("entries", {}).items():
        normalized = " ".join(phrase.lower().split())
        entries[normalized] = tuple((t["kind"], t["slot"], t["value"]) for t in templates)
    trend = {
        token.lower(): (spec["slot"], spec["value"])
        for token, spec in doc.get("trend_tokens", {}).items()
    }
    return Lexicon(
        entries=entries,
        trend_tokens=trend,
        darkness_order=tuple(doc.get("darkness_order", ())),
    )


# -- trend stub ---------------------------------------------------------------


@dataclass
class FileTrendSource:
    """File-backed trend API stub; re-reads on every call so edits between
    episodes are visible (no caching)."""

    path: str | Path

    def lookup(self, token: str) -> tuple[str, str] | None:
        with open(self.path, "r", encoding="utf-8") as fh:
            table = json.load(fh)
        spec = table.get(token.lower())
        if spec is None:
            return None
        return (spec["slot"], spec["value"])


def default_trends_path() -> Path:
    from importlib import resources

    return Path(resources.files("ammr.data") / "trends.json")


def query_trend_source(token: str, source: FileTrendSource | None) -> tuple[str, str] | None:
    if source is None:
        return None
    return source.lookup(token)


# -- text backend -------------------------------------------------------------


@dataclass
class HttpTextBackend:
    """Narrow chat contract: POST {"system", "messages"} -> {"text"}."""

    url: str
    timeout: float = BACKEND_TIMEOUT_S

    @classmethod
    def from_env(cls) -> "HttpTextBackend | None":
        url = os.environ.get(BACKEND_URL_ENV)
        return cls(url=url) if url else None

    def complete(self, system: str, messages: list[dict]) -> str:
        response = httpx.post(
            self.url,
            json={"system": system, "messages": messages},
            timeout=self.timeout,
        )
        response.raise_for_status()
        return response.json()["text"]


_BACKEND_SYSTEM = (
    "Rewrite the fashion refinement request as directives, one per line, "
    "in the form `kind slot=value` where kind is set, remove, negate or add_soft."
)

_DIRECTIVE_RE = re.compile(r"^(set|remove|negate|add_soft)\s+(\w+)\s*=\s*([\w-]+)$")


def _parse_backend_reply(text: str, schema: AttributeSchema) -> list[tuple[str, str, str]]:
    out = []
    for raw in re.split(r"[;\n]+", text):
        m = _DIRECTIVE_RE.match(raw.strip().lower())
        if not m:
            continue
        kind, slot, value = m.groups()
        if schema.has_slot(slot) and value in schema.slot(slot).vocab:
            out.append((kind, slot, value))
    return out


# -- query rewriting ----------------------------------------------------------


def _normalize(utterance: str) -> list[str]:
    text = re.sub(r"[-+,;.!?/()&]", " ", utterance.lower())
    text = text.replace("'d", " would").replace("'s", "")
    return text.split()


def _resolve_value(token: str, schema: AttributeSchema) -> tuple[str, str] | None:
    """Map a token to (slot, value), tolerating plain plurals ("pockets")."""
    slot_name = schema.find_value_slot(token)
    if slot_name is not None:
        return slot_name, token
    if token.endswith("s"):
        singular = token[:-1]
        slot_name = schema.find_value_slot(singular)
        if slot_name is not None:
            return slot_name, singular
    return None


def _value_token_directive(token: str, schema: AttributeSchema) -> tuple[str, str, str] | None:
    resolved = _resolve_value(token, schema)
    if resolved is None:
        return None
    slot_name, value = resolved
    # style additions are soft by design; set/remove/negate stay hard
    kind = ADD_SOFT if slot_name == "style" else SET
    return (kind, slot_name, value)


def rewrite_query(
    utterance: str,
    lexicon: Lexicon,
    schema: AttributeSchema,
    backend: HttpTextBackend | None = None,
) -> ConstraintSet:
    """Deterministic lexicon pass, then negation/value rules; unresolved
    phrases go to the backend once (if configured) and otherwise become
    warnings. Raises ParseError when nothing resolves."""
    if not utterance.strip():
        raise ParseError("empty utterance")
    tokens = _normalize(utterance)
    templates: list[tuple[str, str, str]] = []
    warnings: list[str] = []
    unresolved: list[str] = []

    max_len = lexicon.max_phrase_len()
    i = 0
    while i < len(tokens):
        matched = False
        for n in range(min(max_len, len(tokens) - i), 0, -1):
            phrase = " ".join(tokens[i : i + n])
            if phrase in lexicon.entries:
                templates.extend(lexicon.entries[phrase])
                i += n
                matched = True
                break
        if matched:
            continue
        token = tokens[i]
        if token in _NEGATION_KINDS:
            j = i + 1
            while j < len(tokens) and tokens[j] in _ARTICLES:
                j += 1
            if j < len(tokens):
                resolved = _resolve_value(tokens[j], schema)
                if resolved is not None:
                    slot_name, value = resolved
                    templates.append((_NEGATION_KINDS[token], slot_name, value))
                    i = j + 1
                    continue
        if token in lexicon.trend_tokens:
            slot, value = lexicon.trend_tokens[token]
            templates.append((ADD_SOFT, slot, value))
            i += 1
            continue
        direct = _value_token_directive(token, schema)
        if direct is not None:
            templates.append(direct)
            i += 1
            continue
        if token not in _STOPWORDS and not schema.has_slot(token):
            unresolved.append(token)
        i += 1

    if unresolved and backend is not None:
        try:
            reply = backend.complete(
                _BACKEND_SYSTEM, [{"role": "user", "content": " ".join(unresolved)}]
            )
            recovered = _parse_backend_reply(reply, schema)
            if recovered:
                templates.extend(recovered)
                unresolved = []
            else:
                warnings.append(f"backend returned no directives for: {' '.join(unresolved)}")
        except Exception as exc:  # timeouts, connection errors, bad payloads
            warnings.append(f"backend unavailable ({type(exc).__name__}); dropped: {' '.join(unresolved)}")
    else:
        warnings.extend(f"unresolved phrase dropped: {t}" for t in unresolved)

    seen = set()
    directives = []
    for kind, slot, value in templates:
        if (kind, slot, value) in seen:
            continue
        seen.add((kind, slot, value))
        directives.append(Directive(kind=kind, slot=slot, value=value, id=f"c{len(directives)}"))

    if not directives:
        raise ParseError(f"utterance {utterance!r} resolved to zero directives")
    return ConstraintSet(directives=tuple(directives), raw_text=utterance, warnings=tuple(warnings))


# -- critic -------------------------------------------------------------------


@dataclass(frozen=True)
class CriticPolicy:
    max_price_cents: int | None = None
    banned_values: frozenset[str] = frozenset()
    max_brand_share: float = 1.0
    k_min: int = 1

    def __post_init__(self):
        if self.k_min < 1:
            raise SchemaError("k_min must be >= 1")
        if not (0.0 < self.max_brand_share <= 1.0):
            raise SchemaError("max_brand_share must lie in (0, 1]")


@dataclass
class CriticReport:
    dropped: list[tuple[str, str]] = field(default_factory=list)  # (item_id, rule)
    demoted: list[str] = field(default_factory=list)
    brand_cap: int | None = None
    notes: tuple[str, ...] = (
        "ROI is approximated by the price cap and brand-share policy",
    )

    def rule_for(self, item_id: str) -> str | None:
        for dropped_id, rule in self.dropped:
            if dropped_id == item_id:
                return rule
        return None


def critic_review(
    candidates: CandidateSet,
    policy: CriticPolicy,
    catalog: Catalog,
    k: int,
) -> tuple[CandidateSet, CriticReport]:
    """Drop items violating price/ban rules, then cap any brand's share of
    the top-k window by demoting excess items below rank k (relative order
    preserved). Never adds items."""
    report = CriticReport()
    filtered = []
    for item_id, score in candidates.entries:
        item = catalog.get(item_id)
        if item is None:
            raise PlannerError(f"critic saw unknown item {item_id!r}")
        if policy.max_price_cents is not None and item.price_cents > policy.max_price_cents:
            report.dropped.append((item_id, "price"))
            continue
        values = {item.brand, *item.attrs.values(), *item.details, *item.tags}
        banned_hit = values & policy.banned_values
        if banned_hit:
            report.dropped.append((item_id, f"banned:{sorted(banned_hit)[0]}"))
            continue
        filtered.append((item_id, score, item.brand))

    cap = math.ceil(policy.max_brand_share * k)
    report.brand_cap = cap
    head: list[tuple[str, float]] = []
    deferred: list[tuple[str, float]] = []
    tail: list[tuple[str, float]] = []
    counts: dict[str, int] = {}
    for item_id, score, brand in filtered:
        if len(head) >= k:
            tail.append((item_id, score))
        elif counts.get(brand, 0) < cap:
            head.append((item_id, score))
            counts[brand] = counts.get(brand, 0) + 1
        else:
            deferred.append((item_id, score))
            report.demoted.append(item_id)
    if len(head) < k and deferred:
        # not enough brand diversity to fill the window under the cap
        missing = k - len(head)
        head.extend(deferred[:missing])
        deferred = deferred[missing:]
    entries = head + deferred + tail
    kept = CandidateSet(
        entries=entries,
        query_id=candidates.query_id,
        truncated_at=candidates.truncated_at,
        sorted_scores=False,
    )
    return kept, report


# -- episode ------------------------------------------------------------------


@dataclass
class TraceStep:
    phase: str
    payload: dict
    elapsed: float


@dataclass
class PlannerTrace:
    steps: list[TraceStep] = field(default_factory=list)

    def phases(self) -> list[str]:
        return [s.phase for s in self.steps]

    def add(self, phase: str, payload: dict, started: float) -> None:
        self.steps.append(TraceStep(phase=phase, payload=payload, elapsed=time.perf_counter() - started))


@dataclass
class Engine:
    """Immutable per-process bundle shared by episodes; safe for concurrent reads."""

    schema: AttributeSchema
    layout: SliceLayout
    catalog: Catalog
    index: ExactIndex
    lexicon: Lexicon
    trend_source: FileTrendSource | None = None
    policy: CriticPolicy = CriticPolicy()
    backend: HttpTextBackend | None = None
    encoder: str = "disentangled"  # space the index was built in
    encoder_seed: int = 7
    params: dict[str, ComposerParams] = field(default_factory=dict)
    search_k: int = 300
    n_probe: int = 16
    max_steps: int = DEFAULT_MAX_STEPS
    specialist_weight: float = 4.0

    def anchor_embedding(self, item: Item) -> EmbeddingVector:
        if self.encoder == "universal":
            return encode_item_universal(item, self.schema, self.layout, seed=self.encoder_seed)
        return encode_item_disentangled(item, self.schema, self.layout)

    def composer_params(self, variant: str) -> ComposerParams:
        if variant not in self.params:
            self.params[variant] = ComposerParams.identity_init(self.layout.total_dim, variant)
        return self.params[variant]


@dataclass
class EpisodeState:
    engine: Engine
    memory: SessionMemory
    raw_text: str
    anchor_vector: EmbeddingVector
    anchor_item: Item | None = None
    k: int = 10
    variant: str = "delta_shift"
    constraints: ConstraintSet | None = None
    specialists: list[SpecialistRanker] = field(default_factory=list)
    slot_weights: dict[str, float] = field(default_factory=dict)
    multipliers: dict = field(default_factory=dict)
    search_k: int = 300
    n_probe: int = 16
    cycle: int = 0
    terminal: bool = False
    candidates: CandidateSet | None = None
    guard_report: GuardReport | None = None
    critic_report: CriticReport | None = None
    final: CandidateSet | None = None
    trace: PlannerTrace = field(default_factory=PlannerTrace)

    @property
    def max_steps(self) -> int:
        return self.engine.max_steps


def _anchor_color(state: EpisodeState) -> str | None:
    if state.anchor_item is not None:
        return state.anchor_item.attrs.get("color")
    schema = state.engine.schema
    if not schema.has_slot("color") or state.engine.encoder != "disentangled":
        return None
    slot = schema.slot("color")
    values = state.anchor_vector.values[state.engine.layout.slot_slice("color")]
    if values.max() <= 0:
        return None
    return slot.vocab[int(values.argmax())]


def _thought(state: EpisodeState) -> dict:
    engine = state.engine
    payload: dict = {"cycle": state.cycle, "n_probe": state.n_probe, "search_k": state.search_k}

    if state.constraints is None:
        constraints = rewrite_query(state.raw_text, engine.lexicon, engine.schema, engine.backend)
        payload["rewrite_warnings"] = list(constraints.warnings)

        trend_calls = []
        extra: list[Directive] = []
        still_warn = []
        for warning in constraints.warnings:
            if not warning.startswith("unresolved phrase dropped: "):
                still_warn.append(warning)
                continue
            token = warning.removeprefix("unresolved phrase dropped: ")
            try:
                hit = query_trend_source(token, engine.trend_source)
            except (OSError, ValueError) as exc:
                # a missing or malformed stub degrades the lookup, never the episode
                trend_calls.append({"token": token, "hit": False, "error": str(exc)})
                still_warn.append(warning)
                continue
            trend_calls.append({"token": token, "hit": hit is not None})
            if hit is None:
                still_warn.append(warning)
            else:
                slot, value = hit
                extra.append(Directive(kind=ADD_SOFT, slot=slot, value=value,
                                       id=f"c{len(constraints.directives) + len(extra)}"))
                state.memory = record_token(state.memory, token)
        if extra:
            constraints = ConstraintSet(
                directives=(*constraints.directives, *extra),
                raw_text=constraints.raw_text,
                warnings=tuple(still_warn),
            )
        payload["trend_calls"] = trend_calls

        constraints = resolve_relative(constraints, _anchor_color(state), engine.lexicon.darkness_order)
        if not constraints.directives:
            raise ParseError(f"utterance {state.raw_text!r} resolved to zero directives")
        state.constraints = constraints

    state.specialists = specialists_for(state.constraints, weight=engine.specialist_weight)
    state.slot_weights, state.multipliers = derive_weights(state.memory, engine.layout, engine.schema)
    payload["directives"] = [
        {"id": d.id, "kind": d.kind, "slot": d.slot, "value": d.value}
        for d in state.constraints.directives
    ]
    payload["specialists"] = [{"slot": r.slot, "weight": r.weight} for r in state.specialists]
    payload["slot_weights"] = dict(state.slot_weights)
    return payload


def _compose_query(state: EpisodeState) -> WeightedQuery:
    engine = state.engine
    delta, _mask = encode_constraints(state.constraints, engine.schema, engine.layout, state.anchor_vector)
    variant = state.variant
    if variant == "delta_shift":
        q = compose_delta_shift(state.anchor_vector, delta, engine.layout)
    elif variant == "baseline":
        rendered = (
            render_delta_universal(delta, engine.layout, seed=engine.encoder_seed)
            if engine.encoder == "universal"
            else EmbeddingVector(delta.values, engine.layout)
        )
        q = compose_baseline(state.anchor_vector, rendered)
    elif variant == "tirg":
        q = compose_tirg(state.anchor_vector, delta, engine.composer_params("tirg"))
    elif variant == "film":
        q = compose_film(state.anchor_vector, delta, engine.composer_params("film"))
    else:
        raise PlannerError(f"unknown composer variant {variant!r}")
    q = apply_value_multipliers(q, state.multipliers, engine.schema, engine.layout)
    return apply_memory(q, state.slot_weights, engine.layout)


def _action(state: EpisodeState) -> dict:
    engine = state.engine
    wquery = _compose_query(state)
    raw = search(engine.index, wquery, k=state.search_k, n_probe=state.n_probe, query_id=state.raw_text)
    ranked = ensemble_rank(raw, wquery, state.specialists, engine.index)
    state.candidates = ranked
    return {
        "variant": state.variant,
        "retrieved": len(raw),
        "n_probe": state.n_probe,
        "search_k": state.search_k,
        "top": [item_id for item_id, _ in ranked.entries[: state.k]],
    }


def _critic(state: EpisodeState) -> dict:
    engine = state.engine
    report = verify_candidates(state.candidates, state.constraints, engine.catalog, engine.schema)
    state.guard_report = report
    survivors = apply_guard(state.candidates, report)
    kept, critic_report = critic_review(survivors, engine.policy, engine.catalog, state.k)
    state.critic_report = critic_report
    state.final = kept

    payload = {
        "guard_kept": len(report.kept),
        "guard_dropped": len(report.dropped),
        "critic_dropped": len(critic_report.dropped),
        "demoted": len(critic_report.demoted),
        "kept": len(kept),
    }
    if len(kept) < engine.policy.k_min and state.cycle < state.max_steps:
        if state.cycle == 1 and isinstance(engine.index, IvfIndex):
            state.n_probe = min(state.n_probe * 2, engine.index.n_lists)
            payload["revision"] = f"double n_probe -> {state.n_probe}"
        elif state.cycle == 1:
            state.n_probe *= 2
            payload["revision"] = f"double n_probe -> {state.n_probe}"
        else:
            state.search_k = min(state.search_k * 2, len(engine.index))
            payload["revision"] = f"double k -> {state.search_k}"
    else:
        state.terminal = True
        payload["terminal"] = True
    return payload


def plan_step(state: EpisodeState) -> EpisodeState:
    """Run one Thought-Action-Critic cycle, mutating and returning the state."""
    if state.terminal:
        raise PlannerError("episode already terminal")
    state.cycle += 1
    for phase, fn in ((THOUGHT, _thought), (ACTION, _action), (CRITIC, _critic)):
        started = time.perf_counter()
        try:
            payload = fn(state)
        except ParseError:
            raise
        except SchemaError:
            raise
        state.trace.add(phase, payload, started)
    return state


@dataclass
class RecommendationEntry:
    item_id: str
    score: float
    satisfied: list[str]
    violated: list[str]
    rationale: str


@dataclass
class Recommendation:
    results: list[RecommendationEntry]
    explanation: str
    trace: PlannerTrace
    memory: SessionMemory
    constraints: ConstraintSet


def _rationale(state: EpisodeState, item_id: str) -> str:
    verdict = state.guard_report.verdict_for(item_id) if state.guard_report else None
    facts = []
    if verdict is not None and state.constraints is not None:
        by_id = {d.id: d for d in state.constraints.directives}
        facts = [by_id[cid].describe() for cid in verdict.satisfied if cid in by_id]
    clause = "matches: " + ", ".join(facts) if facts else "matches the anchor"
    extras = []
    if state.engine.policy.max_price_cents is not None:
        extras.append("within budget")
    return "; ".join([clause, *extras])


def _empty_explanation(state: EpisodeState) -> str:
    if state.critic_report and state.critic_report.dropped:
        rules = {rule.split(":")[0] for _, rule in state.critic_report.dropped}
        if rules == {"price"}:
            return "no results: every candidate exceeded the price cap"
        return f"no results: candidates were blocked by policy rules ({', '.join(sorted(rules))})"
    if state.guard_report and state.guard_report.dropped and not state.guard_report.kept:
        wanted = ", ".join(d.describe() for d in state.constraints.hard()) if state.constraints else ""
        return f"no results: no retrieved item satisfies all constraints ({wanted})"
    return "no results matched the request"


def speak(state: EpisodeState) -> Recommendation:
    """Render the terminal state: ranked results with fact-based rationales."""
    if not state.terminal:
        raise PlannerError("speak called on a non-terminal episode")
    started = time.perf_counter()
    entries = state.final.entries[: state.k] if state.final else []
    results = []
    for item_id, score in entries:
        verdict = state.guard_report.verdict_for(item_id) if state.guard_report else None
        results.append(
            RecommendationEntry(
                item_id=item_id,
                score=score,
                satisfied=list(verdict.satisfied) if verdict else [],
                violated=list(verdict.violated) if verdict else [],
                rationale=_rationale(state, item_id),
            )
        )
    explanation = "" if results else _empty_explanation(state)
    state.trace.add(SPEAK, {"results": len(results), "explanation": explanation}, started)
    return Recommendation(
        results=results,
        explanation=explanation,
        trace=state.trace,
        memory=state.memory,
        constraints=state.constraints if state.constraints is not None else ConstraintSet((), state.raw_text),
    )


def run_episode(
    engine: Engine,
    memory: SessionMemory,
    utterance: str,
    anchor_item: Item | None = None,
    anchor_vector: EmbeddingVector | None = None,
    k: int = 10,
    variant: str = "delta_shift",
) -> Recommendation:
    """Drive T-A-C cycles until terminal, then Speak. Terminates within
    engine.max_steps cycles by construction."""
    if (anchor_item is None) == (anchor_vector is None):
        raise PlannerError("exactly one of anchor_item / anchor_vector is required")
    if anchor_vector is None:
        anchor_vector = engine.anchor_embedding(anchor_item)
    state = EpisodeState(
        engine=engine,
        memory=memory,
        raw_text=utterance,
        anchor_vector=anchor_vector,
        anchor_item=anchor_item,
        k=k,
        variant=variant,
        search_k=engine.search_k,
        n_probe=engine.n_probe,
    )
    while not state.terminal:
        plan_step(state)
    return speak(state)
