"""HTTP API for sessions, catalog browsing, refinement episodes and feedback.

Error bodies are flat ``{"error": <code>}`` objects naming the violated
field; a failing text backend is absorbed by the lexicon fallback and never
surfaces as a 5xx.
"""

from __future__ import annotations

import threading
import time
import uuid
from dataclasses import dataclass, field

from fastapi import Body, FastAPI
from fastapi.responses import JSONResponse

from .catalog import Item
from .constraints import ConstraintSet
from .embedding import EmbeddingVector
from .errors import ParseError, SchemaError, UnknownItemError
from .planner import Engine, PlannerTrace, run_episode
from .session import SessionMemory, apply_feedback, derive_weights


@dataclass
class SessionStore:
    memories: dict[str, SessionMemory] = field(default_factory=dict)
    locks: dict[str, threading.Lock] = field(default_factory=dict)
    guard: threading.Lock = field(default_factory=threading.Lock)

    def create(self) -> str:
        session_id = uuid.uuid4().hex
        with self.guard:
            self.memories[session_id] = SessionMemory(session_id=session_id)
            self.locks[session_id] = threading.Lock()
        return session_id

    def lock_for(self, session_id: str) -> threading.Lock | None:
        with self.guard:
            return self.locks.get(session_id)


def _error(status: int, code: str, detail: str | None = None) -> JSONResponse:
    body = {"error": code}
    if detail:
        body["detail"] = detail
    return JSONResponse(status_code=status, content=body)


def _item_dict(item: Item) -> dict:
    return {
        "id": item.id,
        "attrs": dict(item.attrs),
        "details": list(item.details),
        "brand": item.brand,
        "price_cents": item.price_cents,
        "tags": list(item.tags),
    }


def _constraint_chips(constraints: ConstraintSet) -> list[dict]:
    return [
        {"id": d.id, "kind": d.kind, "slot": d.slot, "value": d.value, "label": d.describe()}
        for d in constraints.directives
    ]


def _trace_dict(trace: PlannerTrace) -> list[dict]:
    return [
        {"phase": s.phase, "payload": s.payload, "elapsed_us": round(s.elapsed * 1e6, 1)}
        for s in trace.steps
    ]


def _memory_weights(engine: Engine, memory: SessionMemory) -> dict:
    slot_weights, multipliers = derive_weights(memory, engine.layout, engine.schema)
    return {
        "slot_weights": slot_weights,
        "value_multipliers": {f"{slot}.{value}": m for (slot, value), m in multipliers.items()},
    }


def create_app(engine: Engine, ui_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="ammr", docs_url=None, redoc_url=None)
    sessions = SessionStore()
    app.state.engine = engine
    app.state.sessions = sessions

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    @app.post("/sessions")
    def create_session():
        return {"session_id": sessions.create()}

    @app.get("/catalog/items")
    def catalog_items(offset: int = 0, limit: int = 24):
        offset = max(0, offset)
        limit = max(0, min(limit, 200))
        page = engine.catalog.items[offset : offset + limit]
        return {
            "items": [_item_dict(item) for item in page],
            "offset": offset,
            "total": len(engine.catalog),
        }

    @app.get("/sessions/{session_id}/memory")
    def get_memory(session_id: str):
        memory = sessions.memories.get(session_id)
        if memory is None:
            return _error(404, "unknown_session")
        return {
            "session_id": session_id,
            "counts": [
                {"slot": slot, "value": value, "accept": acc, "reject": rej}
                for (slot, value), (acc, rej) in sorted(memory.counts.items())
            ],
            "recent_tokens": list(memory.recent_tokens),
            **_memory_weights(engine, memory),
        }

    @app.post("/sessions/{session_id}/feedback")
    def post_feedback(session_id: str, payload: dict = Body(...)):
        lock = sessions.lock_for(session_id)
        if lock is None:
            return _error(404, "unknown_session")
        item_id = payload.get("item_id")
        verdict = payload.get("verdict")
        if verdict not in ("accept", "reject"):
            return _error(400, "bad_verdict")
        item = engine.catalog.get(item_id) if item_id else None
        if item is None:
            return _error(404, "unknown_item")
        with lock:
            memory = apply_feedback(sessions.memories[session_id], item, verdict, engine.schema)
            sessions.memories[session_id] = memory
        return {"ok": True, **_memory_weights(engine, memory)}

    @app.post("/sessions/{session_id}/refine")
    def refine(session_id: str, payload: dict = Body(...)):
        lock = sessions.lock_for(session_id)
        if lock is None:
            return _error(404, "unknown_session")
        text = payload.get("text")
        if not isinstance(text, str) or not text.strip():
            return _error(400, "empty_text")
        anchor_item_id = payload.get("anchor_item_id")
        anchor_vector = payload.get("anchor_vector")
        if (anchor_item_id is None) == (anchor_vector is None):
            return _error(400, "anchor_required", "provide exactly one of anchor_item_id / anchor_vector")
        k = payload.get("k", 10)
        if not isinstance(k, int) or k < 1:
            return _error(400, "bad_k")
        variant = payload.get("composer", "delta_shift")
        if variant not in ("delta_shift", "baseline", "tirg", "film"):
            return _error(400, "bad_composer")

        anchor_item = None
        vector = None
        if anchor_item_id is not None:
            anchor_item = engine.catalog.get(anchor_item_id)
            if anchor_item is None:
                return _error(404, "unknown_item")
        else:
            try:
                vector = EmbeddingVector(
                    [float(x) for x in anchor_vector], engine.layout
                )
            except Exception:
                return _error(400, "bad_anchor_vector")

        started = time.perf_counter()
        with lock:
            memory = sessions.memories[session_id]
            try:
                rec = run_episode(
                    engine,
                    memory,
                    utterance=text,
                    anchor_item=anchor_item,
                    anchor_vector=vector,
                    k=k,
                    variant=variant,
                )
            except ParseError as exc:
                return _error(400, "unparseable_text", str(exc))
            except SchemaError as exc:
                return _error(400, "bad_constraint", str(exc))
            except UnknownItemError as exc:
                return _error(404, "unknown_item", str(exc))
            sessions.memories[session_id] = rec.memory
        total_us = (time.perf_counter() - started) * 1e6

        return {
            "results": [
                {
                    "item_id": r.item_id,
                    "score": r.score,
                    "satisfied": r.satisfied,
                    "violated": r.violated,
                    "rationale": r.rationale,
                    "item": _item_dict(engine.catalog.get(r.item_id)),
                }
                for r in rec.results
            ],
            "explanation": rec.explanation,
            "constraints": _constraint_chips(rec.constraints),
            "trace": _trace_dict(rec.trace),
            "memory_weights": _memory_weights(engine, rec.memory),
            "timings": {"total_us": round(total_us, 1)},
        }

    if ui_dir:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
