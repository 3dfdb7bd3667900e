import numpy as np
import pytest

from ammr.session import (
    SessionMemory,
    apply_feedback,
    derive_weights,
    load_snapshot,
    record_token,
    save_snapshot,
    value_multiplier,
)


def floral_item(schema):
    from ammr.catalog import Item

    return Item(
        id="f1",
        attrs={"color": "white", "material": "cotton", "silhouette": "dress", "style": "floral"},
        details=("belt",),
        brand="Juno",
        price_cents=8000,
        tags=("floral",),
    )


def test_fresh_memory_counts_zero(schema):
    memory = SessionMemory(session_id="s")
    assert memory.accept_count("style", "floral") == 0
    assert memory.reject_count("style", "floral") == 0


def test_reject_counting(schema):
    memory = SessionMemory(session_id="s")
    item = floral_item(schema)
    for _ in range(3):
        memory = apply_feedback(memory, item, "reject", schema)
    assert memory.reject_count("style", "floral") == 3
    assert memory.reject_count("detail", "belt") == 3
    assert memory.accept_count("style", "floral") == 0


def test_accept_then_reject(schema):
    memory = SessionMemory(session_id="s")
    item = floral_item(schema)
    memory = apply_feedback(memory, item, "accept", schema)
    memory = apply_feedback(memory, item, "reject", schema)
    assert memory.accept_count("style", "floral") == 1
    assert memory.reject_count("style", "floral") == 1


def test_feedback_is_pure(schema):
    memory = SessionMemory(session_id="s")
    updated = apply_feedback(memory, floral_item(schema), "reject", schema)
    assert memory.counts == {}
    assert updated.counts


def test_bad_verdict(schema):
    with pytest.raises(ValueError):
        apply_feedback(SessionMemory(session_id="s"), floral_item(schema), "meh", schema)


def test_fresh_weights_are_identity(schema, layout):
    slot_w, mult = derive_weights(SessionMemory(session_id="s"), layout, schema)
    assert all(w == 1.0 for w in slot_w.values())
    assert all(m == 1.0 for m in mult.values())


def test_multiplier_formula():
    # 4 rejections, 0 accepts: 1 + 0.5 * (0 - 4) / 5 = 0.6
    assert value_multiplier(0, 4) == pytest.approx(0.6)
    assert value_multiplier(4, 0) == pytest.approx(1.4)
    assert value_multiplier(0, 0) == 1.0


def test_multiplier_bounds():
    # the ratio law itself limits to (0.5, 1.5); the clamps are outer rails
    assert value_multiplier(0, 10**6) == pytest.approx(0.5, abs=1e-3)
    assert value_multiplier(10**6, 0) == pytest.approx(1.5, abs=1e-3)
    for acc in range(0, 40, 7):
        for rej in range(0, 40, 7):
            assert 0.1 <= value_multiplier(acc, rej) <= 4.0


def test_rejection_monotonicity():
    values = [value_multiplier(2, r) for r in range(30)]
    assert all(b <= a for a, b in zip(values, values[1:]))


def test_derived_weights_after_rejections(schema, layout):
    memory = SessionMemory(session_id="s")
    item = floral_item(schema)
    for _ in range(4):
        memory = apply_feedback(memory, item, "reject", schema)
    slot_w, mult = derive_weights(memory, layout, schema)
    assert mult[("style", "floral")] == pytest.approx(0.6)
    assert mult[("style", "casual")] == 1.0
    # slot weight is the mean over the slot's values
    style_vocab = schema.slot("style").vocab
    expected = (0.6 + (len(style_vocab) - 1) * 1.0) / len(style_vocab)
    assert slot_w["style"] == pytest.approx(expected)


def test_recent_tokens_bounded():
    memory = SessionMemory(session_id="s")
    for i in range(25):
        memory = record_token(memory, f"t{i}")
    assert len(memory.recent_tokens) == 16
    assert memory.recent_tokens[-1] == "t24"
    assert memory.recent_tokens[0] == "t9"


def test_snapshot_round_trip(tmp_path, schema):
    memory = SessionMemory(session_id="abc")
    memory = apply_feedback(memory, floral_item(schema), "reject", schema)
    memory = record_token(memory, "cottagecore")
    path = tmp_path / "snap.json"
    save_snapshot({"abc": memory}, path)
    loaded = load_snapshot(path)
    assert loaded["abc"].counts == memory.counts
    assert loaded["abc"].recent_tokens == ("cottagecore",)
