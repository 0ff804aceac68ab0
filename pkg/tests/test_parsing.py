from __future__ import annotations

import json
import random

from inkgrade.domain import TokenUsage
from inkgrade.gateway import RawModelResponse
from inkgrade.parsing import (
    Defect,
    DefectKind,
    FLAG_EMPTY_TRANSCRIPTION,
    parse_evaluation,
    repair_pass,
)

from .conftest import T0, make_rubric, wire_body


def _raw(body: str) -> RawModelResponse:
    return RawModelResponse(body=body, usage=TokenUsage(100, 40), latency=0.2, attempts_used=1)


def _parse(body, rubric=None):
    rubric = rubric or make_rubric(3)
    return parse_evaluation(_raw(body), rubric, "s1", "m1", now=lambda: T0)


def _repair(body, rubric=None):
    rubric = rubric or make_rubric(3)
    return repair_pass(_raw(body), rubric, "s1", "m1", now=lambda: T0)


def test_well_formed_body_parses_cleanly():
    rubric = make_rubric(3)
    outcome = _parse(wire_body(rubric), rubric)
    assert outcome.defects == ()
    assert outcome.evaluation is not None
    assert len(outcome.evaluation.selections) == 3
    assert outcome.evaluation.transcription == "x = [1, 2]"
    assert not outcome.repaired


def test_missing_item_is_a_defect_never_a_default():
    rubric = make_rubric(3)
    body = json.dumps(
        {
            "transcription": "x",
            "items": [
                {"item_id": "i1", "selected": True, "justification": "a"},
                {"item_id": "i2", "selected": False, "justification": "b"},
            ],
        }
    )
    outcome = _parse(body, rubric)
    assert Defect(DefectKind.MISSING_ITEM, "i3") in outcome.defects
    assert outcome.evaluation is None


def test_unknown_item_detected_by_set_difference():
    # Oracle: item ids in the body minus rubric ids -> expected UNKNOWN_ITEM list.
    rubric = make_rubric(3)
    entries = [
        {"item_id": "i1", "selected": True, "justification": ""},
        {"item_id": "i2", "selected": True, "justification": ""},
        {"item_id": "i3", "selected": True, "justification": ""},
        {"item_id": "i9", "selected": False, "justification": ""},
    ]
    body = json.dumps({"transcription": "x", "items": entries})
    expected_unknown = sorted(
        {e["item_id"] for e in entries} - {it.item_id for it in rubric.items}
    )
    outcome = _parse(body, rubric)
    unknown = [d.detail for d in outcome.defects if d.kind is DefectKind.UNKNOWN_ITEM]
    assert unknown == expected_unknown == ["i9"]
    assert outcome.evaluation is None


def test_duplicate_item_is_a_defect():
    rubric = make_rubric(2)
    body = json.dumps(
        {
            "transcription": "x",
            "items": [
                {"item_id": "i1", "selected": True, "justification": ""},
                {"item_id": "i1", "selected": False, "justification": ""},
                {"item_id": "i2", "selected": True, "justification": ""},
            ],
        }
    )
    outcome = _parse(body, rubric)
    assert Defect(DefectKind.DUPLICATE_ITEM, "i1") in outcome.defects
    assert outcome.evaluation is None


def test_surrounding_prose_is_tolerated():
    rubric = make_rubric(3)
    body = "Here is my grading.\n" + wire_body(rubric) + "\nHope that helps!"
    outcome = _parse(body, rubric)
    assert outcome.evaluation is not None
    assert outcome.defects == ()


def test_fences_inside_a_transcription_string_do_not_malform():
    # Only structural fences defer to repair; a valid whole-body object may
    # legitimately quote fence markers in the transcription.
    rubric = make_rubric(2)
    body = wire_body(rubric, transcription="the student wrote ``` twice")
    outcome = _parse(body, rubric)
    assert outcome.evaluation is not None
    assert outcome.evaluation.transcription == "the student wrote ``` twice"


def test_non_boolean_decision_is_malformed_not_guessed():
    rubric = make_rubric(1)
    body = json.dumps(
        {"transcription": "x", "items": [{"item_id": "i1", "selected": "yes", "justification": ""}]}
    )
    outcome = _parse(body, rubric)
    assert any(d.kind is DefectKind.MALFORMED for d in outcome.defects)
    assert outcome.evaluation is None


def test_empty_transcription_is_soft_and_flagged():
    rubric = make_rubric(2)
    body = wire_body(rubric, transcription="")
    outcome = _parse(body, rubric)
    kinds = {d.kind for d in outcome.defects}
    assert kinds == {DefectKind.EMPTY_TRANSCRIPTION}
    assert outcome.evaluation is not None
    assert outcome.evaluation.flags == (FLAG_EMPTY_TRANSCRIPTION,)


def test_raw_digest_and_usage_are_captured():
    from inkgrade.serialize import sha256_hex

    rubric = make_rubric(2)
    body = wire_body(rubric)
    outcome = _parse(body, rubric)
    assert outcome.evaluation.raw_response_digest == sha256_hex(body.encode())
    assert outcome.evaluation.usage == TokenUsage(100, 40)
    assert outcome.evaluation.contract_version == "grading-response/1"


# ---------------------------------------------------------------------------
# repair pass
# ---------------------------------------------------------------------------

def test_fenced_block_parses_only_after_repair():
    rubric = make_rubric(3)
    body = "```json\n" + wire_body(rubric) + "\n```"
    first = _parse(body, rubric)
    assert first.evaluation is None
    assert any(d.kind is DefectKind.MALFORMED for d in first.defects)
    repaired = _repair(body, rubric)
    assert repaired.evaluation is not None
    assert repaired.repaired is True


def test_truncated_body_stays_malformed():
    rubric = make_rubric(3)
    body = wire_body(rubric)[: len(wire_body(rubric)) // 2]
    repaired = _repair(body, rubric)
    assert repaired.evaluation is None
    assert any(d.kind is DefectKind.MALFORMED for d in repaired.defects)


def test_repair_is_identity_on_valid_bodies():
    rubric = make_rubric(3)
    body = wire_body(rubric)
    direct = _parse(body, rubric)
    via_repair = _repair(body, rubric)
    assert via_repair == direct
    assert via_repair.repaired is False


# ---------------------------------------------------------------------------
# round trip and traceability
# ---------------------------------------------------------------------------

def test_parse_of_serialized_evaluation_is_identity():
    rubric = make_rubric(4)
    chosen = {"i1": True, "i2": False, "i3": True, "i4": False}
    body = wire_body(rubric, selected=chosen, transcription="full work shown")
    outcome = _parse(body, rubric)
    ev = outcome.evaluation
    assert ev is not None
    assert {s.item_id: s.selected for s in ev.selections} == chosen
    assert ev.transcription == "full work shown"
    # serialize back to the wire shape and parse again
    body2 = json.dumps(
        {
            "transcription": ev.transcription,
            "items": [
                {"item_id": s.item_id, "selected": s.selected, "justification": s.justification}
                for s in ev.selections
            ],
        }
    )
    again = _parse(body2, rubric).evaluation
    assert again.selections == ev.selections
    assert again.transcription == ev.transcription


def _independent_block_extract(body: str):
    """Test-side oracle: hand-rolled brace matcher, independent of the
    parser's raw_decode scan."""
    depth = 0
    start = None
    in_string = False
    escaped = False
    for idx, ch in enumerate(body):
        if in_string:
            if escaped:
                escaped = False
            elif ch == "\\":
                escaped = True
            elif ch == '"':
                in_string = False
            continue
        if ch == '"':
            in_string = True
        elif ch == "{":
            if depth == 0:
                start = idx
            depth += 1
        elif ch == "}":
            if depth > 0:
                depth -= 1
                if depth == 0:
                    try:
                        return json.loads(body[start : idx + 1])
                    except ValueError:
                        start = None
    return None


def test_no_selection_is_ever_invented_under_mutation():
    rubric = make_rubric(3)
    rng = random.Random(20260115)
    base = wire_body(rubric)
    for _ in range(500):
        body = list(base)
        for _ in range(rng.randint(1, 4)):
            pos = rng.randrange(len(body))
            op = rng.random()
            if op < 0.4:
                body[pos] = chr(rng.randrange(32, 127))
            elif op < 0.7:
                del body[pos]
            else:
                body.insert(pos, chr(rng.randrange(32, 127)))
        mutated = "".join(body)
        outcome = _parse(mutated, rubric)
        if outcome.evaluation is None:
            continue
        block = _independent_block_extract(mutated)
        assert block is not None, "parser accepted a body the oracle cannot locate"
        truth = {
            e["item_id"]: e["selected"]
            for e in block.get("items", [])
            if isinstance(e, dict) and isinstance(e.get("selected"), bool)
        }
        for sel in outcome.evaluation.selections:
            assert truth.get(sel.item_id) == sel.selected
