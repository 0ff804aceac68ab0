"""Parse model output into an AI evaluation, or into a precise defect list.

The response contract demands a single JSON object with a `transcription`
string and an `items` array holding exactly one {item_id, selected,
justification} entry per rubric item. Parsing is total: any byte string maps
to a ParseOutcome, never an exception. Nothing is ever fabricated — a rubric
item absent from the body is a MISSING_ITEM defect, not an implicit
"unselected", and a non-boolean decision never becomes a guess.

Bodies containing markdown code fences are deliberately left to the repair
pass: fence stripping is one of its documented normalizations, and keeping it
out of the primary parse keeps "what the model literally said" auditable.
"""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Callable, Optional

from .domain import AiEvaluation, ItemSelection, Rubric, TokenUsage
from .gateway import RawModelResponse
from .prompt import CONTRACT_VERSION
from .serialize import sha256_hex, utcnow

FLAG_EMPTY_TRANSCRIPTION = "EMPTY_TRANSCRIPTION"
FLAG_REPAIRED = "REPAIRED"


class DefectKind(str, Enum):
    MALFORMED = "MALFORMED"
    MISSING_ITEM = "MISSING_ITEM"
    UNKNOWN_ITEM = "UNKNOWN_ITEM"
    DUPLICATE_ITEM = "DUPLICATE_ITEM"
    EMPTY_TRANSCRIPTION = "EMPTY_TRANSCRIPTION"


# Defects that preclude building an evaluation at all.
BLOCKING_KINDS = frozenset(
    {
        DefectKind.MALFORMED,
        DefectKind.MISSING_ITEM,
        DefectKind.UNKNOWN_ITEM,
        DefectKind.DUPLICATE_ITEM,
    }
)


@dataclass(frozen=True)
class Defect:
    kind: DefectKind
    detail: str


@dataclass(frozen=True)
class ParseOutcome:
    evaluation: Optional[AiEvaluation]
    defects: tuple[Defect, ...]
    repaired: bool = False

    @property
    def blocked(self) -> bool:
        return any(d.kind in BLOCKING_KINDS for d in self.defects)


_FENCE_LINE = re.compile(r"^\s*```[A-Za-z0-9_-]*\s*$")


def _extract_object(body: str) -> Optional[dict]:
    """Locate the single structured block, tolerating surrounding prose.

    Tries the whole body first; otherwise scans for the first balanced JSON
    object that carries either contract key. Fenced bodies are refused here
    (see module docstring).
    """
    stripped = body.strip()
    try:
        whole = json.loads(stripped)
        if isinstance(whole, dict):
            return whole
    except ValueError:
        pass
    if "```" in body:
        return None
    decoder = json.JSONDecoder()
    idx = body.find("{")
    while idx != -1:
        try:
            candidate, _ = decoder.raw_decode(body, idx)
        except ValueError:
            idx = body.find("{", idx + 1)
            continue
        if isinstance(candidate, dict) and ("items" in candidate or "transcription" in candidate):
            return candidate
        idx = body.find("{", idx + 1)
    return None


def _outcome_from_body(
    body: str,
    raw: RawModelResponse,
    rubric: Rubric,
    submission_id: str,
    model_config_id: str,
    *,
    repaired: bool,
    now: Callable[[], datetime],
) -> ParseOutcome:
    defects: list[Defect] = []
    block = _extract_object(body)
    if block is None:
        defects.append(Defect(DefectKind.MALFORMED, "no structured block found"))
        return ParseOutcome(None, tuple(defects), repaired)

    transcription = block.get("transcription")
    if not isinstance(transcription, str):
        defects.append(
            Defect(DefectKind.MALFORMED, "transcription missing or not a string")
        )
        transcription = ""
    elif not transcription.strip():
        defects.append(
            Defect(DefectKind.EMPTY_TRANSCRIPTION, "transcription is empty")
        )

    entries = block.get("items")
    decided: dict[str, ItemSelection] = {}
    if not isinstance(entries, list):
        defects.append(Defect(DefectKind.MALFORMED, "items missing or not an array"))
    else:
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict):
                defects.append(
                    Defect(DefectKind.MALFORMED, f"items[{i}] is not an object")
                )
                continue
            item_id = entry.get("item_id")
            if not isinstance(item_id, str) or not item_id:
                defects.append(
                    Defect(DefectKind.MALFORMED, f"items[{i}]: item_id missing")
                )
                continue
            selected = entry.get("selected")
            if not isinstance(selected, bool):
                defects.append(
                    Defect(
                        DefectKind.MALFORMED,
                        f"items[{i}] ({item_id}): selected is not a boolean",
                    )
                )
                continue
            justification = entry.get("justification", "")
            if not isinstance(justification, str):
                defects.append(
                    Defect(
                        DefectKind.MALFORMED,
                        f"items[{i}] ({item_id}): justification is not a string",
                    )
                )
                continue
            if item_id in decided:
                defects.append(Defect(DefectKind.DUPLICATE_ITEM, item_id))
                continue
            decided[item_id] = ItemSelection(
                item_id=item_id, selected=selected, justification=justification
            )

    known = set(rubric.item_map())
    for unknown in sorted(set(decided) - known):
        defects.append(Defect(DefectKind.UNKNOWN_ITEM, unknown))
    for missing in sorted(known - set(decided)):
        defects.append(Defect(DefectKind.MISSING_ITEM, missing))

    outcome = ParseOutcome(None, tuple(defects), repaired)
    if outcome.blocked:
        return outcome

    flags: tuple[str, ...] = ()
    if any(d.kind is DefectKind.EMPTY_TRANSCRIPTION for d in defects):
        flags = (FLAG_EMPTY_TRANSCRIPTION,)
    evaluation = AiEvaluation(
        submission_id=submission_id,
        model_config_id=model_config_id,
        rubric_id=rubric.rubric_id,
        rubric_version=rubric.version,
        transcription=transcription,
        selections=tuple(decided[item.item_id] for item in rubric.ordered_items()),
        raw_response_digest=sha256_hex(raw.body.encode("utf-8")),
        usage=TokenUsage(raw.usage.input_tokens, raw.usage.output_tokens),
        created_at=now(),
        contract_version=CONTRACT_VERSION,
        flags=flags,
    )
    return ParseOutcome(evaluation, tuple(defects), repaired)


def parse_evaluation(
    raw: RawModelResponse,
    rubric: Rubric,
    submission_id: str,
    model_config_id: str,
    *,
    now: Callable[[], datetime] = utcnow,
) -> ParseOutcome:
    """Parse a raw model response against a rubric. Never raises."""
    return _outcome_from_body(
        raw.body, raw, rubric, submission_id, model_config_id, repaired=False, now=now
    )


def _strip_fences(body: str) -> str:
    lines = [line for line in body.splitlines() if not _FENCE_LINE.match(line)]
    return "\n".join(lines)


def _trim_to_braces(body: str) -> str:
    start = body.find("{")
    end = body.rfind("}")
    if start == -1 or end == -1 or end <= start:
        return body
    return body[start : end + 1]


def repair_pass(
    raw: RawModelResponse,
    rubric: Rubric,
    submission_id: str,
    model_config_id: str,
    *,
    now: Callable[[], datetime] = utcnow,
) -> ParseOutcome:
    """Bounded normalizations for a MALFORMED body: strip markdown code
    fences, then trim leading/trailing prose. Never fabricates a selection;
    a body these steps cannot mend stays MALFORMED."""
    first = parse_evaluation(raw, rubric, submission_id, model_config_id, now=now)
    if not first.blocked:
        return first
    body = raw.body
    for normalize in (_strip_fences, _trim_to_braces):
        body = normalize(body)
        outcome = _outcome_from_body(
            body, raw, rubric, submission_id, model_config_id, repaired=True, now=now
        )
        if not outcome.blocked:
            return outcome
    return first
