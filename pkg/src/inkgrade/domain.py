"""Core grading domain: rubrics, submissions, evaluations, and scores.

All types are immutable values; the operations here are pure functions, safe
for concurrent use. Scores are exact rationals (``fractions.Fraction``) so
that precedence resolution never hinges on floating-point rounding.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

from .errors import ValidationError
from .serialize import (
    dt_from_str,
    dt_to_str,
    fraction_from,
    fraction_to_str,
)


class GradeSource(str, Enum):
    AI = "AI"
    HUMAN = "HUMAN"


@dataclass(frozen=True)
class QuestionInstance:
    """One randomized rendering of a templated problem.

    Two instances of the same question may differ in statement text and
    reference answers; grading always uses the instance-specific values.
    """

    instance_id: str
    question_id: str
    variant_seed: str
    statement: str
    reference_answers: tuple[tuple[str, str], ...] = ()
    grading_instructions: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(
            self, "reference_answers",
            tuple((str(k), str(v)) for k, v in self.reference_answers),
        )
        if not self.statement.strip():
            raise ValidationError("instance statement is empty")
        labels = [label for label, _ in self.reference_answers]
        if len(labels) != len(set(labels)):
            raise ValidationError("duplicate reference answer labels")


@dataclass(frozen=True)
class RubricItem:
    item_id: str
    description: str
    points: Fraction
    order: int = 0


@dataclass(frozen=True)
class Rubric:
    """Versioned grading contract. Once finalized, a version never changes;
    amendments produce the next version as a new draft."""

    rubric_id: str
    question_id: str
    items: tuple[RubricItem, ...]
    max_points: Fraction
    finalized: bool = False
    version: int = 1

    def __post_init__(self):
        object.__setattr__(self, "items", tuple(self.items))

    def item_map(self) -> dict[str, RubricItem]:
        return {item.item_id: item for item in self.items}

    def ordered_items(self) -> tuple[RubricItem, ...]:
        return tuple(sorted(self.items, key=lambda it: (it.order, it.item_id)))

    def finalize(self) -> "Rubric":
        return replace(self, finalized=True)

    def amended(self, **changes) -> "Rubric":
        """Next-version draft; the prior version stays untouched."""
        changes.setdefault("finalized", False)
        return replace(self, version=self.version + 1, **changes)


@dataclass(frozen=True)
class SubmissionImage:
    blob_digest: str
    media_type: str
    captured_at: datetime


@dataclass(frozen=True)
class Submission:
    """Uploaded images for one question instance. Multiple images may be
    stored, but only the final one is ever graded; a submission becomes
    gradable when ``closed_at`` is set."""

    submission_id: str
    instance_id: str
    question_id: str
    submitter: str
    images: tuple[SubmissionImage, ...]
    final_image_index: int
    closed_at: Optional[datetime] = None

    def __post_init__(self):
        object.__setattr__(self, "images", tuple(self.images))
        if not self.images:
            raise ValidationError("submission has no images")
        if self.final_image_index != len(self.images) - 1:
            raise ValidationError(
                "final_image_index must address the last image "
                f"(got {self.final_image_index} of {len(self.images)})"
            )

    @property
    def closed(self) -> bool:
        return self.closed_at is not None

    @property
    def final_image(self) -> SubmissionImage:
        return self.images[self.final_image_index]


@dataclass(frozen=True)
class ItemSelection:
    item_id: str
    selected: bool
    justification: str = ""


@dataclass(frozen=True)
class TokenUsage:
    input_tokens: int = 0
    output_tokens: int = 0


@dataclass(frozen=True)
class AiEvaluation:
    """Model-produced grading decision, kept verbatim and never mutated.

    ``rubric_id``/``rubric_version`` pin the exact rubric the decision was
    made against; ``contract_version`` pins the response grammar in force.
    """

    submission_id: str
    model_config_id: str
    rubric_id: str
    rubric_version: int
    transcription: str
    selections: tuple[ItemSelection, ...]
    raw_response_digest: str
    usage: TokenUsage
    created_at: datetime
    contract_version: str = ""
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "selections", tuple(self.selections))
        object.__setattr__(self, "flags", tuple(self.flags))


@dataclass(frozen=True)
class HumanEvaluation:
    submission_id: str
    grader_id: str
    selections: tuple[ItemSelection, ...]
    created_at: datetime

    def __post_init__(self):
        object.__setattr__(self, "selections", tuple(self.selections))


@dataclass(frozen=True)
class EffectiveGrade:
    submission_id: str
    source: GradeSource
    selections: tuple[ItemSelection, ...]
    score: Fraction

    def __post_init__(self):
        object.__setattr__(self, "selections", tuple(self.selections))


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------

def validate_rubric(rubric: Rubric) -> list[str]:
    """Check every rubric invariant; the list of violations is empty iff ok."""
    violations: list[str] = []
    if not rubric.items:
        violations.append("empty rubric")
    seen: set[str] = set()
    for item in rubric.items:
        if item.item_id in seen:
            violations.append(f"duplicate item_id {item.item_id}")
        seen.add(item.item_id)
        if not item.description.strip():
            violations.append(f"item {item.item_id}: empty description")
    if rubric.max_points < 0:
        violations.append("max_points is negative")
    if rubric.version < 1:
        violations.append("version must be >= 1")
    return violations


def validate_selections(
    rubric: Rubric, selections: Sequence[ItemSelection]
) -> list[str]:
    """Selections must cover every rubric item exactly once, nothing else."""
    violations: list[str] = []
    known = set(rubric.item_map())
    seen: set[str] = set()
    for sel in selections:
        if sel.item_id not in known:
            violations.append(f"unknown item_id {sel.item_id}")
        elif sel.item_id in seen:
            violations.append(f"duplicate selection for {sel.item_id}")
        seen.add(sel.item_id)
    for missing in sorted(known - seen):
        violations.append(f"missing selection for {missing}")
    return violations


def compute_score(rubric: Rubric, selections: Sequence[ItemSelection]) -> Fraction:
    """Sum of points over selected items, clamped to [0, max_points].

    Exact rational arithmetic; order of selections never matters. Items may
    carry negative points (deduction-style rubrics), hence the clamp.
    """
    items = rubric.item_map()
    seen: set[str] = set()
    total = Fraction(0)
    for sel in selections:
        if sel.item_id not in items:
            raise ValidationError(f"unknown item_id {sel.item_id}")
        if sel.item_id in seen:
            raise ValidationError(f"duplicate selection for {sel.item_id}")
        seen.add(sel.item_id)
        if sel.selected:
            total += items[sel.item_id].points
    return min(max(total, Fraction(0)), rubric.max_points)


def resolve_effective_grade(
    ai: Optional[AiEvaluation],
    human: Optional[HumanEvaluation],
    rubric: Rubric,
) -> EffectiveGrade:
    """Human-assigned grades always take precedence over AI grades."""
    if human is not None:
        return EffectiveGrade(
            submission_id=human.submission_id,
            source=GradeSource.HUMAN,
            selections=human.selections,
            score=compute_score(rubric, human.selections),
        )
    if ai is not None:
        return EffectiveGrade(
            submission_id=ai.submission_id,
            source=GradeSource.AI,
            selections=ai.selections,
            score=compute_score(rubric, ai.selections),
        )
    raise ValidationError("no evaluation to resolve: both ai and human absent")


# ---------------------------------------------------------------------------
# Document codecs (the store's canonical on-disk shapes)
# ---------------------------------------------------------------------------

def rubric_doc_id(rubric_id: str, version: int) -> str:
    return f"{rubric_id}@v{version}"


def instance_to_doc(instance: QuestionInstance) -> dict:
    return {
        "instance_id": instance.instance_id,
        "question_id": instance.question_id,
        "variant_seed": instance.variant_seed,
        "statement": instance.statement,
        "reference_answers": [[k, v] for k, v in instance.reference_answers],
        "grading_instructions": instance.grading_instructions,
    }


def instance_from_doc(doc: dict) -> QuestionInstance:
    return QuestionInstance(
        instance_id=doc["instance_id"],
        question_id=doc["question_id"],
        variant_seed=doc["variant_seed"],
        statement=doc["statement"],
        reference_answers=tuple((k, v) for k, v in doc.get("reference_answers", [])),
        grading_instructions=doc.get("grading_instructions"),
    )


def rubric_to_doc(rubric: Rubric) -> dict:
    return {
        "rubric_id": rubric.rubric_id,
        "question_id": rubric.question_id,
        "version": rubric.version,
        "finalized": rubric.finalized,
        "max_points": fraction_to_str(rubric.max_points),
        "items": [
            {
                "item_id": it.item_id,
                "description": it.description,
                "points": fraction_to_str(it.points),
                "order": it.order,
            }
            for it in rubric.items
        ],
    }


def rubric_from_doc(doc: dict) -> Rubric:
    return Rubric(
        rubric_id=doc["rubric_id"],
        question_id=doc["question_id"],
        version=int(doc["version"]),
        finalized=bool(doc["finalized"]),
        max_points=fraction_from(doc["max_points"]),
        items=tuple(
            RubricItem(
                item_id=item["item_id"],
                description=item["description"],
                points=fraction_from(item["points"]),
                order=int(item.get("order", i)),
            )
            for i, item in enumerate(doc["items"])
        ),
    )


def submission_to_doc(sub: Submission) -> dict:
    return {
        "submission_id": sub.submission_id,
        "instance_id": sub.instance_id,
        "question_id": sub.question_id,
        "submitter": sub.submitter,
        "final_image_index": sub.final_image_index,
        "closed_at": dt_to_str(sub.closed_at) if sub.closed_at else None,
        "images": [
            {
                "blob_digest": img.blob_digest,
                "media_type": img.media_type,
                "captured_at": dt_to_str(img.captured_at),
            }
            for img in sub.images
        ],
    }


def submission_from_doc(doc: dict) -> Submission:
    return Submission(
        submission_id=doc["submission_id"],
        instance_id=doc["instance_id"],
        question_id=doc["question_id"],
        submitter=doc["submitter"],
        final_image_index=int(doc["final_image_index"]),
        closed_at=dt_from_str(doc["closed_at"]) if doc.get("closed_at") else None,
        images=tuple(
            SubmissionImage(
                blob_digest=img["blob_digest"],
                media_type=img["media_type"],
                captured_at=dt_from_str(img["captured_at"]),
            )
            for img in doc["images"]
        ),
    )


def _selections_to_doc(selections: Sequence[ItemSelection]) -> list[dict]:
    return [
        {"item_id": s.item_id, "selected": s.selected, "justification": s.justification}
        for s in selections
    ]


def _selections_from_doc(items: Sequence[dict]) -> tuple[ItemSelection, ...]:
    return tuple(
        ItemSelection(
            item_id=s["item_id"],
            selected=bool(s["selected"]),
            justification=s.get("justification", ""),
        )
        for s in items
    )


def ai_evaluation_to_doc(ev: AiEvaluation) -> dict:
    return {
        "submission_id": ev.submission_id,
        "model_config_id": ev.model_config_id,
        "rubric_id": ev.rubric_id,
        "rubric_version": ev.rubric_version,
        "transcription": ev.transcription,
        "selections": _selections_to_doc(ev.selections),
        "raw_response_digest": ev.raw_response_digest,
        "usage": {
            "input_tokens": ev.usage.input_tokens,
            "output_tokens": ev.usage.output_tokens,
        },
        "created_at": dt_to_str(ev.created_at),
        "contract_version": ev.contract_version,
        "flags": list(ev.flags),
    }


def ai_evaluation_from_doc(doc: dict) -> AiEvaluation:
    return AiEvaluation(
        submission_id=doc["submission_id"],
        model_config_id=doc["model_config_id"],
        rubric_id=doc["rubric_id"],
        rubric_version=int(doc["rubric_version"]),
        transcription=doc["transcription"],
        selections=_selections_from_doc(doc["selections"]),
        raw_response_digest=doc["raw_response_digest"],
        usage=TokenUsage(
            input_tokens=int(doc["usage"]["input_tokens"]),
            output_tokens=int(doc["usage"]["output_tokens"]),
        ),
        created_at=dt_from_str(doc["created_at"]),
        contract_version=doc.get("contract_version", ""),
        flags=tuple(doc.get("flags", [])),
    )


def human_evaluation_to_doc(ev: HumanEvaluation, rubric_id: str, rubric_version: int) -> dict:
    return {
        "submission_id": ev.submission_id,
        "grader_id": ev.grader_id,
        "rubric_id": rubric_id,
        "rubric_version": rubric_version,
        "selections": _selections_to_doc(ev.selections),
        "created_at": dt_to_str(ev.created_at),
    }


def human_evaluation_from_doc(doc: dict) -> HumanEvaluation:
    return HumanEvaluation(
        submission_id=doc["submission_id"],
        grader_id=doc["grader_id"],
        selections=_selections_from_doc(doc["selections"]),
        created_at=dt_from_str(doc["created_at"]),
    )
