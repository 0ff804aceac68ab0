"""Deterministic prompt assembly for the single transcribe-and-grade call.

One bundle carries everything the model sees: the rendered problem statement,
instance-specific reference answers, the rubric, optional instructions, the
transcription + assessment directives, the response contract, and exactly one
image attachment (the submission's final upload). Assembly is a pure function
of its inputs; the fingerprint is a content digest over every part plus the
template version, so replay fixtures invalidate themselves whenever the
template changes.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources
from typing import Optional, Union

from .domain import QuestionInstance, Rubric, Submission, validate_rubric
from .errors import ConfigurationError, IntegrityError, SequencingError, ValidationError
from .serialize import digest_doc

_TEMPLATE_RESOURCE = "prompt_template_v1.json"


def _load_template() -> dict:
    data = resources.files("inkgrade").joinpath(_TEMPLATE_RESOURCE).read_text("utf-8")
    return json.loads(data)


TEMPLATE = _load_template()
TEMPLATE_VERSION: str = TEMPLATE["template_version"]
CONTRACT_VERSION: str = TEMPLATE["contract_version"]


@dataclass(frozen=True)
class TextPart:
    text: str


@dataclass(frozen=True)
class ImagePart:
    blob_digest: str
    media_type: str


PromptPart = Union[TextPart, ImagePart]


@dataclass(frozen=True)
class PromptBundle:
    system_text: str
    user_parts: tuple[PromptPart, ...]
    response_contract: str
    template_version: str
    fingerprint: str

    def image_parts(self) -> tuple[ImagePart, ...]:
        return tuple(p for p in self.user_parts if isinstance(p, ImagePart))

    def text(self) -> str:
        """All text segments joined; used by tests and debugging output."""
        return "\n\n".join(p.text for p in self.user_parts if isinstance(p, TextPart))


@dataclass(frozen=True)
class AssemblyOptions:
    include_reference_answers: bool = True
    extra_instructions: Optional[str] = None


def _bundle_fingerprint(
    system_text: str,
    parts: tuple[PromptPart, ...],
    response_contract: str,
    template_version: str,
) -> str:
    encoded = []
    for part in parts:
        if isinstance(part, TextPart):
            encoded.append({"kind": "text", "text": part.text})
        else:
            encoded.append(
                {
                    "kind": "image",
                    "blob_digest": part.blob_digest,
                    "media_type": part.media_type,
                }
            )
    return digest_doc(
        {
            "template_version": template_version,
            "system_text": system_text,
            "parts": encoded,
            "response_contract": response_contract,
        }
    )


def render_rubric_block(rubric: Rubric) -> str:
    """One line per item, ordered by the item `order` field; stable output."""
    lines = [
        f"- [{item.item_id}] {item.description}"
        for item in rubric.ordered_items()
    ]
    return "\n".join(lines)


def render_reference_answers(instance: QuestionInstance) -> str:
    return "\n".join(f"- {label}: {value}" for label, value in instance.reference_answers)


def assemble_prompt(
    instance: QuestionInstance,
    rubric: Rubric,
    submission: Submission,
    options: Optional[AssemblyOptions] = None,
) -> PromptBundle:
    """Build the grading prompt for one submission.

    Requires a finalized rubric and a closed submission; only the final
    uploaded image is attached. Identical inputs always produce an identical
    fingerprint.
    """
    opts = options or AssemblyOptions()
    if not rubric.finalized:
        raise ConfigurationError(
            f"rubric {rubric.rubric_id} v{rubric.version} is not finalized"
        )
    violations = validate_rubric(rubric)
    if violations:
        raise ValidationError(f"invalid rubric: {'; '.join(violations)}")
    if not submission.closed:
        raise SequencingError(
            f"submission {submission.submission_id} is not closed; grading runs only after close"
        )
    if rubric.question_id != instance.question_id:
        raise IntegrityError(
            f"rubric {rubric.rubric_id} grades question {rubric.question_id}, "
            f"but instance {instance.instance_id} renders {instance.question_id}"
        )
    if submission.instance_id != instance.instance_id:
        raise IntegrityError(
            f"submission {submission.submission_id} belongs to instance "
            f"{submission.instance_id}, not {instance.instance_id}"
        )

    sections: list[str] = [f"## Problem statement\n{instance.statement}"]
    if opts.include_reference_answers and instance.reference_answers:
        sections.append(
            "## Reference answers (for this problem instance)\n"
            + render_reference_answers(instance)
        )
    sections.append("## Rubric\n" + render_rubric_block(rubric))
    instructions = [
        text
        for text in (instance.grading_instructions, opts.extra_instructions)
        if text
    ]
    if instructions:
        sections.append("## Additional instructions\n" + "\n\n".join(instructions))
    sections.append(
        "## Your tasks\n"
        + TEMPLATE["transcription_directive"]
        + "\n\n"
        + TEMPLATE["assessment_directive"]
    )
    response_contract = TEMPLATE["response_contract"]
    sections.append("## Response format\n" + response_contract)

    final = submission.final_image
    parts: tuple[PromptPart, ...] = tuple(TextPart(s) for s in sections) + (
        ImagePart(blob_digest=final.blob_digest, media_type=final.media_type),
    )
    system_text = TEMPLATE["system_text"]
    return PromptBundle(
        system_text=system_text,
        user_parts=parts,
        response_contract=response_contract,
        template_version=TEMPLATE_VERSION,
        fingerprint=_bundle_fingerprint(
            system_text, parts, response_contract, TEMPLATE_VERSION
        ),
    )
