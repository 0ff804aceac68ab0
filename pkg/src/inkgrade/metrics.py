"""AI–human agreement metrics at the rubric-item level.

Every comparison cell is one (submission, rubric item): MATCH when the AI's
selected/not-selected decision equals the human's, FP when the AI selected an
item the human did not, FN for the reverse. Disagreement cells can be
categorized by a reviewer as a transcription error (TE: missing, hallucinated,
or mistranscribed content) or a rubric application error (RAE: rubric logic
misapplied despite an adequate transcription); the engine stores those tags
and never auto-classifies — at most it surfaces a suggestion.

Percentages are exact rationals internally; rendering rounds half-up to whole
percent, so a rendered row may sum to 99–101 while the exact row always sums
to 100.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from fractions import Fraction
from typing import Iterable, Optional, Sequence

from . import store as storage
from .domain import (
    AiEvaluation,
    HumanEvaluation,
    Rubric,
    ai_evaluation_from_doc,
    human_evaluation_from_doc,
    rubric_doc_id,
    rubric_from_doc,
    validate_selections,
)
from .errors import UnknownIdError, ValidationError
from .parsing import FLAG_EMPTY_TRANSCRIPTION
from .serialize import dt_from_str, dt_to_str, utcnow
from .store import AuditKind, FileStore


class Outcome(str, Enum):
    MATCH = "MATCH"
    FP = "FP"
    FN = "FN"


class DisagreementCategory(str, Enum):
    UNCATEGORIZED = "UNCATEGORIZED"
    TE = "TE"
    RAE = "RAE"


@dataclass(frozen=True)
class ItemOutcome:
    submission_id: str
    question_id: str
    model_config_id: str
    item_id: str
    ai_selected: bool
    human_selected: bool
    outcome: Outcome


@dataclass(frozen=True)
class Disagreement:
    """One FP/FN cell, plus its (possibly absent) reviewer categorization."""

    disagreement_id: str
    submission_id: str
    question_id: str
    model_config_id: str
    item_id: str
    outcome: Outcome
    category: DisagreementCategory = DisagreementCategory.UNCATEGORIZED
    note: str = ""
    tagger: str = ""
    tagged_at: Optional[datetime] = None
    suggested_category: Optional[str] = None


@dataclass(frozen=True)
class AgreementReport:
    question_id: Optional[str]
    model_config_id: Optional[str]
    n_submissions: int
    items_per_submission: Optional[int]
    total_items: int
    match: int
    fp: int
    fn: int
    ria_pct: Optional[Fraction]
    fp_pct: Optional[Fraction]
    fn_pct: Optional[Fraction]
    te: int
    rae: int
    uncategorized: int
    te_pct: Optional[Fraction]
    rae_pct: Optional[Fraction]

    @property
    def empty(self) -> bool:
        return self.total_items == 0


def classify(ai_selected: bool, human_selected: bool) -> Outcome:
    if ai_selected == human_selected:
        return Outcome.MATCH
    return Outcome.FP if ai_selected else Outcome.FN


def disagreement_id(submission_id: str, model_config_id: str, item_id: str) -> str:
    return f"{submission_id}:{model_config_id}:{item_id}"


def item_outcomes(
    ai: AiEvaluation, human: HumanEvaluation, rubric: Rubric
) -> list[ItemOutcome]:
    """One classified cell per rubric item; both evaluations must cover the
    rubric exactly and grade the same submission."""
    if ai.submission_id != human.submission_id:
        raise ValidationError(
            f"evaluations compare different submissions: "
            f"{ai.submission_id} vs {human.submission_id}"
        )
    for name, ev in (("ai", ai), ("human", human)):
        violations = validate_selections(rubric, ev.selections)
        if violations:
            raise ValidationError(
                f"{name} evaluation does not cover the rubric: {'; '.join(violations)}"
            )
    ai_by_id = {s.item_id: s.selected for s in ai.selections}
    human_by_id = {s.item_id: s.selected for s in human.selections}
    outcomes = []
    for item in rubric.ordered_items():
        a, h = ai_by_id[item.item_id], human_by_id[item.item_id]
        outcomes.append(
            ItemOutcome(
                submission_id=ai.submission_id,
                question_id=rubric.question_id,
                model_config_id=ai.model_config_id,
                item_id=item.item_id,
                ai_selected=a,
                human_selected=h,
                outcome=classify(a, h),
            )
        )
    return outcomes


GroupKey = tuple[Optional[str], Optional[str]]


def _group_key(question_id: str, model_config_id: str, group_by: Sequence[str]) -> GroupKey:
    return (
        question_id if "question" in group_by else None,
        model_config_id if "model" in group_by else None,
    )


def compute_report(
    outcomes: Iterable[ItemOutcome],
    disagreements: Iterable[Disagreement] = (),
    *,
    group_by: Sequence[str] = ("question", "model"),
    expected_groups: Optional[Sequence[GroupKey]] = None,
) -> list[AgreementReport]:
    """Aggregate outcomes (and tag state) per group, in exact arithmetic.

    Groups with zero items come back as explicit empty reports rather than
    dividing by zero; TE/RAE percentages cover categorized disagreements only.
    """
    for key in group_by:
        if key not in ("question", "model"):
            raise ValidationError(f"unknown grouping key: {key}")
    grouped: dict[GroupKey, list[ItemOutcome]] = {}
    for out in outcomes:
        grouped.setdefault(
            _group_key(out.question_id, out.model_config_id, group_by), []
        ).append(out)
    tags: dict[GroupKey, list[Disagreement]] = {}
    for dis in disagreements:
        tags.setdefault(
            _group_key(dis.question_id, dis.model_config_id, group_by), []
        ).append(dis)
    keys = set(grouped) | set(tags)
    if expected_groups is not None:
        keys |= set(expected_groups)

    reports = []
    for key in sorted(keys, key=lambda k: (k[0] or "", k[1] or "")):
        cells = grouped.get(key, [])
        total = len(cells)
        match = sum(1 for c in cells if c.outcome is Outcome.MATCH)
        fp = sum(1 for c in cells if c.outcome is Outcome.FP)
        fn = sum(1 for c in cells if c.outcome is Outcome.FN)
        submissions = {c.submission_id for c in cells}
        n_subs = len(submissions)
        items_per_sub = total // n_subs if n_subs and total % n_subs == 0 else None
        group_tags = tags.get(key, [])
        te = sum(1 for d in group_tags if d.category is DisagreementCategory.TE)
        rae = sum(1 for d in group_tags if d.category is DisagreementCategory.RAE)
        uncategorized = (fp + fn) - te - rae
        categorized = te + rae
        reports.append(
            AgreementReport(
                question_id=key[0],
                model_config_id=key[1],
                n_submissions=n_subs,
                items_per_submission=items_per_sub,
                total_items=total,
                match=match,
                fp=fp,
                fn=fn,
                ria_pct=Fraction(match * 100, total) if total else None,
                fp_pct=Fraction(fp * 100, total) if total else None,
                fn_pct=Fraction(fn * 100, total) if total else None,
                te=te,
                rae=rae,
                uncategorized=uncategorized,
                te_pct=Fraction(te * 100, categorized) if categorized else None,
                rae_pct=Fraction(rae * 100, categorized) if categorized else None,
            )
        )
    return reports


def round_half_up(value: Fraction) -> int:
    return math.floor(value + Fraction(1, 2))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

HEADERS = (
    "Question",
    "#Subs",
    "#Rubric Items",
    "Model",
    "%RIA",
    "%FP",
    "%FN",
    "%TE",
    "%RAE",
)

CSV_HEADERS = (
    "question",
    "n_subs",
    "n_rubric_items",
    "model",
    "ria_pct",
    "fp_pct",
    "fn_pct",
    "te_pct",
    "rae_pct",
)


def _pct_cell(value: Optional[Fraction]) -> str:
    return "-" if value is None else str(round_half_up(value))


def report_row(report: AgreementReport) -> tuple[str, ...]:
    return (
        report.question_id or "*",
        str(report.n_submissions),
        "-" if report.items_per_submission is None else str(report.items_per_submission),
        report.model_config_id or "*",
        _pct_cell(report.ria_pct),
        _pct_cell(report.fp_pct),
        _pct_cell(report.fn_pct),
        _pct_cell(report.te_pct),
        _pct_cell(report.rae_pct),
    )


def render_table(reports: Sequence[AgreementReport], fmt: str = "text") -> str:
    """Render reports as a fixed-column table; byte-deterministic.

    Rows sort by (question, model). Formats: text (pipe-separated), csv,
    markdown.
    """
    ordered = sorted(
        reports, key=lambda r: (r.question_id or "", r.model_config_id or "")
    )
    rows = [report_row(r) for r in ordered]
    if fmt == "text":
        lines = [" | ".join(HEADERS)]
        lines += [" | ".join(row) for row in rows]
        return "\n".join(lines) + "\n"
    if fmt == "csv":
        import csv
        import io

        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(CSV_HEADERS)
        for row in rows:
            writer.writerow("" if cell == "-" else cell for cell in row)
        return buf.getvalue()
    if fmt == "markdown":
        lines = ["| " + " | ".join(HEADERS) + " |"]
        lines.append("|" + "|".join(" --- " for _ in HEADERS) + "|")
        lines += ["| " + " | ".join(row) + " |" for row in rows]
        return "\n".join(lines) + "\n"
    raise ValidationError(f"unknown table format: {fmt}")


# ---------------------------------------------------------------------------
# Store-backed derivation and tagging
# ---------------------------------------------------------------------------

def latest_human_evaluation(store: FileStore, submission_id: str) -> Optional[dict]:
    """Newest human evaluation document for a submission (ids carry a
    monotone per-submission counter)."""
    prefix = f"{submission_id}:h"
    docs = [
        doc_id
        for doc_id in store.list_documents(storage.KIND_HUMAN_EVALUATION)
        if doc_id.startswith(prefix)
    ]
    if not docs:
        return None
    return store.get_document(storage.KIND_HUMAN_EVALUATION, max(docs))


def ai_evaluations_for(
    store: FileStore, submission_id: str, model_config_id: Optional[str] = None
) -> list[dict]:
    docs = []
    for _, doc in storage.iter_kind_documents(store, storage.KIND_AI_EVALUATION):
        if doc["submission_id"] != submission_id:
            continue
        if model_config_id and doc["model_config_id"] != model_config_id:
            continue
        docs.append(doc)
    docs.sort(key=lambda d: d["model_config_id"])
    return docs


def _tag_doc_to_disagreement(doc: dict) -> Disagreement:
    return Disagreement(
        disagreement_id=doc["disagreement_id"],
        submission_id=doc["submission_id"],
        question_id=doc["question_id"],
        model_config_id=doc["model_config_id"],
        item_id=doc["item_id"],
        outcome=Outcome(doc["outcome"]),
        category=DisagreementCategory(doc["category"]),
        note=doc.get("note", ""),
        tagger=doc.get("tagger", ""),
        tagged_at=dt_from_str(doc["tagged_at"]) if doc.get("tagged_at") else None,
        suggested_category=doc.get("suggested_category"),
    )


def _disagreement_to_doc(dis: Disagreement) -> dict:
    return {
        "disagreement_id": dis.disagreement_id,
        "submission_id": dis.submission_id,
        "question_id": dis.question_id,
        "model_config_id": dis.model_config_id,
        "item_id": dis.item_id,
        "outcome": dis.outcome.value,
        "category": dis.category.value,
        "note": dis.note,
        "tagger": dis.tagger,
        "tagged_at": dt_to_str(dis.tagged_at) if dis.tagged_at else None,
        "suggested_category": dis.suggested_category,
    }


def collect_outcomes(
    store: FileStore, *, model_config_id: Optional[str] = None
) -> tuple[list[ItemOutcome], list[Disagreement]]:
    """Derive live outcomes and disagreements from the store.

    Outcomes always compare against the *latest* human evaluation; stored tag
    documents attach to a cell only while the cell still disagrees the same
    way, so a tag orphaned by a newer override silently drops out instead of
    contaminating the counts.
    """
    outcomes: list[ItemOutcome] = []
    disagreements: list[Disagreement] = []
    for submission_id in store.list_documents(storage.KIND_SUBMISSION):
        human_doc = latest_human_evaluation(store, submission_id)
        if human_doc is None:
            continue
        human = human_evaluation_from_doc(human_doc)
        for ai_doc in ai_evaluations_for(store, submission_id, model_config_id):
            ai = ai_evaluation_from_doc(ai_doc)
            rubric = rubric_from_doc(
                store.get_document(
                    storage.KIND_RUBRIC, rubric_doc_id(ai.rubric_id, ai.rubric_version)
                )
            )
            cells = item_outcomes(ai, human, rubric)
            outcomes.extend(cells)
            suggestion = (
                DisagreementCategory.TE.value
                if FLAG_EMPTY_TRANSCRIPTION in ai.flags
                else None
            )
            for cell in cells:
                if cell.outcome is Outcome.MATCH:
                    continue
                dis_id = disagreement_id(
                    cell.submission_id, cell.model_config_id, cell.item_id
                )
                dis = Disagreement(
                    disagreement_id=dis_id,
                    submission_id=cell.submission_id,
                    question_id=cell.question_id,
                    model_config_id=cell.model_config_id,
                    item_id=cell.item_id,
                    outcome=cell.outcome,
                    suggested_category=suggestion,
                )
                if store.has_document(storage.KIND_DISAGREEMENT, dis_id):
                    tag = _tag_doc_to_disagreement(
                        store.get_document(storage.KIND_DISAGREEMENT, dis_id)
                    )
                    if tag.outcome is cell.outcome:
                        dis = replace(
                            dis,
                            category=tag.category,
                            note=tag.note,
                            tagger=tag.tagger,
                            tagged_at=tag.tagged_at,
                        )
                disagreements.append(dis)
    return outcomes, disagreements


def live_disagreement(store: FileStore, dis_id: str) -> Optional[Disagreement]:
    _, disagreements = collect_outcomes(store)
    for dis in disagreements:
        if dis.disagreement_id == dis_id:
            return dis
    return None


def categorize_disagreement(
    store: FileStore,
    dis_id: str,
    category: DisagreementCategory,
    note: str = "",
    tagger: str = "",
    *,
    now=utcnow,
) -> Disagreement:
    """Record a reviewer's TE/RAE call for one disagreement cell.

    The referenced cell must currently be an FP or FN under the latest human
    evaluation; tagging a MATCH cell is a validation error. Retagging is
    allowed — every tag write lands in the audit log.
    """
    if category not in (DisagreementCategory.TE, DisagreementCategory.RAE):
        raise ValidationError(f"category must be TE or RAE, got {category}")
    live = live_disagreement(store, dis_id)
    if live is None:
        parts = dis_id.split(":")
        if len(parts) == 3 and store.has_document(storage.KIND_SUBMISSION, parts[0]):
            raise ValidationError(
                f"{dis_id} is not a disagreement cell (AI and human agree, or no grades)"
            )
        raise UnknownIdError(f"no such disagreement: {dis_id}")
    tagged = replace(
        live, category=category, note=note, tagger=tagger, tagged_at=now()
    )
    store.put_document(
        storage.KIND_DISAGREEMENT,
        dis_id,
        _disagreement_to_doc(tagged),
        event=AuditKind.DISAGREEMENT_TAGGED,
        actor=tagger or "reviewer",
    )
    return tagged
