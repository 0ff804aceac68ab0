"""Review HTTP API: the surface the grading console works against.

Pure projection of the evidence store plus two write paths (override, tag)
that delegate to the orchestrator and metrics modules. Restarting the service
loses nothing and changes no response. Errors are machine-readable JSON:
404 unknown id, 409 rubric-version conflict, 422 validation failure.
"""
from __future__ import annotations

from fractions import Fraction
from pathlib import Path
from typing import Optional

from fastapi import Depends, FastAPI, Header, Query, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from . import store as storage
from .domain import (
    GradeSource,
    HumanEvaluation,
    ItemSelection,
    ai_evaluation_from_doc,
    compute_score,
    human_evaluation_from_doc,
    rubric_doc_id,
    rubric_from_doc,
)
from .errors import ConflictError, InkgradeError, UnknownIdError
from .metrics import (
    DisagreementCategory,
    Outcome,
    ai_evaluations_for,
    categorize_disagreement,
    collect_outcomes,
    compute_report,
    item_outcomes,
    latest_human_evaluation,
    render_table,
    report_row,
)
from .orchestrator import Orchestrator
from .serialize import fraction_to_str, utcnow
from .store import FileStore

_ERROR_STATUS = {
    "unknown-id": 404,
    "conflict": 409,
    "validation": 422,
    "configuration": 422,
    "sequencing": 422,
    "integrity": 409,
    "immutability": 409,
}


class SelectionIn(BaseModel):
    item_id: str
    selected: bool
    justification: str = ""


class OverrideIn(BaseModel):
    grader_id: str
    selections: list[SelectionIn]
    rubric_version: Optional[int] = None


class TagIn(BaseModel):
    category: str = Field(pattern="^(TE|RAE)$")
    note: str = ""
    tagger: str = ""


def _image_media_type(data: bytes) -> str:
    if data[:8] == b"\x89PNG\r\n\x1a\n":
        return "image/png"
    if data[:3] == b"\xff\xd8\xff":
        return "image/jpeg"
    if data[:4] == b"RIFF" and data[8:12] == b"WEBP":
        return "image/webp"
    return "application/octet-stream"


def _pct(value: Optional[Fraction]) -> Optional[str]:
    return None if value is None else fraction_to_str(value)


def create_app(store_dir: Path | str, *, token: str) -> FastAPI:
    app = FastAPI(title="inkgrade review API", docs_url=None, redoc_url=None)
    # The review console runs in a browser, typically served from another
    # origin (or file://); auth is the bearer token, not the origin.
    from fastapi.middleware.cors import CORSMiddleware

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )
    store = FileStore(store_dir, create=False)
    orchestrator = Orchestrator(store, actor="review-api")

    def require_auth(authorization: str = Header(default="")) -> None:
        if authorization != f"Bearer {token}":
            raise PermissionError("invalid or missing bearer token")

    @app.exception_handler(InkgradeError)
    async def _domain_error(request: Request, exc: InkgradeError):
        status = _ERROR_STATUS.get(exc.code, 400)
        return JSONResponse(
            status_code=status, content={"error": exc.code, "detail": str(exc)}
        )

    @app.exception_handler(PermissionError)
    async def _auth_error(request: Request, exc: PermissionError):
        return JSONResponse(
            status_code=401, content={"error": "unauthorized", "detail": str(exc)}
        )

    @app.get("/healthz")
    def healthz():
        return {"status": "ok"}

    # -- queue ---------------------------------------------------------------

    @app.get("/queue", dependencies=[Depends(require_auth)])
    def list_queue(
        question: Optional[str] = None,
        model_config: Optional[str] = None,
        has_override: Optional[bool] = None,
        limit: int = Query(default=50, ge=1, le=500),
        cursor: Optional[str] = None,
    ):
        entries = []
        for submission_id in store.list_documents(storage.KIND_SUBMISSION):
            sub_doc = store.get_document(storage.KIND_SUBMISSION, submission_id)
            human_doc = latest_human_evaluation(store, submission_id)
            for ai_doc in ai_evaluations_for(store, submission_id):
                if question and sub_doc["question_id"] != question:
                    continue
                if model_config and ai_doc["model_config_id"] != model_config:
                    continue
                entry = _queue_entry(store, sub_doc, ai_doc, human_doc)
                if has_override is not None and entry["has_override"] != has_override:
                    continue
                entries.append(entry)
        entries.sort(key=lambda e: (e["submission_id"], e["model_config_id"]))
        if cursor:
            entries = [
                e
                for e in entries
                if f"{e['submission_id']}:{e['model_config_id']}" > cursor
            ]
        page = entries[:limit]
        next_cursor = (
            f"{page[-1]['submission_id']}:{page[-1]['model_config_id']}"
            if len(entries) > limit
            else None
        )
        return {"entries": page, "next_cursor": next_cursor}

    def _queue_entry(store, sub_doc, ai_doc, human_doc):
        ai = ai_evaluation_from_doc(ai_doc)
        rubric = rubric_from_doc(
            store.get_document(
                storage.KIND_RUBRIC, rubric_doc_id(ai.rubric_id, ai.rubric_version)
            )
        )
        counts = {"TE": 0, "RAE": 0, "UNCATEGORIZED": 0}
        if human_doc is not None:
            human = human_evaluation_from_doc(human_doc)
            for cell in item_outcomes(ai, human, rubric):
                if cell.outcome is Outcome.MATCH:
                    continue
                dis_id = f"{cell.submission_id}:{cell.model_config_id}:{cell.item_id}"
                category = "UNCATEGORIZED"
                if store.has_document(storage.KIND_DISAGREEMENT, dis_id):
                    tag = store.get_document(storage.KIND_DISAGREEMENT, dis_id)
                    if tag["outcome"] == cell.outcome.value:
                        category = tag["category"]
                counts[category] += 1
        return {
            "submission_id": ai.submission_id,
            "question_id": sub_doc["question_id"],
            "model_config_id": ai.model_config_id,
            "ai_score": fraction_to_str(compute_score(rubric, ai.selections)),
            "has_override": human_doc is not None,
            "disagreements": counts,
            "quality_flags": list(ai.flags),
        }

    # -- case ----------------------------------------------------------------

    @app.get("/cases/{submission_id}", dependencies=[Depends(require_auth)])
    def get_case(submission_id: str, model_config: Optional[str] = None):
        sub_doc = store.get_document(storage.KIND_SUBMISSION, submission_id)
        instance_doc = store.get_document(
            storage.KIND_QUESTION_INSTANCE, sub_doc["instance_id"]
        )
        ai_docs = ai_evaluations_for(store, submission_id, model_config)
        if not ai_docs:
            raise UnknownIdError(
                f"no AI evaluation for submission {submission_id}"
                + (f" and model {model_config}" if model_config else "")
            )
        ai = ai_evaluation_from_doc(ai_docs[0])
        rubric = rubric_from_doc(
            store.get_document(
                storage.KIND_RUBRIC, rubric_doc_id(ai.rubric_id, ai.rubric_version)
            )
        )
        human_doc = latest_human_evaluation(store, submission_id)
        human = human_evaluation_from_doc(human_doc) if human_doc else None

        disagreements = []
        if human is not None:
            for cell in item_outcomes(ai, human, rubric):
                if cell.outcome is Outcome.MATCH:
                    continue
                dis_id = f"{cell.submission_id}:{cell.model_config_id}:{cell.item_id}"
                category, note = "UNCATEGORIZED", ""
                if store.has_document(storage.KIND_DISAGREEMENT, dis_id):
                    tag = store.get_document(storage.KIND_DISAGREEMENT, dis_id)
                    if tag["outcome"] == cell.outcome.value:
                        category, note = tag["category"], tag.get("note", "")
                disagreements.append(
                    {
                        "disagreement_id": dis_id,
                        "item_id": cell.item_id,
                        "outcome": cell.outcome.value,
                        "category": category,
                        "note": note,
                    }
                )

        final = sub_doc["images"][sub_doc["final_image_index"]]
        effective = orchestrator.effective_grade(submission_id, ai.model_config_id)
        return {
            "submission_id": submission_id,
            "question_id": sub_doc["question_id"],
            "statement": instance_doc["statement"],
            "image": {
                "blob_digest": final["blob_digest"],
                "media_type": final["media_type"],
                "url": f"/blobs/{final['blob_digest']}",
            },
            "model_config_id": ai.model_config_id,
            "transcription": ai.transcription,
            "quality_flags": list(ai.flags),
            "rubric": {
                "rubric_id": rubric.rubric_id,
                "version": rubric.version,
                "max_points": fraction_to_str(rubric.max_points),
                "items": [
                    {
                        "item_id": item.item_id,
                        "description": item.description,
                        "points": fraction_to_str(item.points),
                        "order": item.order,
                    }
                    for item in rubric.ordered_items()
                ],
            },
            "ai_selections": [
                {
                    "item_id": s.item_id,
                    "selected": s.selected,
                    "justification": s.justification,
                }
                for s in ai.selections
            ],
            "human_selections": None
            if human is None
            else [
                {
                    "item_id": s.item_id,
                    "selected": s.selected,
                    "justification": s.justification,
                }
                for s in human.selections
            ],
            "effective": {
                "source": effective.source.value,
                "score": fraction_to_str(effective.score),
            },
            "disagreements": disagreements,
        }

    # -- blobs ---------------------------------------------------------------

    @app.get("/blobs/{digest}", dependencies=[Depends(require_auth)])
    def get_blob(digest: str):
        data = store.get_blob(digest)
        return Response(
            content=data,
            media_type=_image_media_type(data),
            headers={"Cache-Control": "public, max-age=31536000, immutable"},
        )

    # -- writes ----------------------------------------------------------------

    @app.post("/cases/{submission_id}/override", dependencies=[Depends(require_auth)])
    def post_override(submission_id: str, payload: OverrideIn):
        submission = orchestrator.load_submission(submission_id)
        rubric = orchestrator.rubric_on_record(submission)
        if payload.rubric_version is not None and payload.rubric_version != rubric.version:
            raise ConflictError(
                f"rubric version conflict: on record v{rubric.version}, "
                f"request asserts v{payload.rubric_version}"
            )
        human = HumanEvaluation(
            submission_id=submission_id,
            grader_id=payload.grader_id,
            selections=tuple(
                ItemSelection(s.item_id, s.selected, s.justification)
                for s in payload.selections
            ),
            created_at=utcnow(),
        )
        grade = orchestrator.record_override(submission_id, human)
        return {
            "submission_id": submission_id,
            "source": grade.source.value,
            "score": fraction_to_str(grade.score),
            "has_override": grade.source is GradeSource.HUMAN,
        }

    @app.post("/disagreements/{dis_id}/tag", dependencies=[Depends(require_auth)])
    def post_tag(dis_id: str, payload: TagIn):
        tagged = categorize_disagreement(
            store,
            dis_id,
            DisagreementCategory(payload.category),
            note=payload.note,
            tagger=payload.tagger,
        )
        return {
            "disagreement_id": tagged.disagreement_id,
            "item_id": tagged.item_id,
            "outcome": tagged.outcome.value,
            "category": tagged.category.value,
            "note": tagged.note,
            "tagger": tagged.tagger,
        }

    # -- reports ---------------------------------------------------------------

    @app.get("/reports", dependencies=[Depends(require_auth)])
    def get_reports(
        group: str = "question,model",
        format: str = "json",
        model_config: Optional[str] = None,
    ):
        group_by = tuple(part.strip() for part in group.split(",") if part.strip())
        outcomes, disagreements = collect_outcomes(store, model_config_id=model_config)
        reports = compute_report(outcomes, disagreements, group_by=group_by)
        if format != "json":
            return PlainTextResponse(render_table(reports, format))
        rows = []
        for rep in reports:
            rows.append(
                {
                    "question_id": rep.question_id,
                    "model_config_id": rep.model_config_id,
                    "n_submissions": rep.n_submissions,
                    "items_per_submission": rep.items_per_submission,
                    "total_items": rep.total_items,
                    "match": rep.match,
                    "fp": rep.fp,
                    "fn": rep.fn,
                    "te": rep.te,
                    "rae": rep.rae,
                    "uncategorized": rep.uncategorized,
                    "ria_pct_exact": _pct(rep.ria_pct),
                    "fp_pct_exact": _pct(rep.fp_pct),
                    "fn_pct_exact": _pct(rep.fn_pct),
                    "rendered": report_row(rep),
                }
            )
        return {"rows": rows}

    return app
