from __future__ import annotations

import json
from datetime import datetime, timedelta, timezone
from fractions import Fraction

import pytest

from inkgrade.domain import (
    HumanEvaluation,
    ItemSelection,
    QuestionInstance,
    Rubric,
    RubricItem,
    Submission,
    SubmissionImage,
)
from inkgrade.gateway import (
    Gateway,
    ModelConfig,
    Provider,
    ReplayProvider,
    RetryPolicy,
    write_fixture,
)
from inkgrade.domain import TokenUsage
from inkgrade.orchestrator import Orchestrator
from inkgrade.prompt import assemble_prompt
from inkgrade.store import FileStore

T0 = datetime(2026, 1, 15, 12, 0, 0, tzinfo=timezone.utc)


def make_rubric(
    n_items: int = 3,
    *,
    rubric_id: str = "r1",
    question_id: str = "q1",
    points=None,
    max_points=None,
    finalized: bool = True,
    version: int = 1,
) -> Rubric:
    pts = [Fraction(p) for p in points] if points else [Fraction(1)] * n_items
    items = tuple(
        RubricItem(
            item_id=f"i{k + 1}",
            description=f"step {k + 1} is carried out correctly",
            points=pts[k],
            order=k,
        )
        for k in range(n_items)
    )
    return Rubric(
        rubric_id=rubric_id,
        question_id=question_id,
        items=items,
        max_points=Fraction(max_points) if max_points is not None else sum(pts, Fraction(0)),
        finalized=finalized,
        version=version,
    )


def make_instance(
    *,
    instance_id: str = "inst1",
    question_id: str = "q1",
    statement: str = "Compute the residual of the iterate x1 for the system Ax = b.",
    answers=(("residual", "[0.2, -0.1]"),),
    grading_instructions=None,
) -> QuestionInstance:
    return QuestionInstance(
        instance_id=instance_id,
        question_id=question_id,
        variant_seed=f"seed-{instance_id}",
        statement=statement,
        reference_answers=tuple(answers),
        grading_instructions=grading_instructions,
    )


def make_submission(
    *,
    submission_id: str = "s1",
    instance_id: str = "inst1",
    question_id: str = "q1",
    digests=("d0",),
    closed: bool = True,
) -> Submission:
    images = tuple(
        SubmissionImage(
            blob_digest=d,
            media_type="image/png",
            captured_at=T0 + timedelta(minutes=k),
        )
        for k, d in enumerate(digests)
    )
    return Submission(
        submission_id=submission_id,
        instance_id=instance_id,
        question_id=question_id,
        submitter="anon-7f3a",
        images=images,
        final_image_index=len(images) - 1,
        closed_at=T0 + timedelta(hours=1) if closed else None,
    )


def wire_body(rubric: Rubric, *, selected=None, transcription="x = [1, 2]", prose=""):
    """A response body in the shape the prompt contract demands."""
    flags = selected or {}
    payload = {
        "transcription": transcription,
        "items": [
            {
                "item_id": item.item_id,
                "selected": bool(flags.get(item.item_id, True)),
                "justification": f"work shows {item.item_id}",
            }
            for item in rubric.ordered_items()
        ],
    }
    return prose + json.dumps(payload)


def make_selections(rubric: Rubric, selected=None) -> tuple[ItemSelection, ...]:
    flags = selected or {}
    return tuple(
        ItemSelection(item.item_id, bool(flags.get(item.item_id, True)), "checked")
        for item in rubric.ordered_items()
    )


def replay_config(model_config_id: str = "replay-vision-1") -> ModelConfig:
    return ModelConfig(
        model_config_id=model_config_id,
        provider=Provider.REPLAY,
        model_name="replay-vision",
        retry_policy=RetryPolicy(max_attempts=2, backoff_base=0.0),
    )


class PipelineCase:
    """A store taken through ingest -> enqueue -> run-jobs (replay) with one
    graded submission; tests layer overrides and tags on top."""

    def __init__(self, root, *, ai_selected=None, n_submissions=1):
        from inkgrade import store as storage
        from inkgrade.domain import instance_to_doc, rubric_doc_id, rubric_to_doc, submission_to_doc
        from inkgrade.gateway import model_config_to_doc
        from inkgrade.store import AuditKind

        self.store = FileStore(root / "store")
        self.fixtures = root / "fixtures"
        self.rubric = make_rubric(3)
        self.config = replay_config()
        self.instances = []
        self.submissions = []

        self.store.put_document(
            storage.KIND_RUBRIC,
            rubric_doc_id(self.rubric.rubric_id, self.rubric.version),
            rubric_to_doc(self.rubric),
            event=AuditKind.DOCUMENT_INGESTED,
        )
        self.store.put_document(
            storage.KIND_MODEL_CONFIG,
            self.config.model_config_id,
            model_config_to_doc(self.config),
            event=AuditKind.DOCUMENT_INGESTED,
        )
        for k in range(n_submissions):
            instance = make_instance(
                instance_id=f"inst{k + 1}",
                statement=f"Variant {k + 1}: compute the residual of x1 for Ax = b.",
            )
            digest = self.store.put_blob(f"png-bytes-{k + 1}".encode())
            submission = make_submission(
                submission_id=f"s{k + 1}",
                instance_id=instance.instance_id,
                digests=(digest,),
            )
            self.store.put_document(
                storage.KIND_QUESTION_INSTANCE,
                instance.instance_id,
                instance_to_doc(instance),
                event=AuditKind.DOCUMENT_INGESTED,
            )
            self.store.put_document(
                storage.KIND_SUBMISSION,
                submission.submission_id,
                submission_to_doc(submission),
                event=AuditKind.SUBMISSION_INGESTED,
            )
            bundle = assemble_prompt(instance, self.rubric, submission)
            write_fixture(
                self.fixtures,
                bundle.fingerprint,
                wire_body(self.rubric, selected=ai_selected),
                TokenUsage(1200, 300),
            )
            self.instances.append(instance)
            self.submissions.append(submission)

        self.gateway = Gateway({Provider.REPLAY: ReplayProvider(self.fixtures)})
        self.orchestrator = Orchestrator(self.store, self.gateway)
        self.jobs = self.orchestrator.enqueue_assessment(
            [s.submission_id for s in self.submissions], self.rubric, self.config
        )

    def run_all(self):
        return [self.orchestrator.run_job(job.job_id) for job in self.jobs]

    def override(self, submission_id: str, selected=None, grader="grader-1", at=None):
        human = HumanEvaluation(
            submission_id=submission_id,
            grader_id=grader,
            selections=make_selections(self.rubric, selected),
            created_at=at or T0 + timedelta(hours=2),
        )
        return self.orchestrator.record_override(submission_id, human)


@pytest.fixture
def pipeline_case(tmp_path) -> PipelineCase:
    case = PipelineCase(tmp_path)
    case.run_all()
    return case


def write_replay_fixtures(store_root, fixtures_dir, bodies_by_submission):
    """Assemble the real bundle for each stored submission and record a
    fixture answering it with the given body."""
    from inkgrade import store as storage
    from inkgrade.domain import instance_from_doc, rubric_from_doc, submission_from_doc

    store = FileStore(store_root, create=False)
    rubric_docs = [
        store.get_document(storage.KIND_RUBRIC, doc_id)
        for doc_id in store.list_documents(storage.KIND_RUBRIC)
    ]
    for submission_id, body in bodies_by_submission.items():
        submission = submission_from_doc(
            store.get_document(storage.KIND_SUBMISSION, submission_id)
        )
        instance = instance_from_doc(
            store.get_document(storage.KIND_QUESTION_INSTANCE, submission.instance_id)
        )
        rubric_doc = max(
            (d for d in rubric_docs if d["question_id"] == instance.question_id),
            key=lambda d: (bool(d["finalized"]), int(d["version"])),
        )
        rubric = rubric_from_doc(rubric_doc)
        bundle = assemble_prompt(instance, rubric.finalize(), submission)
        write_fixture(fixtures_dir, bundle.fingerprint, body, TokenUsage(900, 250))
