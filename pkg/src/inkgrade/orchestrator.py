"""Asynchronous grading jobs and the human-override write path.

Grading runs only after a submission is closed and the rubric is finalized.
Job identity is deterministic over (submission, rubric version, model config),
which makes enqueueing idempotent and guarantees at most one non-FAILED job
per triple. A DONE job always has its evaluation persisted first, so a crash
between the two writes recovers cleanly on the next run.

Overrides append; they never touch the stored AI evaluation, which later
agreement metrics must see exactly as the model produced it.
"""
from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from datetime import datetime
from enum import Enum
from typing import Optional, Sequence

from . import store as storage
from .domain import (
    EffectiveGrade,
    HumanEvaluation,
    Rubric,
    Submission,
    ai_evaluation_from_doc,
    ai_evaluation_to_doc,
    human_evaluation_from_doc,
    human_evaluation_to_doc,
    instance_from_doc,
    resolve_effective_grade,
    rubric_doc_id,
    rubric_from_doc,
    rubric_to_doc,
    submission_from_doc,
    validate_selections,
)
from .errors import ConfigurationError, InkgradeError, UnknownIdError, ValidationError
from .gateway import Gateway, ModelConfig, model_config_from_doc, model_config_to_doc
from .metrics import latest_human_evaluation
from .parsing import FLAG_REPAIRED, parse_evaluation, repair_pass
from .prompt import assemble_prompt
from .serialize import dt_from_str, dt_to_str, sha256_hex, utcnow
from .store import AuditKind, FileStore

log = logging.getLogger(__name__)


class JobStatus(str, Enum):
    PENDING = "PENDING"
    RUNNING = "RUNNING"
    DONE = "DONE"
    FAILED = "FAILED"
    SKIPPED = "SKIPPED"


@dataclass(frozen=True)
class GradingJob:
    job_id: str
    submission_id: str
    rubric_id: str
    rubric_version: int
    model_config_id: str
    status: JobStatus
    attempts: int = 0
    last_error: Optional[str] = None
    created_at: Optional[datetime] = None
    finished_at: Optional[datetime] = None

    @property
    def evaluation_id(self) -> str:
        return self.job_id


def job_id_for(
    submission_id: str, rubric_id: str, rubric_version: int, model_config_id: str
) -> str:
    key = f"{submission_id}|{rubric_id}|{rubric_version}|{model_config_id}"
    return "job-" + sha256_hex(key.encode("utf-8"))[:16]


def job_to_doc(job: GradingJob) -> dict:
    return {
        "job_id": job.job_id,
        "submission_id": job.submission_id,
        "rubric_id": job.rubric_id,
        "rubric_version": job.rubric_version,
        "model_config_id": job.model_config_id,
        "status": job.status.value,
        "attempts": job.attempts,
        "last_error": job.last_error,
        "created_at": dt_to_str(job.created_at) if job.created_at else None,
        "finished_at": dt_to_str(job.finished_at) if job.finished_at else None,
    }


def job_from_doc(doc: dict) -> GradingJob:
    return GradingJob(
        job_id=doc["job_id"],
        submission_id=doc["submission_id"],
        rubric_id=doc["rubric_id"],
        rubric_version=int(doc["rubric_version"]),
        model_config_id=doc["model_config_id"],
        status=JobStatus(doc["status"]),
        attempts=int(doc.get("attempts", 0)),
        last_error=doc.get("last_error"),
        created_at=dt_from_str(doc["created_at"]) if doc.get("created_at") else None,
        finished_at=dt_from_str(doc["finished_at"]) if doc.get("finished_at") else None,
    )


@dataclass(frozen=True)
class RunSummary:
    executed: int
    done: int
    failed: int


class Orchestrator:
    def __init__(
        self,
        store: FileStore,
        gateway: Optional[Gateway] = None,
        *,
        actor: str = "system",
        now=utcnow,
        max_repair_invocations: int = 1,
    ):
        self.store = store
        self.gateway = gateway
        self.actor = actor
        self.now = now
        self.max_repair_invocations = max_repair_invocations
        self._jobs_lock = threading.Lock()
        self._override_lock = threading.Lock()

    # -- loading helpers ------------------------------------------------------

    def load_submission(self, submission_id: str) -> Submission:
        return submission_from_doc(
            self.store.get_document(storage.KIND_SUBMISSION, submission_id)
        )

    def load_rubric(self, rubric_id: str, version: int) -> Rubric:
        return rubric_from_doc(
            self.store.get_document(storage.KIND_RUBRIC, rubric_doc_id(rubric_id, version))
        )

    def load_config(self, model_config_id: str) -> ModelConfig:
        return model_config_from_doc(
            self.store.get_document(storage.KIND_MODEL_CONFIG, model_config_id)
        )

    def load_job(self, job_id: str) -> GradingJob:
        return job_from_doc(self.store.get_document(storage.KIND_JOB, job_id))

    def _put_job(self, job: GradingJob, event: Optional[AuditKind] = None) -> None:
        self.store.put_document(
            storage.KIND_JOB, job.job_id, job_to_doc(job), event=event, actor=self.actor
        )

    # -- enqueue ---------------------------------------------------------------

    def enqueue_assessment(
        self,
        submission_ids: Sequence[str],
        rubric: Rubric,
        config: ModelConfig,
    ) -> list[GradingJob]:
        """Create PENDING jobs for closed submissions; idempotent.

        Unclosed submissions get a SKIPPED job with a reason; re-enqueueing
        after they close promotes the same job to PENDING. An unfinalized
        rubric enqueues nothing.
        """
        if not rubric.finalized:
            raise ConfigurationError(
                f"rubric {rubric.rubric_id} v{rubric.version} not finalized; nothing enqueued"
            )
        # Fail before any write if a submission id is unknown or belongs to a
        # different question than the rubric grades.
        submissions = {sid: self.load_submission(sid) for sid in submission_ids}
        for sid, submission in submissions.items():
            if submission.question_id != rubric.question_id:
                raise ValidationError(
                    f"submission {sid} answers {submission.question_id}, "
                    f"not {rubric.question_id}; nothing enqueued"
                )
        self.store.put_document(
            storage.KIND_RUBRIC,
            rubric_doc_id(rubric.rubric_id, rubric.version),
            rubric_to_doc(rubric),
            event=AuditKind.DOCUMENT_INGESTED,
            actor=self.actor,
        )
        self.store.put_document(
            storage.KIND_MODEL_CONFIG,
            config.model_config_id,
            model_config_to_doc(config),
            event=AuditKind.DOCUMENT_INGESTED,
            actor=self.actor,
        )
        jobs = []
        with self._jobs_lock:
            for sid in submission_ids:
                submission = submissions[sid]
                jid = job_id_for(
                    sid, rubric.rubric_id, rubric.version, config.model_config_id
                )
                if self.store.has_document(storage.KIND_JOB, jid):
                    job = self.load_job(jid)
                    if job.status is JobStatus.SKIPPED and submission.closed:
                        job = replace(
                            job, status=JobStatus.PENDING, last_error=None
                        )
                        self._put_job(job, event=AuditKind.JOB_ENQUEUED)
                    jobs.append(job)
                    continue
                if submission.closed:
                    status, reason = JobStatus.PENDING, None
                else:
                    status, reason = JobStatus.SKIPPED, "not closed"
                job = GradingJob(
                    job_id=jid,
                    submission_id=sid,
                    rubric_id=rubric.rubric_id,
                    rubric_version=rubric.version,
                    model_config_id=config.model_config_id,
                    status=status,
                    last_error=reason,
                    created_at=self.now(),
                )
                self._put_job(job, event=AuditKind.JOB_ENQUEUED)
                jobs.append(job)
        return jobs

    # -- execution ---------------------------------------------------------------

    def run_job(self, job_id: str) -> GradingJob:
        """Execute one PENDING job to DONE or FAILED.

        Non-PENDING jobs are returned unchanged (re-running DONE is a no-op).
        The evaluation is persisted before the DONE transition, and a FAILED
        job never leaves a partial evaluation behind.
        """
        if self.gateway is None:
            raise ConfigurationError("orchestrator has no gateway; cannot run jobs")
        with self._jobs_lock:
            job = self.load_job(job_id)
            if job.status is not JobStatus.PENDING:
                return job
            job = replace(job, status=JobStatus.RUNNING)
            self._put_job(job)

        if self.store.has_document(storage.KIND_AI_EVALUATION, job.evaluation_id):
            # Crash recovery: evaluation landed but the DONE transition did not.
            job = replace(job, status=JobStatus.DONE, finished_at=self.now())
            self._put_job(job, event=AuditKind.JOB_DONE)
            return job

        try:
            submission = self.load_submission(job.submission_id)
            instance = instance_from_doc(
                self.store.get_document(
                    storage.KIND_QUESTION_INSTANCE, submission.instance_id
                )
            )
            rubric = self.load_rubric(job.rubric_id, job.rubric_version)
            config = self.load_config(job.model_config_id)
            bundle = assemble_prompt(instance, rubric, submission)

            outcome = None
            for _ in range(1 + self.max_repair_invocations):
                raw = self.gateway.invoke(bundle, config)
                job = replace(job, attempts=job.attempts + 1)
                outcome = parse_evaluation(
                    raw, rubric, job.submission_id, job.model_config_id, now=self.now
                )
                if outcome.blocked:
                    outcome = repair_pass(
                        raw, rubric, job.submission_id, job.model_config_id, now=self.now
                    )
                if not outcome.blocked:
                    break
            assert outcome is not None
            if outcome.blocked:
                detail = "; ".join(f"{d.kind.value}:{d.detail}" for d in outcome.defects)
                return self._fail(job, f"parse-failed: {detail}")

            evaluation = outcome.evaluation
            assert evaluation is not None
            if outcome.repaired:
                evaluation = replace(
                    evaluation, flags=evaluation.flags + (FLAG_REPAIRED,)
                )
            self.store.put_document(
                storage.KIND_AI_EVALUATION,
                job.evaluation_id,
                ai_evaluation_to_doc(evaluation),
                actor=self.actor,
            )
            job = replace(job, status=JobStatus.DONE, finished_at=self.now())
            self._put_job(job, event=AuditKind.JOB_DONE)
            return job
        except InkgradeError as exc:
            return self._fail(job, f"{exc.code}: {exc}")

    def _fail(self, job: GradingJob, reason: str) -> GradingJob:
        log.warning("job %s failed: %s", job.job_id, reason)
        job = replace(
            job, status=JobStatus.FAILED, last_error=reason, finished_at=self.now()
        )
        self._put_job(job, event=AuditKind.JOB_FAILED)
        return job

    def pending_jobs(self, model_config_id: Optional[str] = None) -> list[GradingJob]:
        jobs = []
        for _, doc in storage.iter_kind_documents(self.store, storage.KIND_JOB):
            job = job_from_doc(doc)
            if job.status is not JobStatus.PENDING:
                continue
            if model_config_id and job.model_config_id != model_config_id:
                continue
            jobs.append(job)
        return jobs

    def retry_failed(self, model_config_id: Optional[str] = None) -> int:
        """Operator-commanded reset of FAILED jobs back to PENDING."""
        count = 0
        for _, doc in storage.iter_kind_documents(self.store, storage.KIND_JOB):
            job = job_from_doc(doc)
            if job.status is not JobStatus.FAILED:
                continue
            if model_config_id and job.model_config_id != model_config_id:
                continue
            self._put_job(
                replace(job, status=JobStatus.PENDING, finished_at=None),
                event=AuditKind.JOB_ENQUEUED,
            )
            count += 1
        return count

    def run_pending(
        self, *, model_config_id: Optional[str] = None, workers: int = 1
    ) -> RunSummary:
        jobs = self.pending_jobs(model_config_id)
        if workers <= 1 or len(jobs) <= 1:
            results = [self.run_job(job.job_id) for job in jobs]
        else:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(lambda j: self.run_job(j.job_id), jobs))
        done = sum(1 for j in results if j.status is JobStatus.DONE)
        failed = sum(1 for j in results if j.status is JobStatus.FAILED)
        return RunSummary(executed=len(results), done=done, failed=failed)

    # -- overrides and effective grades ---------------------------------------

    def rubric_on_record(self, submission: Submission) -> Rubric:
        """The rubric version overrides validate against: the one the AI
        graded with if an evaluation exists, else the newest (finalized
        preferred) rubric for the submission's question."""
        from .metrics import ai_evaluations_for

        evals = ai_evaluations_for(self.store, submission.submission_id)
        if evals:
            newest = max(evals, key=lambda d: (d["rubric_version"], d["model_config_id"]))
            return self.load_rubric(newest["rubric_id"], int(newest["rubric_version"]))
        candidates = []
        for _, doc in storage.iter_kind_documents(self.store, storage.KIND_RUBRIC):
            if doc["question_id"] == submission.question_id:
                candidates.append(doc)
        if not candidates:
            raise ConfigurationError(
                f"no rubric on record for question {submission.question_id}"
            )
        candidates.sort(key=lambda d: (bool(d["finalized"]), int(d["version"])))
        return rubric_from_doc(candidates[-1])

    def record_override(
        self, submission_id: str, human: HumanEvaluation
    ) -> EffectiveGrade:
        """Persist a human evaluation; the effective grade becomes
        HUMAN-sourced. The prior AI evaluation is retained untouched."""
        submission = self.load_submission(submission_id)
        rubric = self.rubric_on_record(submission)
        violations = validate_selections(rubric, human.selections)
        if violations:
            raise ValidationError(
                f"override rejected: {'; '.join(violations)}"
            )
        with self._override_lock:
            seq = (
                len(
                    [
                        d
                        for d in self.store.list_documents(storage.KIND_HUMAN_EVALUATION)
                        if d.startswith(f"{submission_id}:h")
                    ]
                )
                + 1
            )
            doc_id = f"{submission_id}:h{seq:05d}"
            self.store.put_document(
                storage.KIND_HUMAN_EVALUATION,
                doc_id,
                human_evaluation_to_doc(human, rubric.rubric_id, rubric.version),
                event=AuditKind.OVERRIDE_RECORDED,
                actor=human.grader_id,
            )
        return self.effective_grade(submission_id)

    def effective_grade(
        self, submission_id: str, model_config_id: Optional[str] = None
    ) -> EffectiveGrade:
        from .metrics import ai_evaluations_for

        human_doc = latest_human_evaluation(self.store, submission_id)
        if human_doc is not None:
            rubric = self.load_rubric(
                human_doc["rubric_id"], int(human_doc["rubric_version"])
            )
            return resolve_effective_grade(
                None, human_evaluation_from_doc(human_doc), rubric
            )
        evals = ai_evaluations_for(self.store, submission_id, model_config_id)
        if not evals:
            raise UnknownIdError(f"no evaluations for submission {submission_id}")
        ai = ai_evaluation_from_doc(evals[0])
        rubric = self.load_rubric(ai.rubric_id, ai.rubric_version)
        return resolve_effective_grade(ai, None, rubric)
