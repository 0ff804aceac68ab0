"""Operator command line.

Subcommands: ingest, finalize-rubric, enqueue, run-jobs, override-import,
report, serve. Exit codes are stable: 0 success, 1 validation/usage failure,
2 I/O or provider failure. All writes go through a store lock file so two CLI
processes cannot write the same store concurrently.
"""
from __future__ import annotations

import argparse
import io
import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from . import store as storage
from .domain import (
    HumanEvaluation,
    ItemSelection,
    QuestionInstance,
    Rubric,
    RubricItem,
    Submission,
    SubmissionImage,
    instance_to_doc,
    rubric_doc_id,
    rubric_from_doc,
    rubric_to_doc,
    submission_to_doc,
    validate_rubric,
)
from .errors import (
    ConfigurationError,
    GatewayError,
    InkgradeError,
    StoreLockedError,
    UnknownIdError,
    ValidationError,
)
from .gateway import (
    CostRates,
    ModelConfig,
    Provider,
    RetryPolicy,
    build_gateway,
    model_config_from_doc,
    model_config_to_doc,
)
from .metrics import collect_outcomes, compute_report, render_table
from .orchestrator import Orchestrator
from .serialize import dt_from_str, dt_to_str, fraction_from
from .store import AuditKind, FileStore

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_IO = 2


@dataclass(frozen=True)
class CommandResult:
    exit_code: int
    stdout: str
    stderr: str


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; the documented taxonomy wants 1.
    def error(self, message):
        raise _UsageError(f"{message}\n{self.format_usage()}")


class StoreLock:
    """Advisory exclusive lock over a store directory (flock on store/.lock)."""

    def __init__(self, root: Path):
        self.path = Path(root) / ".lock"
        self._fh = None

    def __enter__(self):
        import fcntl

        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = open(self.path, "w")
        try:
            fcntl.flock(self._fh.fileno(), fcntl.LOCK_EX | fcntl.LOCK_NB)
        except OSError:
            self._fh.close()
            raise StoreLockedError(f"store {self.path.parent} is locked by another process")
        return self

    def __exit__(self, *exc):
        import fcntl

        fcntl.flock(self._fh.fileno(), fcntl.LOCK_UN)
        self._fh.close()
        return False


def _build_parser() -> _Parser:
    parser = _Parser(prog="inkgrade", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="load a dataset manifest into a store")
    p.add_argument("--store", required=True)
    p.add_argument("manifest")

    p = sub.add_parser("finalize-rubric", help="freeze a rubric version for grading")
    p.add_argument("--store", required=True)
    p.add_argument("rubric_id")
    p.add_argument("--version", type=int, default=None)

    p = sub.add_parser("enqueue", help="enqueue grading jobs for closed submissions")
    p.add_argument("--store", required=True)
    p.add_argument("--rubric", required=True, dest="rubric_id")
    p.add_argument("--rubric-version", type=int, default=None)
    p.add_argument("--model-config", required=True, dest="model_config_id")
    p.add_argument("--submissions", nargs="*", default=None,
                   help="submission ids (default: every stored submission)")

    p = sub.add_parser("run-jobs", help="execute pending grading jobs")
    p.add_argument("--store", required=True)
    p.add_argument("--provider", choices=["replay", "live"], default="live")
    p.add_argument("--fixtures", default=None)
    p.add_argument("--record", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--model-config", dest="model_config_id", default=None)
    p.add_argument("--retry-failed", action="store_true")

    p = sub.add_parser("override-import", help="bulk-import human grades")
    p.add_argument("--store", required=True)
    p.add_argument("overrides")

    p = sub.add_parser("report", help="render the agreement report table")
    p.add_argument("--store", required=True)
    p.add_argument("--group", default="question,model")
    p.add_argument("--format", default="text", choices=["text", "csv", "markdown"])
    p.add_argument("--model-config", dest="model_config_id", default=None)

    p = sub.add_parser("serve", help="start the review HTTP API")
    p.add_argument("--store", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8787)
    p.add_argument("--token", default=None)
    return parser


# ---------------------------------------------------------------------------
# Manifest ingest
# ---------------------------------------------------------------------------

def _manifest_instance(doc: dict) -> QuestionInstance:
    return QuestionInstance(
        instance_id=doc["instance_id"],
        question_id=doc["question_id"],
        variant_seed=str(doc.get("variant_seed", "")),
        statement=doc["statement"],
        reference_answers=tuple(
            (pair[0], pair[1]) if isinstance(pair, list) else (pair["label"], pair["value"])
            for pair in doc.get("reference_answers", [])
        ),
        grading_instructions=doc.get("grading_instructions"),
    )


def _manifest_rubric(doc: dict) -> Rubric:
    return Rubric(
        rubric_id=doc["rubric_id"],
        question_id=doc["question_id"],
        version=int(doc.get("version", 1)),
        finalized=bool(doc.get("finalized", False)),
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


def _manifest_model_config(doc: dict) -> ModelConfig:
    retry = doc.get("retry", {})
    cost = doc.get("cost", {})
    return ModelConfig(
        model_config_id=doc["model_config_id"],
        provider=Provider(doc["provider"]),
        model_name=doc["model_name"],
        max_output_tokens=int(doc.get("max_output_tokens", 4096)),
        request_timeout=float(doc.get("request_timeout", 120.0)),
        retry_policy=RetryPolicy(
            max_attempts=int(retry.get("max_attempts", 3)),
            backoff_base=float(retry.get("backoff_base", 0.5)),
        ),
        cost_rates=CostRates(
            per_input_token=fraction_from(cost.get("per_input_token", 0)),
            per_output_token=fraction_from(cost.get("per_output_token", 0)),
        ),
    )


def _selections(items: list[dict]) -> tuple[ItemSelection, ...]:
    return tuple(
        ItemSelection(
            item_id=s["item_id"],
            selected=bool(s["selected"]),
            justification=s.get("justification", ""),
        )
        for s in items
    )


def _import_human(store: FileStore, doc: dict) -> bool:
    """Record one imported human grade; returns False for an exact re-import
    (same grader, timestamp, and selections), keeping ingest re-runnable."""
    human = HumanEvaluation(
        submission_id=doc["submission_id"],
        grader_id=doc["grader_id"],
        selections=_selections(doc["selections"]),
        created_at=dt_from_str(doc["created_at"]),
    )
    prefix = f"{doc['submission_id']}:h"
    for existing_id in store.list_documents(storage.KIND_HUMAN_EVALUATION):
        if not existing_id.startswith(prefix):
            continue
        existing = store.get_document(storage.KIND_HUMAN_EVALUATION, existing_id)
        same = (
            existing["grader_id"] == human.grader_id
            and existing["created_at"] == dt_to_str(human.created_at)
            and _selections(existing["selections"]) == human.selections
        )
        if same:
            return False
    orch = Orchestrator(store, actor=doc.get("grader_id", "import"))
    orch.record_override(doc["submission_id"], human)
    return True


def cmd_ingest(args, out, err) -> int:
    manifest_path = Path(args.manifest)
    try:
        manifest = json.loads(manifest_path.read_text("utf-8"))
    except FileNotFoundError:
        raise UnknownIdError(f"manifest not found: {manifest_path}")
    except ValueError as exc:
        raise ValidationError(f"manifest is not valid JSON: {exc}")
    base = manifest_path.parent
    with StoreLock(Path(args.store)):
        store = FileStore(args.store)
        counts = {"instances": 0, "rubrics": 0, "model_configs": 0,
                  "submissions": 0, "human_evaluations": 0}
        for doc in manifest.get("question_instances", []):
            instance = _manifest_instance(doc)
            store.put_document(
                storage.KIND_QUESTION_INSTANCE,
                instance.instance_id,
                instance_to_doc(instance),
                event=AuditKind.DOCUMENT_INGESTED,
                actor="ingest",
            )
            counts["instances"] += 1
        for doc in manifest.get("rubrics", []):
            rubric = _manifest_rubric(doc)
            violations = validate_rubric(rubric)
            if violations:
                raise ValidationError(
                    f"rubric {rubric.rubric_id}: {'; '.join(violations)}"
                )
            store.put_document(
                storage.KIND_RUBRIC,
                rubric_doc_id(rubric.rubric_id, rubric.version),
                rubric_to_doc(rubric),
                event=AuditKind.DOCUMENT_INGESTED,
                actor="ingest",
            )
            counts["rubrics"] += 1
        for doc in manifest.get("model_configs", []):
            config = _manifest_model_config(doc)
            config.validate()
            store.put_document(
                storage.KIND_MODEL_CONFIG,
                config.model_config_id,
                model_config_to_doc(config),
                event=AuditKind.DOCUMENT_INGESTED,
                actor="ingest",
            )
            counts["model_configs"] += 1
        for doc in manifest.get("submissions", []):
            images = []
            for img in doc["images"]:
                data = (base / img["path"]).read_bytes()
                digest = store.put_blob(data)
                images.append(
                    SubmissionImage(
                        blob_digest=digest,
                        media_type=img["media_type"],
                        captured_at=dt_from_str(img["captured_at"]),
                    )
                )
            instance_doc = store.get_document(
                storage.KIND_QUESTION_INSTANCE, doc["instance_id"]
            )
            submission = Submission(
                submission_id=doc["submission_id"],
                instance_id=doc["instance_id"],
                question_id=instance_doc["question_id"],
                submitter=doc["submitter"],
                images=tuple(images),
                final_image_index=len(images) - 1,
                closed_at=dt_from_str(doc["closed_at"]) if doc.get("closed_at") else None,
            )
            store.put_document(
                storage.KIND_SUBMISSION,
                submission.submission_id,
                submission_to_doc(submission),
                event=AuditKind.SUBMISSION_INGESTED,
                actor="ingest",
            )
            counts["submissions"] += 1
        for doc in manifest.get("human_evaluations", []):
            if _import_human(store, doc):
                counts["human_evaluations"] += 1
    print(
        "ingested "
        + ", ".join(f"{v} {k}" for k, v in counts.items()),
        file=out,
    )
    return EXIT_OK


def _resolve_rubric(store: FileStore, rubric_id: str, version: Optional[int]) -> Rubric:
    if version is not None:
        return rubric_from_doc(
            store.get_document(storage.KIND_RUBRIC, rubric_doc_id(rubric_id, version))
        )
    candidates = [
        doc
        for _, doc in storage.iter_kind_documents(store, storage.KIND_RUBRIC)
        if doc["rubric_id"] == rubric_id
    ]
    if not candidates:
        raise UnknownIdError(f"no such rubric: {rubric_id}")
    candidates.sort(key=lambda d: int(d["version"]))
    return rubric_from_doc(candidates[-1])


def cmd_finalize_rubric(args, out, err) -> int:
    with StoreLock(Path(args.store)):
        store = FileStore(args.store, create=False)
        rubric = _resolve_rubric(store, args.rubric_id, args.version)
        if rubric.finalized:
            print(f"rubric {rubric.rubric_id} v{rubric.version} already finalized", file=out)
            return EXIT_OK
        violations = validate_rubric(rubric)
        if violations:
            raise ValidationError(f"cannot finalize: {'; '.join(violations)}")
        final = rubric.finalize()
        store.put_document(
            storage.KIND_RUBRIC,
            rubric_doc_id(final.rubric_id, final.version),
            rubric_to_doc(final),
            event=AuditKind.RUBRIC_FINALIZED,
            actor="cli",
        )
    print(f"finalized rubric {final.rubric_id} v{final.version}", file=out)
    return EXIT_OK


def cmd_enqueue(args, out, err) -> int:
    with StoreLock(Path(args.store)):
        store = FileStore(args.store, create=False)
        rubric = _resolve_rubric(store, args.rubric_id, args.rubric_version)
        if not rubric.finalized:
            raise ConfigurationError("rubric not finalized")
        config = model_config_from_doc(
            store.get_document(storage.KIND_MODEL_CONFIG, args.model_config_id)
        )
        if args.submissions:
            submission_ids = args.submissions
        else:
            # Default: every stored submission for the rubric's question.
            submission_ids = [
                doc_id
                for doc_id, doc in storage.iter_kind_documents(store, storage.KIND_SUBMISSION)
                if doc["question_id"] == rubric.question_id
            ]
        orch = Orchestrator(store, actor="cli")
        jobs = orch.enqueue_assessment(submission_ids, rubric, config)
    by_status: dict[str, int] = {}
    for job in jobs:
        by_status[job.status.value] = by_status.get(job.status.value, 0) + 1
    summary = ", ".join(f"{v} {k}" for k, v in sorted(by_status.items()))
    print(f"enqueued {len(jobs)} jobs ({summary})", file=out)
    return EXIT_OK


def cmd_run_jobs(args, out, err) -> int:
    with StoreLock(Path(args.store)):
        store = FileStore(args.store, create=False)
        fixtures = Path(args.fixtures) if args.fixtures else None
        if args.provider == "replay":
            if fixtures is None:
                raise ConfigurationError("--provider replay requires --fixtures")
            gateway = build_gateway(fixtures_dir=fixtures, replay_all=True)
        else:
            gateway = build_gateway(
                blob_loader=store.get_blob,
                fixtures_dir=fixtures,
                record=args.record,
            )
        orch = Orchestrator(store, gateway, actor="cli")
        if args.retry_failed:
            reset = orch.retry_failed(args.model_config_id)
            print(f"reset {reset} failed jobs to pending", file=err)
        summary = orch.run_pending(
            model_config_id=args.model_config_id, workers=args.workers
        )
    print(
        f"{summary.executed} jobs executed ({summary.done} done, {summary.failed} failed)",
        file=out,
    )
    return EXIT_IO if summary.failed else EXIT_OK


def cmd_override_import(args, out, err) -> int:
    path = Path(args.overrides)
    try:
        payload = json.loads(path.read_text("utf-8"))
    except FileNotFoundError:
        raise UnknownIdError(f"overrides file not found: {path}")
    except ValueError as exc:
        raise ValidationError(f"overrides file is not valid JSON: {exc}")
    entries = payload["human_evaluations"] if isinstance(payload, dict) else payload
    imported = 0
    with StoreLock(Path(args.store)):
        store = FileStore(args.store, create=False)
        for doc in entries:
            if _import_human(store, doc):
                imported += 1
    print(f"imported {imported} human evaluations ({len(entries)} in file)", file=out)
    return EXIT_OK


def cmd_report(args, out, err) -> int:
    store = FileStore(args.store, create=False)
    group_by = tuple(part.strip() for part in args.group.split(",") if part.strip())
    outcomes, disagreements = collect_outcomes(
        store, model_config_id=args.model_config_id
    )
    reports = compute_report(outcomes, disagreements, group_by=group_by)
    out.write(render_table(reports, args.format))
    return EXIT_OK


def cmd_serve(args, out, err) -> int:
    import uvicorn

    from .api import create_app

    token = args.token or os.environ.get("INKGRADE_REVIEW_TOKEN", "")
    if not token:
        raise ConfigurationError("serve requires --token or INKGRADE_REVIEW_TOKEN")
    with StoreLock(Path(args.store)):
        app = create_app(Path(args.store), token=token)
        print(f"serving review API on {args.host}:{args.port}", file=out)
        out.flush()
        uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return EXIT_OK


_HANDLERS = {
    "ingest": cmd_ingest,
    "finalize-rubric": cmd_finalize_rubric,
    "enqueue": cmd_enqueue,
    "run-jobs": cmd_run_jobs,
    "override-import": cmd_override_import,
    "report": cmd_report,
    "serve": cmd_serve,
}


def run_command(argv, *, out=None, err=None) -> CommandResult:
    """Execute one CLI invocation; streams are captured unless provided."""
    out = out if out is not None else io.StringIO()
    err = err if err is not None else io.StringIO()
    try:
        args = _build_parser().parse_args(argv)
        code = _HANDLERS[args.command](args, out, err)
    except _UsageError as exc:
        print(str(exc), file=err)
        code = EXIT_VALIDATION
    except (GatewayError, StoreLockedError) as exc:
        print(f"error[{exc.code}]: {exc}", file=err)
        code = EXIT_IO
    except InkgradeError as exc:
        print(f"error[{exc.code}]: {exc}", file=err)
        code = EXIT_VALIDATION
    except OSError as exc:
        print(f"error[io]: {exc}", file=err)
        code = EXIT_IO

    def _payload(stream) -> str:
        return stream.getvalue() if isinstance(stream, io.StringIO) else ""

    return CommandResult(exit_code=code, stdout=_payload(out), stderr=_payload(err))


def main(argv=None) -> int:
    result = run_command(sys.argv[1:] if argv is None else argv,
                         out=sys.stdout, err=sys.stderr)
    return result.exit_code


if __name__ == "__main__":
    sys.exit(main())
