"""File-backed evidence store: documents, image blobs, and an audit log.

Layout under the store root:

    <kind>/<id>      canonical JSON document, committed by atomic rename
    blobs/<digest>   raw image bytes, content addressed (sha256)
    audit.log        one JSON audit event per line, append-only

Documents of immutable kinds (AI and human evaluations, finalized rubrics)
reject overwrites with different content; re-putting identical bytes is a
no-op, which makes ingest and job recovery idempotent. Every write lands via
write-temp-then-rename, so a reader (or a reopened store after a crash) sees
either the whole document or nothing. Readers never block writers.
"""
from __future__ import annotations

import json
import os
import re
import threading
from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional

from .errors import ImmutabilityError, UnknownIdError, ValidationError
from .serialize import (
    canonical_json_bytes,
    check_doc_id,
    dt_from_str,
    dt_to_str,
    sha256_hex,
    utcnow,
)

# Indirection point so tests can simulate a crash mid-commit.
_replace = os.replace

_DIGEST_RE = re.compile(r"^[0-9a-f]{64}$")


class AuditKind(str, Enum):
    SUBMISSION_INGESTED = "SUBMISSION_INGESTED"
    JOB_ENQUEUED = "JOB_ENQUEUED"
    JOB_DONE = "JOB_DONE"
    JOB_FAILED = "JOB_FAILED"
    OVERRIDE_RECORDED = "OVERRIDE_RECORDED"
    DISAGREEMENT_TAGGED = "DISAGREEMENT_TAGGED"
    RUBRIC_FINALIZED = "RUBRIC_FINALIZED"
    # Provisioning documents (instances, draft rubrics, model configs) so that
    # every mutation still leaves an audit trace.
    DOCUMENT_INGESTED = "DOCUMENT_INGESTED"


@dataclass(frozen=True)
class AuditEvent:
    sequence: int
    at: datetime
    actor: str
    kind: AuditKind
    payload_digest: str

    def to_line(self) -> str:
        return json.dumps(
            {
                "sequence": self.sequence,
                "at": dt_to_str(self.at),
                "actor": self.actor,
                "kind": self.kind.value,
                "payload_digest": self.payload_digest,
            },
            sort_keys=True,
        )

    @staticmethod
    def from_line(line: str) -> "AuditEvent":
        raw = json.loads(line)
        return AuditEvent(
            sequence=int(raw["sequence"]),
            at=dt_from_str(raw["at"]),
            actor=raw["actor"],
            kind=AuditKind(raw["kind"]),
            payload_digest=raw["payload_digest"],
        )


KIND_QUESTION_INSTANCE = "question_instance"
KIND_RUBRIC = "rubric"
KIND_MODEL_CONFIG = "model_config"
KIND_SUBMISSION = "submission"
KIND_AI_EVALUATION = "ai_evaluation"
KIND_HUMAN_EVALUATION = "human_evaluation"
KIND_JOB = "job"
KIND_DISAGREEMENT = "disagreement"

ALL_KINDS = (
    KIND_QUESTION_INSTANCE,
    KIND_RUBRIC,
    KIND_MODEL_CONFIG,
    KIND_SUBMISSION,
    KIND_AI_EVALUATION,
    KIND_HUMAN_EVALUATION,
    KIND_JOB,
    KIND_DISAGREEMENT,
)

# Evaluations are evidence: once written they never change. Rubric documents
# flip to immutable the moment their stored body says finalized=true.
_ALWAYS_IMMUTABLE = {KIND_AI_EVALUATION, KIND_HUMAN_EVALUATION}

_TMP_SUFFIX = ".tmp"


class FileStore:
    """Single-process store: one writer lock, lock-free readers."""

    def __init__(
        self,
        root: Path | str,
        *,
        create: bool = True,
        failpoint: Optional[Callable[[str, Path], None]] = None,
    ):
        self.root = Path(root)
        self._failpoint = failpoint
        self._write_lock = threading.RLock()
        self._log_lock = threading.Lock()
        if create:
            self.root.mkdir(parents=True, exist_ok=True)
            (self.root / "blobs").mkdir(exist_ok=True)
        elif not self.root.is_dir():
            raise UnknownIdError(f"store not found at {self.root}")
        self._next_sequence = self._scan_last_sequence() + 1

    # -- paths ---------------------------------------------------------------

    def _doc_path(self, kind: str, doc_id: str) -> Path:
        if kind not in ALL_KINDS:
            raise ValidationError(f"unknown document kind: {kind}")
        check_doc_id(doc_id)
        return self.root / kind / doc_id

    @property
    def audit_path(self) -> Path:
        return self.root / "audit.log"

    def _fp(self, label: str, path: Path) -> None:
        if self._failpoint is not None:
            self._failpoint(label, path)

    # -- atomic write --------------------------------------------------------

    def _atomic_write(self, path: Path, data: bytes) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + _TMP_SUFFIX)
        self._fp("begin", path)
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        self._fp("staged", path)
        _replace(tmp, path)
        self._fp("committed", path)

    # -- documents -----------------------------------------------------------

    def put_document(
        self,
        kind: str,
        doc_id: str,
        body: dict,
        *,
        event: Optional[AuditKind] = None,
        actor: str = "system",
    ) -> str:
        """Write a document; returns its content digest.

        Immutable kinds reject a different body under an existing id. Putting
        byte-identical content is a silent no-op (no event emitted).
        """
        path = self._doc_path(kind, doc_id)
        data = canonical_json_bytes(body)
        digest = sha256_hex(data)
        with self._write_lock:
            if path.exists():
                existing = path.read_bytes()
                if existing == data:
                    return digest
                if kind in _ALWAYS_IMMUTABLE:
                    raise ImmutabilityError(
                        f"{kind}/{doc_id} is immutable and differs from the new body"
                    )
                if kind == KIND_RUBRIC:
                    try:
                        if json.loads(existing.decode("utf-8")).get("finalized"):
                            raise ImmutabilityError(
                                f"rubric/{doc_id} is finalized and immutable"
                            )
                    except (ValueError, UnicodeDecodeError):
                        pass
            self._atomic_write(path, data)
            if event is not None:
                self.append_event(event, actor=actor, payload_digest=digest)
        return digest

    def get_document(self, kind: str, doc_id: str) -> dict:
        return json.loads(self.get_document_bytes(kind, doc_id).decode("utf-8"))

    def get_document_bytes(self, kind: str, doc_id: str) -> bytes:
        path = self._doc_path(kind, doc_id)
        try:
            return path.read_bytes()
        except FileNotFoundError:
            raise UnknownIdError(f"no such document: {kind}/{doc_id}") from None

    def has_document(self, kind: str, doc_id: str) -> bool:
        return self._doc_path(kind, doc_id).exists()

    def list_documents(self, kind: str) -> list[str]:
        if kind not in ALL_KINDS:
            raise ValidationError(f"unknown document kind: {kind}")
        kind_dir = self.root / kind
        if not kind_dir.is_dir():
            return []
        return sorted(
            p.name for p in kind_dir.iterdir()
            if p.is_file() and not p.name.endswith(_TMP_SUFFIX)
        )

    # -- blobs ---------------------------------------------------------------

    def put_blob(self, data: bytes) -> str:
        digest = sha256_hex(data)
        path = self.root / "blobs" / digest
        with self._write_lock:
            if not path.exists():
                self._atomic_write(path, data)
        return digest

    @staticmethod
    def _valid_digest(digest: str) -> bool:
        return bool(_DIGEST_RE.match(digest))

    def get_blob(self, digest: str) -> bytes:
        path = self.root / "blobs" / digest
        if not self._valid_digest(digest) or not path.exists():
            raise UnknownIdError(f"no such blob: {digest}")
        return path.read_bytes()

    def has_blob(self, digest: str) -> bool:
        return self._valid_digest(digest) and (self.root / "blobs" / digest).exists()

    # -- audit log -----------------------------------------------------------

    def append_event(
        self,
        kind: AuditKind,
        *,
        actor: str = "system",
        payload_digest: str = "",
        at: Optional[datetime] = None,
    ) -> AuditEvent:
        with self._log_lock:
            event = AuditEvent(
                sequence=self._next_sequence,
                at=at or utcnow(),
                actor=actor,
                kind=kind,
                payload_digest=payload_digest,
            )
            line = event.to_line() + "\n"
            self._fp("audit-begin", self.audit_path)
            with open(self.audit_path, "a", encoding="utf-8") as fh:
                fh.write(line)
                fh.flush()
                os.fsync(fh.fileno())
            self._fp("audit-committed", self.audit_path)
            self._next_sequence += 1
            return event

    def read_events(self) -> list[AuditEvent]:
        """All complete events, in sequence order.

        A trailing line without a newline terminator is an interrupted append
        and is ignored.
        """
        if not self.audit_path.exists():
            return []
        raw = self.audit_path.read_bytes().decode("utf-8")
        complete, _, partial = raw.rpartition("\n")
        del partial  # unterminated tail: never a committed event
        events = []
        for line in complete.splitlines():
            if line.strip():
                events.append(AuditEvent.from_line(line))
        return events

    def _scan_last_sequence(self) -> int:
        events = self.read_events()
        return events[-1].sequence if events else 0


def iter_kind_documents(store: FileStore, kind: str) -> Iterable[tuple[str, dict]]:
    for doc_id in store.list_documents(kind):
        yield doc_id, store.get_document(kind, doc_id)
