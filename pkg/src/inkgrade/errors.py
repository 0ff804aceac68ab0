"""Exception types shared across the engine.

Every error carries a stable, machine-readable ``code`` so callers (CLI exit
mapping, HTTP handlers, job runner) can branch without string matching.
"""
from __future__ import annotations


class InkgradeError(Exception):
    code = "error"

    def __init__(self, message: str, *, detail: object = None):
        super().__init__(message)
        self.detail = detail


class ValidationError(InkgradeError):
    """Caller-supplied data violates a documented contract."""

    code = "validation"


class ConfigurationError(InkgradeError):
    """Grading configuration is not in a runnable state (e.g. unfinalized rubric)."""

    code = "configuration"


class SequencingError(InkgradeError):
    """Operation attempted before its precondition event (e.g. submission not closed)."""

    code = "sequencing"


class IntegrityError(InkgradeError):
    """Cross-references between documents do not line up."""

    code = "integrity"


class ConflictError(InkgradeError):
    """Write raced a concurrent change (e.g. rubric version moved on)."""

    code = "conflict"


class UnknownIdError(InkgradeError):
    code = "unknown-id"


class ImmutabilityError(InkgradeError):
    """Attempted overwrite of an immutable document with different content."""

    code = "immutability"


class StoreLockedError(InkgradeError):
    code = "store-locked"


class GatewayError(InkgradeError):
    code = "gateway"


class FixtureMissingError(GatewayError):
    """Replay provider has no fixture for the request fingerprint."""

    code = "fixture-missing"


class AuthFailureError(GatewayError):
    code = "auth-failure"


class TimeoutExhaustedError(GatewayError):
    """Transient failures persisted through every allowed attempt."""

    code = "timeout-exhausted"


class ProviderResponseError(GatewayError):
    """Provider answered, but with a non-retryable content-level failure."""

    code = "non-transient-provider-error"


class TransientProviderError(GatewayError):
    """Retryable transport or rate-limit failure; consumed inside the gateway."""

    code = "transient-provider-error"
