"""Canonical encoding primitives.

Documents are stored as key-sorted JSON with a fixed layout so that byte
digests are stable across processes and machines. Scores and cost rates are
exact rationals, serialized as ``"numerator/denominator"`` strings (plain
integers when the denominator is 1) to avoid floating-point drift.
"""
from __future__ import annotations

import hashlib
import json
import re
from datetime import datetime, timezone
from decimal import Decimal, InvalidOperation
from fractions import Fraction

from .errors import ValidationError

# Domain identifiers (question ids, item ids, submitter ids, ...).
_IDENTIFIER_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._@-]{0,127}$")
# Store document ids additionally allow ':' (used to join compound keys).
_DOC_ID_RE = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._@:-]{0,255}$")


def canonical_json_bytes(doc) -> bytes:
    """Encode ``doc`` as stable, diffable JSON (sorted keys, 2-space indent)."""
    text = json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False)
    return (text + "\n").encode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_doc(doc) -> str:
    """Content digest of a document's canonical encoding."""
    return sha256_hex(canonical_json_bytes(doc))


def check_identifier(value: str, field: str) -> str:
    if not isinstance(value, str) or not _IDENTIFIER_RE.match(value):
        raise ValidationError(f"{field} is not a valid identifier: {value!r}")
    return value


def check_doc_id(value: str) -> str:
    if not isinstance(value, str) or not _DOC_ID_RE.match(value):
        raise ValidationError(f"invalid document id: {value!r}")
    return value


def fraction_to_str(value: Fraction) -> str:
    if value.denominator == 1:
        return str(value.numerator)
    return f"{value.numerator}/{value.denominator}"


def fraction_from(value) -> Fraction:
    """Parse a rational from int, ``"a/b"`` / decimal strings, or float.

    Floats go through ``Decimal(str(x))`` so that e.g. 0.1 means 1/10, not the
    binary approximation.
    """
    if isinstance(value, Fraction):
        return value
    if isinstance(value, bool):
        raise ValidationError(f"not a rational value: {value!r}")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        return Fraction(Decimal(str(value)))
    if isinstance(value, str):
        text = value.strip()
        try:
            if "/" in text:
                num, den = text.split("/", 1)
                return Fraction(int(num), int(den))
            return Fraction(Decimal(text))
        except (ValueError, ZeroDivisionError, InvalidOperation) as exc:
            raise ValidationError(f"not a rational value: {value!r}") from exc
    raise ValidationError(f"not a rational value: {value!r}")


def utcnow() -> datetime:
    return datetime.now(timezone.utc)


def dt_to_str(dt: datetime) -> str:
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt.isoformat()


def dt_from_str(value: str) -> datetime:
    # Python 3.10 fromisoformat does not accept a trailing 'Z'.
    if value.endswith("Z"):
        value = value[:-1] + "+00:00"
    dt = datetime.fromisoformat(value)
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return dt
