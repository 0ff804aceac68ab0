"""Uniform access to vision-capable model providers.

The gateway owns retry/backoff and usage accounting; provider clients only
translate a PromptBundle into one HTTP call (or one fixture lookup). Replay is
the default test backend: fixtures are keyed by the bundle fingerprint, so a
prompt-template bump invalidates every stale recording automatically.

Retries apply exclusively to transient transport failures (timeouts, connect
errors, rate limits, 5xx). Content-level failures — auth rejections, malformed
provider payloads — are never retried here; malformed *model output* is not a
gateway concern at all, the parser and orchestrator deal with it.
"""
from __future__ import annotations

import base64
import json
import logging
import os
import time
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from pathlib import Path
from typing import Callable, Mapping, Optional, Protocol, Sequence

from .domain import TokenUsage
from .errors import (
    AuthFailureError,
    ConfigurationError,
    FixtureMissingError,
    ProviderResponseError,
    TimeoutExhaustedError,
    TransientProviderError,
)
from .prompt import PromptBundle, TextPart
from .serialize import (
    canonical_json_bytes,
    dt_to_str,
    fraction_from,
    fraction_to_str,
    utcnow,
)

log = logging.getLogger(__name__)


class Provider(str, Enum):
    PROVIDER_A = "PROVIDER_A"
    PROVIDER_B = "PROVIDER_B"
    REPLAY = "REPLAY"


@dataclass(frozen=True)
class RetryPolicy:
    max_attempts: int = 3
    backoff_base: float = 0.5


@dataclass(frozen=True)
class CostRates:
    per_input_token: Fraction = Fraction(0)
    per_output_token: Fraction = Fraction(0)


@dataclass(frozen=True)
class ModelConfig:
    model_config_id: str
    provider: Provider
    model_name: str
    max_output_tokens: int = 4096
    request_timeout: float = 120.0
    retry_policy: RetryPolicy = RetryPolicy()
    cost_rates: CostRates = CostRates()

    def validate(self) -> None:
        if self.retry_policy.max_attempts < 1:
            raise ConfigurationError("retry max_attempts must be >= 1")
        if self.request_timeout <= 0:
            raise ConfigurationError("request_timeout must be > 0")
        if self.max_output_tokens < 1:
            raise ConfigurationError("max_output_tokens must be >= 1")


@dataclass(frozen=True)
class RawModelResponse:
    """Provider output, verbatim. `body` is the model's text, unnormalized."""

    body: str
    usage: TokenUsage
    latency: float
    attempts_used: int
    provider_echo: str = ""


@dataclass(frozen=True)
class ProviderReply:
    body: str
    usage: TokenUsage
    provider_echo: str = ""


class ProviderClient(Protocol):
    def send(self, bundle: PromptBundle, config: ModelConfig) -> ProviderReply: ...


@dataclass(frozen=True)
class UsageSummary:
    input_tokens: int
    output_tokens: int
    cost: Fraction


class Gateway:
    def __init__(
        self,
        providers: Mapping[Provider, ProviderClient],
        *,
        sleep: Callable[[float], None] = time.sleep,
        clock: Callable[[], float] = time.monotonic,
    ):
        self._providers = dict(providers)
        self._sleep = sleep
        self._clock = clock

    def invoke(self, bundle: PromptBundle, config: ModelConfig) -> RawModelResponse:
        """One grading call; retries transient failures per the config policy."""
        config.validate()
        client = self._providers.get(config.provider)
        if client is None:
            raise ConfigurationError(f"no client registered for {config.provider.value}")
        start = self._clock()
        attempts = 0
        while True:
            attempts += 1
            try:
                reply = client.send(bundle, config)
                break
            except TransientProviderError as exc:
                if attempts >= config.retry_policy.max_attempts:
                    raise TimeoutExhaustedError(
                        f"transient failures exhausted {attempts} attempts: {exc}",
                        detail=str(exc),
                    ) from exc
                delay = config.retry_policy.backoff_base * (2 ** (attempts - 1))
                log.debug("transient provider failure (attempt %d): %s", attempts, exc)
                self._sleep(delay)
        return RawModelResponse(
            body=reply.body,
            usage=reply.usage,
            latency=self._clock() - start,
            attempts_used=attempts,
            provider_echo=reply.provider_echo,
        )


def accumulate_usage(
    responses: Sequence[RawModelResponse], config: ModelConfig
) -> UsageSummary:
    """Token totals and exact-rational cost for a batch of responses."""
    input_tokens = sum(r.usage.input_tokens for r in responses)
    output_tokens = sum(r.usage.output_tokens for r in responses)
    cost = (
        input_tokens * config.cost_rates.per_input_token
        + output_tokens * config.cost_rates.per_output_token
    )
    return UsageSummary(input_tokens=input_tokens, output_tokens=output_tokens, cost=cost)


# ---------------------------------------------------------------------------
# Replay / record fixtures
# ---------------------------------------------------------------------------

def fixture_path(fixtures_dir: Path, fingerprint: str) -> Path:
    return Path(fixtures_dir) / f"{fingerprint}.json"


def write_fixture(
    fixtures_dir: Path,
    fingerprint: str,
    body: str,
    usage: TokenUsage,
    *,
    recorded_at: Optional[str] = None,
) -> Path:
    path = fixture_path(fixtures_dir, fingerprint)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "request_digest": fingerprint,
        "body": body,
        "usage": {
            "input_tokens": usage.input_tokens,
            "output_tokens": usage.output_tokens,
        },
        "recorded_at": recorded_at or dt_to_str(utcnow()),
    }
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(canonical_json_bytes(doc))
    os.replace(tmp, path)
    return path


class ReplayProvider:
    """Answers from recorded fixtures; bit-deterministic by construction."""

    def __init__(self, fixtures_dir: Path | str):
        self.fixtures_dir = Path(fixtures_dir)

    def send(self, bundle: PromptBundle, config: ModelConfig) -> ProviderReply:
        path = fixture_path(self.fixtures_dir, bundle.fingerprint)
        if not path.exists():
            raise FixtureMissingError(
                f"no fixture for fingerprint {bundle.fingerprint} under {self.fixtures_dir}"
            )
        doc = json.loads(path.read_text("utf-8"))
        return ProviderReply(
            body=doc["body"],
            usage=TokenUsage(
                input_tokens=int(doc["usage"]["input_tokens"]),
                output_tokens=int(doc["usage"]["output_tokens"]),
            ),
            provider_echo=f"replay:{bundle.fingerprint[:12]}",
        )


class RecordingProvider:
    """Wraps a live client and writes a replayable fixture for every reply."""

    def __init__(self, inner: ProviderClient, fixtures_dir: Path | str):
        self.inner = inner
        self.fixtures_dir = Path(fixtures_dir)

    def send(self, bundle: PromptBundle, config: ModelConfig) -> ProviderReply:
        reply = self.inner.send(bundle, config)
        write_fixture(self.fixtures_dir, bundle.fingerprint, reply.body, reply.usage)
        return reply


# ---------------------------------------------------------------------------
# Live HTTP providers
# ---------------------------------------------------------------------------

_TRANSIENT_STATUS = {408, 429, 500, 502, 503, 504}


def _classify_status(status: int, text: str) -> None:
    if status in (401, 403):
        raise AuthFailureError(f"provider rejected credentials (HTTP {status})")
    if status in _TRANSIENT_STATUS:
        raise TransientProviderError(f"transient provider failure (HTTP {status})")
    if status >= 400:
        raise ProviderResponseError(f"provider error HTTP {status}: {text[:300]}")


def _require_env(name: str) -> str:
    value = os.environ.get(name, "").strip()
    if not value:
        raise AuthFailureError(f"missing credential: set {name}")
    return value


class ChatCompletionsProvider:
    """PROVIDER_A: an OpenAI-compatible /chat/completions JSON API."""

    ENV_KEY = "INKGRADE_PROVIDER_A_API_KEY"

    def __init__(
        self,
        blob_loader: Callable[[str], bytes],
        *,
        base_url: str = "https://api.openai.com/v1",
        http_client=None,
    ):
        self._blob_loader = blob_loader
        self._base_url = base_url.rstrip("/")
        self._http = http_client

    def _client(self):
        if self._http is None:
            import httpx

            self._http = httpx.Client()
        return self._http

    def send(self, bundle: PromptBundle, config: ModelConfig) -> ProviderReply:
        import httpx

        key = _require_env(self.ENV_KEY)
        content = []
        for part in bundle.user_parts:
            if isinstance(part, TextPart):
                content.append({"type": "text", "text": part.text})
            else:
                data = base64.b64encode(self._blob_loader(part.blob_digest)).decode("ascii")
                content.append(
                    {
                        "type": "image_url",
                        "image_url": {"url": f"data:{part.media_type};base64,{data}"},
                    }
                )
        payload = {
            "model": config.model_name,
            "messages": [
                {"role": "system", "content": bundle.system_text},
                {"role": "user", "content": content},
            ],
            "max_tokens": config.max_output_tokens,
        }
        try:
            resp = self._client().post(
                f"{self._base_url}/chat/completions",
                json=payload,
                headers={"Authorization": f"Bearer {key}"},
                timeout=config.request_timeout,
            )
        except httpx.TimeoutException as exc:
            raise TransientProviderError(f"request timed out: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransientProviderError(f"transport failure: {exc}") from exc
        _classify_status(resp.status_code, resp.text)
        try:
            doc = resp.json()
            body = doc["choices"][0]["message"]["content"]
            if isinstance(body, list):  # segmented content
                body = "".join(seg.get("text", "") for seg in body)
            usage = doc.get("usage", {})
            reply_usage = TokenUsage(
                input_tokens=int(usage.get("prompt_tokens", 0)),
                output_tokens=int(usage.get("completion_tokens", 0)),
            )
            echo = json.dumps(
                {"id": doc.get("id"), "model": doc.get("model")}, sort_keys=True
            )
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderResponseError(f"unexpected provider payload: {exc}") from exc
        return ProviderReply(body=str(body), usage=reply_usage, provider_echo=echo)


class GenerateContentProvider:
    """PROVIDER_B: a Gemini-style :generateContent JSON API."""

    ENV_KEY = "INKGRADE_PROVIDER_B_API_KEY"

    def __init__(
        self,
        blob_loader: Callable[[str], bytes],
        *,
        base_url: str = "https://generativelanguage.googleapis.com/v1beta",
        http_client=None,
    ):
        self._blob_loader = blob_loader
        self._base_url = base_url.rstrip("/")
        self._http = http_client

    def _client(self):
        if self._http is None:
            import httpx

            self._http = httpx.Client()
        return self._http

    def send(self, bundle: PromptBundle, config: ModelConfig) -> ProviderReply:
        import httpx

        key = _require_env(self.ENV_KEY)
        parts = []
        for part in bundle.user_parts:
            if isinstance(part, TextPart):
                parts.append({"text": part.text})
            else:
                parts.append(
                    {
                        "inline_data": {
                            "mime_type": part.media_type,
                            "data": base64.b64encode(
                                self._blob_loader(part.blob_digest)
                            ).decode("ascii"),
                        }
                    }
                )
        payload = {
            "systemInstruction": {"parts": [{"text": bundle.system_text}]},
            "contents": [{"role": "user", "parts": parts}],
            "generationConfig": {"maxOutputTokens": config.max_output_tokens},
        }
        url = f"{self._base_url}/models/{config.model_name}:generateContent"
        try:
            resp = self._client().post(
                url,
                json=payload,
                headers={"x-goog-api-key": key},
                timeout=config.request_timeout,
            )
        except httpx.TimeoutException as exc:
            raise TransientProviderError(f"request timed out: {exc}") from exc
        except httpx.TransportError as exc:
            raise TransientProviderError(f"transport failure: {exc}") from exc
        _classify_status(resp.status_code, resp.text)
        try:
            doc = resp.json()
            segments = doc["candidates"][0]["content"]["parts"]
            body = "".join(seg.get("text", "") for seg in segments)
            meta = doc.get("usageMetadata", {})
            reply_usage = TokenUsage(
                input_tokens=int(meta.get("promptTokenCount", 0)),
                output_tokens=int(meta.get("candidatesTokenCount", 0)),
            )
            echo = json.dumps({"model": doc.get("modelVersion")}, sort_keys=True)
        except (KeyError, IndexError, TypeError, ValueError) as exc:
            raise ProviderResponseError(f"unexpected provider payload: {exc}") from exc
        return ProviderReply(body=body, usage=reply_usage, provider_echo=echo)


def build_gateway(
    *,
    blob_loader: Optional[Callable[[str], bytes]] = None,
    fixtures_dir: Optional[Path | str] = None,
    replay_all: bool = False,
    record: bool = False,
) -> Gateway:
    """Wire a gateway for the CLI.

    replay_all routes every provider through fixtures (deterministic runs);
    record wraps the live providers so each reply is captured for replay.
    """
    providers: dict[Provider, ProviderClient] = {}
    if fixtures_dir is not None:
        providers[Provider.REPLAY] = ReplayProvider(fixtures_dir)
    if replay_all:
        if fixtures_dir is None:
            raise ConfigurationError("replay mode requires a fixtures directory")
        replay = providers[Provider.REPLAY]
        providers[Provider.PROVIDER_A] = replay
        providers[Provider.PROVIDER_B] = replay
        return Gateway(providers)
    if blob_loader is None:
        raise ConfigurationError("live providers need a blob loader")
    live_a: ProviderClient = ChatCompletionsProvider(blob_loader)
    live_b: ProviderClient = GenerateContentProvider(blob_loader)
    if record:
        if fixtures_dir is None:
            raise ConfigurationError("record mode requires a fixtures directory")
        live_a = RecordingProvider(live_a, fixtures_dir)
        live_b = RecordingProvider(live_b, fixtures_dir)
    providers[Provider.PROVIDER_A] = live_a
    providers[Provider.PROVIDER_B] = live_b
    return Gateway(providers)


# ---------------------------------------------------------------------------
# ModelConfig codec
# ---------------------------------------------------------------------------

def model_config_to_doc(config: ModelConfig) -> dict:
    return {
        "model_config_id": config.model_config_id,
        "provider": config.provider.value,
        "model_name": config.model_name,
        "max_output_tokens": config.max_output_tokens,
        "request_timeout": config.request_timeout,
        "retry": {
            "max_attempts": config.retry_policy.max_attempts,
            "backoff_base": config.retry_policy.backoff_base,
        },
        "cost": {
            "per_input_token": fraction_to_str(config.cost_rates.per_input_token),
            "per_output_token": fraction_to_str(config.cost_rates.per_output_token),
        },
    }


def model_config_from_doc(doc: dict) -> ModelConfig:
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
