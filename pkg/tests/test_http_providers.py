from __future__ import annotations

import base64
import json

import httpx
import pytest

from inkgrade.errors import (
    AuthFailureError,
    ProviderResponseError,
    TransientProviderError,
)
from inkgrade.gateway import (
    ChatCompletionsProvider,
    GenerateContentProvider,
    ModelConfig,
    Provider,
)
from inkgrade.prompt import assemble_prompt

from .conftest import make_instance, make_rubric, make_submission


def _bundle():
    return assemble_prompt(make_instance(), make_rubric(2), make_submission())


def _config(provider):
    return ModelConfig("m1", provider, "vision-model", max_output_tokens=512)


BLOBS = {"d0": b"\x89PNG-fake-image"}


def _mock_client(handler):
    return httpx.Client(transport=httpx.MockTransport(handler))


# ---------------------------------------------------------------------------
# chat-completions shape (PROVIDER_A)
# ---------------------------------------------------------------------------

def test_chat_completions_request_shape_and_reply(monkeypatch):
    monkeypatch.setenv(ChatCompletionsProvider.ENV_KEY, "k-a")
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["auth"] = request.headers["authorization"]
        seen["payload"] = json.loads(request.content)
        return httpx.Response(
            200,
            json={
                "id": "resp-1",
                "model": "vision-model",
                "choices": [{"message": {"content": '{"transcription": "x"}'}}],
                "usage": {"prompt_tokens": 321, "completion_tokens": 45},
            },
        )

    provider = ChatCompletionsProvider(BLOBS.__getitem__, http_client=_mock_client(handler))
    reply = provider.send(_bundle(), _config(Provider.PROVIDER_A))

    assert seen["auth"] == "Bearer k-a"
    payload = seen["payload"]
    assert payload["model"] == "vision-model"
    assert payload["max_tokens"] == 512
    assert payload["messages"][0]["role"] == "system"
    content = payload["messages"][1]["content"]
    image_parts = [c for c in content if c["type"] == "image_url"]
    assert len(image_parts) == 1
    url = image_parts[0]["image_url"]["url"]
    assert url.startswith("data:image/png;base64,")
    assert base64.b64decode(url.split(",", 1)[1]) == BLOBS["d0"]
    assert reply.body == '{"transcription": "x"}'
    assert (reply.usage.input_tokens, reply.usage.output_tokens) == (321, 45)


def test_chat_completions_segmented_content_is_joined(monkeypatch):
    monkeypatch.setenv(ChatCompletionsProvider.ENV_KEY, "k-a")

    def handler(request):
        return httpx.Response(
            200,
            json={
                "choices": [
                    {"message": {"content": [{"type": "text", "text": "{"}, {"type": "text", "text": "}"}]}}
                ],
                "usage": {},
            },
        )

    provider = ChatCompletionsProvider(BLOBS.__getitem__, http_client=_mock_client(handler))
    reply = provider.send(_bundle(), _config(Provider.PROVIDER_A))
    assert reply.body == "{}"


# ---------------------------------------------------------------------------
# generate-content shape (PROVIDER_B)
# ---------------------------------------------------------------------------

def test_generate_content_request_shape_and_reply(monkeypatch):
    monkeypatch.setenv(GenerateContentProvider.ENV_KEY, "k-b")
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["key"] = request.headers["x-goog-api-key"]
        seen["url"] = str(request.url)
        seen["payload"] = json.loads(request.content)
        return httpx.Response(
            200,
            json={
                "modelVersion": "vision-model-001",
                "candidates": [
                    {"content": {"parts": [{"text": '{"items":'}, {"text": " []}"}]}}
                ],
                "usageMetadata": {"promptTokenCount": 777, "candidatesTokenCount": 88},
            },
        )

    provider = GenerateContentProvider(BLOBS.__getitem__, http_client=_mock_client(handler))
    reply = provider.send(_bundle(), _config(Provider.PROVIDER_B))

    assert seen["key"] == "k-b"
    assert seen["url"].endswith("/models/vision-model:generateContent")
    payload = seen["payload"]
    assert payload["generationConfig"]["maxOutputTokens"] == 512
    parts = payload["contents"][0]["parts"]
    inline = [p for p in parts if "inline_data" in p]
    assert len(inline) == 1
    assert inline[0]["inline_data"]["mime_type"] == "image/png"
    assert base64.b64decode(inline[0]["inline_data"]["data"]) == BLOBS["d0"]
    assert reply.body == '{"items": []}'
    assert (reply.usage.input_tokens, reply.usage.output_tokens) == (777, 88)


# ---------------------------------------------------------------------------
# failure classification (shared)
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("status,exc", [
    (401, AuthFailureError),
    (403, AuthFailureError),
    (429, TransientProviderError),
    (500, TransientProviderError),
    (503, TransientProviderError),
    (400, ProviderResponseError),
    (404, ProviderResponseError),
])
def test_http_status_classification(monkeypatch, status, exc):
    monkeypatch.setenv(ChatCompletionsProvider.ENV_KEY, "k-a")
    provider = ChatCompletionsProvider(
        BLOBS.__getitem__,
        http_client=_mock_client(lambda request: httpx.Response(status, text="nope")),
    )
    with pytest.raises(exc):
        provider.send(_bundle(), _config(Provider.PROVIDER_A))


def test_transport_errors_are_transient(monkeypatch):
    monkeypatch.setenv(ChatCompletionsProvider.ENV_KEY, "k-a")

    def handler(request):
        raise httpx.ConnectError("refused")

    provider = ChatCompletionsProvider(BLOBS.__getitem__, http_client=_mock_client(handler))
    with pytest.raises(TransientProviderError):
        provider.send(_bundle(), _config(Provider.PROVIDER_A))


def test_missing_credential_is_auth_failure(monkeypatch):
    monkeypatch.delenv(ChatCompletionsProvider.ENV_KEY, raising=False)
    provider = ChatCompletionsProvider(
        BLOBS.__getitem__, http_client=_mock_client(lambda r: httpx.Response(200))
    )
    with pytest.raises(AuthFailureError):
        provider.send(_bundle(), _config(Provider.PROVIDER_A))


def test_unexpected_payload_is_non_transient(monkeypatch):
    monkeypatch.setenv(GenerateContentProvider.ENV_KEY, "k-b")
    provider = GenerateContentProvider(
        BLOBS.__getitem__,
        http_client=_mock_client(lambda r: httpx.Response(200, json={"weird": True})),
    )
    with pytest.raises(ProviderResponseError):
        provider.send(_bundle(), _config(Provider.PROVIDER_B))