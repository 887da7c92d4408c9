"""Thin client for OpenAI-compatible chat-completion and embeddings APIs."""
from __future__ import annotations

import json
import logging
import threading

import httpx

from .errors import BackendError, DegradedOutputError, TransportError

logger = logging.getLogger(__name__)

REDACTED = "***"


def _redact(headers):
    return {k: (REDACTED if k.lower() in ("authorization", "api-key", "x-api-key") else v)
            for k, v in headers.items()}


class APIClient:
    """Bounded-concurrency HTTP client shared by the remote backends.

    Args:
        endpoint: Base URL, e.g. ``https://api.openai.com/v1``.
        api_key: Bearer token. Never logged.
        timeout: Per-call timeout in seconds.
        max_in_flight: Maximum number of concurrent requests.
        verbose: Log request and response bodies (keys redacted).
        transport: Optional ``httpx`` transport, used by tests.
    """

    def __init__(self, endpoint, api_key=None, timeout=60.0, max_in_flight=4,
                 verbose=False, transport=None):
        if timeout <= 0:
            raise ValueError("timeout must be positive")
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.max_in_flight = max_in_flight
        self.verbose = verbose
        self._slots = threading.BoundedSemaphore(max_in_flight)
        headers = {"Content-Type": "application/json"}
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        self._client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    def close(self):
        self._client.close()

    def post(self, path, body):
        url = f"{self.endpoint}/{path.lstrip('/')}"
        if self.verbose:
            logger.info("POST %s headers=%s body=%s", url, _redact(self._client.headers), json.dumps(body)[:4000])
        with self._slots:
            try:
                response = self._client.post(url, json=body)
            except httpx.TimeoutException as exc:
                raise TransportError(f"timeout calling {url}: {exc}") from exc
            except httpx.TransportError as exc:
                raise TransportError(f"cannot reach {url}: {exc}") from exc
        if self.verbose:
            logger.info("response %s %s", response.status_code, response.text[:4000])
        if response.status_code == 429 or response.status_code >= 500:
            raise TransportError(f"{url} returned HTTP {response.status_code}")
        if response.status_code >= 400:
            raise BackendError(f"{url} returned HTTP {response.status_code}: {response.text[:200]}")
        try:
            return response.json()
        except ValueError as exc:
            raise DegradedOutputError(f"{url} returned non-JSON body") from exc

    def chat(self, model, messages, temperature=0.0, max_tokens=None):
        body = {"model": model, "messages": messages, "temperature": temperature}
        if max_tokens is not None:
            body["max_tokens"] = max_tokens
        payload = self.post("chat/completions", body)
        try:
            content = payload["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise DegradedOutputError("chat response missing choices[0].message.content") from exc
        if isinstance(content, list):
            content = "".join(part.get("text", "") for part in content if isinstance(part, dict))
        return content or ""

    def embeddings(self, model, inputs, dimensions=None):
        body = {"model": model, "input": list(inputs)}
        if dimensions is not None:
            body["dimensions"] = dimensions
        payload = self.post("embeddings", body)
        try:
            data = sorted(payload["data"], key=lambda d: d.get("index", 0))
            return [item["embedding"] for item in data]
        except (KeyError, TypeError) as exc:
            raise DegradedOutputError("embeddings response missing data[].embedding") from exc


def parse_json_reply(text):
    """Decode a JSON object from a model reply, tolerating Markdown code fences."""
    cleaned = text.strip()
    if cleaned.startswith("```"):
        cleaned = cleaned.strip("`")
        if cleaned.lower().startswith("json"):
            cleaned = cleaned[4:]
    start, end = cleaned.find("{"), cleaned.rfind("}")
    if start < 0 or end <= start:
        raise DegradedOutputError(f"model reply is not JSON: {text[:120]!r}")
    try:
        return json.loads(cleaned[start:end + 1])
    except json.JSONDecodeError as exc:
        raise DegradedOutputError(f"model reply is not valid JSON: {exc.msg}") from exc
