"""LLM client abstraction: deterministic mock, record/replay cassette, and live HTTP."""
from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from pathlib import Path
from typing import Optional

log = logging.getLogger(__name__)

API_KEY_ENV = "QUERYBANDITS_API_KEY"
DEFAULT_FALLBACK = "I don't know."


class ClientFailure(RuntimeError):
    """The model call failed (after retries, for live clients)."""


class NetworkDisabled(RuntimeError):
    """Raised when a network call is attempted in offline mode. Never skipped silently."""


def normalize_prompt(prompt: str) -> str:
    return " ".join(prompt.lower().split())


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()


class MockClient:
    """Answers from a fixture table keyed by normalized prompt, else a canned fallback."""

    kind = "mock"

    def __init__(self, table: Optional[dict[str, str]] = None, fallback: str = DEFAULT_FALLBACK):
        self.table = {normalize_prompt(k): v for k, v in (table or {}).items()}
        self.fallback = fallback

    @classmethod
    def from_file(cls, path, fallback: str = DEFAULT_FALLBACK) -> "MockClient":
        with open(path, encoding="utf-8") as fh:
            return cls(json.load(fh), fallback=fallback)

    def complete(self, prompt: str) -> str:
        return self.table.get(normalize_prompt(prompt), self.fallback)


class RecordedClient:
    """Cassette-backed client. Replay mode never touches the network.

    The cassette is JSONL of ``{"hash", "prompt", "completion"}`` objects. In
    record mode, misses are forwarded to ``inner`` and appended to the file.
    """

    kind = "recorded"

    def __init__(self, path, mode: str = "replay", inner=None):
        if mode not in ("replay", "record"):
            raise ValueError(f"unknown cassette mode {mode!r}")
        if mode == "record" and inner is None:
            raise ValueError("record mode needs an inner client")
        self.path = Path(path)
        self.mode = mode
        self.inner = inner
        self._lock = threading.Lock()
        self.entries: dict[str, str] = {}
        if self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, start=1):
                    if not line.strip():
                        continue
                    try:
                        obj = json.loads(line)
                        self.entries[obj["hash"]] = obj["completion"]
                    except (json.JSONDecodeError, KeyError) as exc:
                        raise ValueError(f"{self.path}:{lineno}: bad cassette entry ({exc})") from exc
        elif mode == "replay":
            raise FileNotFoundError(f"cassette not found: {self.path}")

    def complete(self, prompt: str) -> str:
        key = prompt_hash(prompt)
        with self._lock:
            if key in self.entries:
                return self.entries[key]
        if self.mode == "replay":
            raise ClientFailure(f"prompt {key[:12]} not in cassette {self.path.name}")
        completion = self.inner.complete(prompt)
        with self._lock:
            self.entries[key] = completion
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(json.dumps({"hash": key, "prompt": prompt, "completion": completion}) + "\n")
        return completion


def redact(text: str, secret: Optional[str]) -> str:
    if secret:
        text = text.replace(secret, "***")
    return text


class LiveClient:
    """HTTP chat-completion client with retries, backoff and a shared rate limit.

    The API key is read from ``api_key_env`` and never written to logs.
    """

    kind = "live"

    def __init__(
        self,
        base_url: str,
        model: str,
        api_key_env: str = API_KEY_ENV,
        temperature: float = 0.0,
        timeout: float = 60.0,
        max_retries: int = 3,
        backoff: float = 1.0,
        min_interval: float = 0.0,
        offline: bool = False,
        transport=None,
    ):
        self.base_url = base_url.rstrip("/")
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.timeout = timeout
        self.max_retries = max_retries
        self.backoff = backoff
        self.min_interval = min_interval
        self.offline = offline
        self._transport = transport
        self._lock = threading.Lock()
        self._last_call = 0.0
        self._http = None

    def _client(self):
        if self._http is None:
            import httpx

            self._http = httpx.Client(timeout=self.timeout, transport=self._transport)
        return self._http

    def _throttle(self):
        with self._lock:
            wait = self._last_call + self.min_interval - time.monotonic()
            if wait > 0:
                time.sleep(wait)
            self._last_call = time.monotonic()

    def complete(self, prompt: str) -> str:
        if self.offline:
            raise NetworkDisabled(f"offline mode: refusing network call to {self.base_url}")
        import httpx

        key = os.environ.get(self.api_key_env)
        if not key:
            raise ClientFailure(f"environment variable {self.api_key_env} is not set")
        payload = {
            "model": self.model,
            "temperature": self.temperature,
            "messages": [{"role": "user", "content": prompt}],
        }
        headers = {"Authorization": f"Bearer {key}"}
        last_err = "no attempt made"
        for attempt in range(self.max_retries + 1):
            if attempt:
                time.sleep(self.backoff * 2 ** (attempt - 1))
            self._throttle()
            try:
                resp = self._client().post(f"{self.base_url}/chat/completions", json=payload, headers=headers)
            except httpx.HTTPError as exc:
                last_err = redact(f"{type(exc).__name__}: {exc}", key)
                log.warning("live client attempt %d failed: %s", attempt + 1, last_err)
                continue
            if resp.status_code == 200:
                try:
                    return resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError) as exc:
                    last_err = f"malformed response body ({exc})"
                    continue
            last_err = redact(f"HTTP {resp.status_code}: {resp.text[:200]}", key)
            log.warning("live client attempt %d failed: %s", attempt + 1, last_err)
            if resp.status_code < 500 and resp.status_code != 429:
                break
        raise ClientFailure(last_err)


def make_client(spec: Optional[dict], offline: bool = False, base_dir: Optional[Path] = None):
    """Build a client from a config mapping such as ``{"kind": "mock", "fixtures": "..."}``."""
    spec = dict(spec or {"kind": "mock"})
    kind = spec.pop("kind", "mock")

    def resolve(p):
        p = Path(p)
        return p if p.is_absolute() or base_dir is None else base_dir / p

    if kind == "mock":
        fixtures = spec.get("fixtures")
        fallback = spec.get("fallback", DEFAULT_FALLBACK)
        if fixtures:
            return MockClient.from_file(resolve(fixtures), fallback=fallback)
        return MockClient(spec.get("table"), fallback=fallback)
    if kind == "recorded":
        mode = spec.get("mode", "replay")
        inner = make_client(spec["inner"], offline=offline, base_dir=base_dir) if "inner" in spec else None
        return RecordedClient(resolve(spec["cassette"]), mode=mode, inner=inner)
    if kind == "live":
        return LiveClient(
            base_url=spec["base_url"],
            model=spec["model"],
            api_key_env=spec.get("api_key_env", API_KEY_ENV),
            temperature=spec.get("temperature", 0.0),
            timeout=spec.get("timeout", 60.0),
            max_retries=spec.get("max_retries", 3),
            backoff=spec.get("backoff", 1.0),
            min_interval=spec.get("min_interval", 0.0),
            offline=offline,
        )
    raise ValueError(f"unknown client kind {kind!r}")
