"""Text-completion gateway: live HTTP, cassette replay and scripted mock backends."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Mapping, Protocol, Sequence

from openpub.errors import (
    BackendAuth,
    BackendError,
    BackendTimeout,
    CassetteInvalid,
    CassetteMiss,
    LLMGateError,
)

log = logging.getLogger(__name__)

MODES = ("live", "replay", "mock")
DEFAULT_TEMPERATURE = 0.7


@dataclass(frozen=True)
class PromptRequest:
    template_id: str
    filled_prompt: str
    temperature: float = DEFAULT_TEMPERATURE
    run_index: int = 0

    def __post_init__(self):
        if not self.filled_prompt:
            raise ValueError("filled_prompt must be non-empty")
        if not 0.0 <= self.temperature <= 1.0:
            raise ValueError(f"temperature out of range: {self.temperature}")
        if self.run_index < 0:
            raise ValueError(f"run_index must be >= 0: {self.run_index}")


def normalize_newlines(text: str) -> str:
    return text.replace("\r\n", "\n").replace("\r", "\n")


def sha256_text(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def canonical_payload(request: PromptRequest) -> bytes:
    """Canonical serialization the cassette key is computed over."""
    doc = {
        "template_id": request.template_id,
        "prompt": normalize_newlines(request.filled_prompt),
        "temperature": f"{request.temperature:.2f}",
        "run_index": request.run_index,
    }
    return json.dumps(doc, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def canonical_key(request: PromptRequest) -> str:
    return hashlib.sha256(canonical_payload(request)).hexdigest()


@dataclass(frozen=True)
class CassetteEntry:
    key: str
    template_id: str
    prompt_sha256: str
    run_index: int
    response: str

    def to_json(self) -> dict:
        return {
            "key": self.key,
            "template_id": self.template_id,
            "prompt_sha256": self.prompt_sha256,
            "run_index": self.run_index,
            "response": self.response,
        }


class Cassette:
    """Recorded request/response pairs. Appends go through a single lock."""

    def __init__(self, entries: Sequence[CassetteEntry] = ()):
        self._entries: dict[str, CassetteEntry] = {}
        self._lock = threading.Lock()
        for e in entries:
            if e.key in self._entries:
                raise CassetteInvalid(f"duplicate cassette key {e.key}")
            self._entries[e.key] = e

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: str) -> bool:
        return key in self._entries

    @property
    def entries(self) -> list[CassetteEntry]:
        return list(self._entries.values())

    def lookup(self, request: PromptRequest) -> str:
        entry = self._entries.get(canonical_key(request))
        if entry is None:
            raise CassetteMiss(request.template_id, request.run_index)
        return entry.response

    def record(self, request: PromptRequest, response: str) -> None:
        key = canonical_key(request)
        entry = CassetteEntry(
            key, request.template_id, sha256_text(normalize_newlines(request.filled_prompt)),
            request.run_index, response,
        )
        with self._lock:
            self._entries[key] = entry

    def dumps(self) -> str:
        rows = sorted(
            (e.to_json() for e in self._entries.values()),
            key=lambda r: (r["template_id"], r["run_index"], r["key"]),
        )
        return json.dumps(rows, indent=2, ensure_ascii=False, sort_keys=True) + "\n"

    def save(self, path: str | Path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + ".tmp")
        tmp.write_text(self.dumps(), encoding="utf-8", newline="\n")
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | Path) -> "Cassette":
        try:
            rows = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError as exc:
            raise CassetteInvalid(f"cassette not found: {path}") from exc
        except json.JSONDecodeError as exc:
            raise CassetteInvalid(f"cassette is not valid JSON: {path}: {exc}") from exc
        if not isinstance(rows, list):
            raise CassetteInvalid(f"cassette must be a JSON array: {path}")
        entries = []
        for i, row in enumerate(rows):
            try:
                entries.append(
                    CassetteEntry(
                        str(row["key"]), str(row["template_id"]), str(row["prompt_sha256"]),
                        int(row["run_index"]), str(row["response"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise CassetteInvalid(f"{path}: entry {i} malformed: {exc}") from exc
        return cls(entries)


# ------------------------------------------------------------- backends

class Transport(Protocol):
    """Minimal HTTP surface; returns (status_code, body_text)."""

    def __call__(self, method: str, url: str, *, headers: Mapping[str, str],
                 json_body: dict | None, timeout: float) -> tuple[int, str]: ...


class TransportTimeout(Exception):
    pass


def requests_transport(method, url, *, headers, json_body, timeout):
    import requests

    try:
        resp = requests.request(method, url, headers=dict(headers), json=json_body, timeout=timeout)
    except requests.Timeout as exc:
        raise TransportTimeout(str(exc)) from exc
    except requests.RequestException as exc:
        raise BackendError(str(exc)) from exc
    return resp.status_code, resp.text


class CountingTransport:
    """Wraps a transport (or nothing) and counts calls."""

    def __init__(self, inner: Transport | None = None):
        self.inner = inner
        self.calls = 0
        self._lock = threading.Lock()

    def __call__(self, method, url, *, headers, json_body, timeout):
        with self._lock:
            self.calls += 1
        if self.inner is None:
            raise BackendError("no network in this context")
        return self.inner(method, url, headers=headers, json_body=json_body, timeout=timeout)


@dataclass
class LiveConfig:
    url: str
    model: str
    api_key: str
    timeout: float = 60.0
    max_retries: int = 2
    backoff: float = 1.0
    seed: int | None = None

    @classmethod
    def from_env(cls, env: Mapping[str, str] | None = None, **kw) -> "LiveConfig":
        env = os.environ if env is None else env
        missing = [k for k in ("OPENPUB_LLM_URL", "OPENPUB_LLM_MODEL", "OPENPUB_LLM_KEY") if not env.get(k)]
        if missing:
            raise BackendAuth("missing environment variables: " + ", ".join(missing))
        return cls(env["OPENPUB_LLM_URL"], env["OPENPUB_LLM_MODEL"], env["OPENPUB_LLM_KEY"], **kw)


class LiveBackend:
    """Chat-completion client. Retries timeouts and 5xx at most ``max_retries`` times."""

    def __init__(self, config: LiveConfig, transport: Transport | None = None,
                 sleep: Callable[[float], None] = time.sleep):
        self.config = config
        self.transport = transport or requests_transport
        self.sleep = sleep

    def complete(self, request: PromptRequest) -> str:
        cfg = self.config
        body = {
            "model": cfg.model,
            "messages": [{"role": "user", "content": normalize_newlines(request.filled_prompt)}],
            "temperature": request.temperature,
        }
        if cfg.seed is not None:
            body["seed"] = cfg.seed + request.run_index
        headers = {"Authorization": f"Bearer {cfg.api_key}", "Content-Type": "application/json"}
        last = ""
        for attempt in range(cfg.max_retries + 1):
            if attempt:
                self.sleep(cfg.backoff * 2 ** (attempt - 1))
            try:
                status, text = self.transport("POST", cfg.url, headers=headers, json_body=body,
                                              timeout=cfg.timeout)
            except TransportTimeout as exc:
                last = f"timeout: {exc}"
                log.warning("live call %s run %d timed out (attempt %d)",
                            request.template_id, request.run_index, attempt + 1)
                continue
            if status in (401, 403):
                raise BackendAuth(f"backend rejected credentials (HTTP {status})")
            if status >= 500:
                last = f"HTTP {status}"
                continue
            if status >= 400:
                raise BackendError(f"HTTP {status}: {text[:200]}")
            try:
                return json.loads(text)["choices"][0]["message"]["content"]
            except (ValueError, KeyError, IndexError, TypeError) as exc:
                raise BackendError(f"unexpected completion payload: {exc}") from exc
        if last.startswith("timeout"):
            raise BackendTimeout(f"{request.template_id} run {request.run_index}: {last}")
        raise BackendError(f"{request.template_id} run {request.run_index}: {last}")


class MockBackend:
    """Scripted responses.

    ``script`` maps template_id to either one response for every run, or a
    list indexed by run_index (wrapping around). A callable script receives
    the request and returns the text. Unknown templates get ``default``.
    """

    def __init__(self, script: Mapping[str, str | Sequence[str]] | Callable[[PromptRequest], str] | None = None,
                 default: str | None = "[]"):
        self.script = script or {}
        self.default = default
        self.calls: list[PromptRequest] = []
        self._lock = threading.Lock()

    def complete(self, request: PromptRequest) -> str:
        with self._lock:
            self.calls.append(request)
        if callable(self.script):
            return self.script(request)
        value = self.script.get(request.template_id)
        if value is None:
            if self.default is None:
                raise BackendError(f"mock has no script for {request.template_id}")
            return self.default
        if isinstance(value, str):
            return value
        return value[request.run_index % len(value)]

    @classmethod
    def from_file(cls, path: str | Path) -> "MockBackend":
        return cls(json.loads(Path(path).read_text(encoding="utf-8")))


class LLMGate:
    """Uniform ``send`` over the three modes.

    ``record`` (a Cassette) captures every successful live or mock response.
    The optional ``transport`` is only ever used by the live backend.
    """

    def __init__(self, mode: str, *, cassette: Cassette | None = None,
                 backend=None, live_config: LiveConfig | None = None,
                 transport: Transport | None = None, record: Cassette | None = None):
        if mode not in MODES:
            raise ValueError(f"unknown mode {mode!r}")
        if mode == "replay" and cassette is None:
            raise LLMGateError("replay mode needs a cassette")
        self.mode = mode
        self.cassette = cassette
        self.recorder = record
        if mode == "live" and backend is None:
            backend = LiveBackend(live_config or LiveConfig.from_env(), transport)
        if mode == "mock" and backend is None:
            backend = MockBackend()
        self.backend = backend

    def send(self, request: PromptRequest) -> str:
        if self.mode == "replay":
            return self.cassette.lookup(request)
        text = self.backend.complete(request)
        if self.recorder is not None:
            self.recorder.record(request, text)
        return text
