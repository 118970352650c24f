"""Generation backends: a chat-completions HTTP client, a scripted mock, and
a record/replay store keyed by prompt fingerprint.

The gateway returns model text untouched. Validation happens downstream.
"""

from __future__ import annotations

import hashlib
import json
import os
import random
import threading
import time
from collections import defaultdict, deque
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Callable, Optional, Union

import httpx

MODES = ("live", "mock", "replay")
ENV_URL = "PROPKIT_ENDPOINT_URL"
ENV_KEY = "PROPKIT_API_KEY"


class TransportError(RuntimeError):
    """Network or protocol failure talking to a live endpoint."""


class ReplayMiss(LookupError):
    pass


class MockExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class GenConfig:
    model_name: str = "propkit-generator"
    endpoint_url: Optional[str] = None
    temperature: float = 0.6
    top_p: float = 0.9
    max_retries: int = 3
    max_new_tokens: int = 256
    timeout: float = 60.0
    mode: str = "mock"
    system_prompt: Optional[str] = None
    concurrency: int = 4

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not self.temperature > 0:
            raise ValueError("temperature must be positive")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.max_retries < 0:
            raise ValueError("max_retries must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class GenAttempt:
    prompt: str
    raw_output: str
    latency_ms: int
    attempt_no: int = 1

    def to_dict(self) -> dict:
        return asdict(self)


def fingerprint(prompt: str, model_name: str = "") -> str:
    h = hashlib.sha256()
    h.update(model_name.encode("utf-8"))
    h.update(b"\x00")
    h.update(prompt.encode("utf-8"))
    return h.hexdigest()


class LiveBackend:
    """Single-turn chat-completions client."""

    def __init__(self, config: GenConfig, api_key: Optional[str] = None, client: Optional[httpx.Client] = None):
        url = config.endpoint_url or os.environ.get(ENV_URL)
        if not url:
            raise ValueError(f"live mode needs an endpoint URL (config or ${ENV_URL})")
        self.url = url
        self.config = config
        self.api_key = api_key if api_key is not None else os.environ.get(ENV_KEY)
        self.client = client or httpx.Client(timeout=config.timeout)
        self._sem = threading.BoundedSemaphore(max(1, config.concurrency))

    def request_body(self, prompt: str) -> dict:
        messages = []
        if self.config.system_prompt:
            messages.append({"role": "system", "content": self.config.system_prompt})
        messages.append({"role": "user", "content": prompt})
        return {
            "model": self.config.model_name,
            "messages": messages,
            "temperature": self.config.temperature,
            "top_p": self.config.top_p,
            "max_tokens": self.config.max_new_tokens,
        }

    def complete(self, prompt: str) -> str:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        with self._sem:
            try:
                resp = self.client.post(self.url, json=self.request_body(prompt), headers=headers)
                resp.raise_for_status()
                data = resp.json()
            except (httpx.HTTPError, ValueError) as exc:
                raise TransportError(str(exc)) from exc
        try:
            content = data["choices"][0]["message"]["content"]
        except (KeyError, IndexError, TypeError) as exc:
            raise TransportError(f"unexpected response shape: {data!r}") from exc
        return "" if content is None else str(content)


Responder = Callable[[str], str]


class MockBackend:
    """Scripted responses, either one global queue or one queue per fingerprint.

    ``script`` may be a list (consumed in call order) or a mapping from prompt
    fingerprint to a list. When a ``responder`` is given it answers any prompt
    the script does not cover; otherwise an uncovered call raises
    :class:`MockExhausted`.
    """

    def __init__(
        self,
        script: Union[list[str], dict[str, list[str]], None] = None,
        responder: Optional[Responder] = None,
        model_name: str = "",
    ):
        self.model_name = model_name
        self._global: deque[str] = deque()
        self._keyed: dict[str, deque[str]] = {}
        if isinstance(script, dict):
            self._keyed = {k: deque(v) for k, v in script.items()}
        elif script:
            self._global = deque(script)
        self.responder = responder
        self._lock = threading.Lock()

    def complete(self, prompt: str) -> str:
        key = fingerprint(prompt, self.model_name)
        with self._lock:
            q = self._keyed.get(key)
            if q:
                return q.popleft()
            if self._global:
                return self._global.popleft()
        if self.responder is not None:
            return self.responder(prompt)
        raise MockExhausted(f"no scripted response left for prompt {key[:12]}")


class ReplayStore:
    """Directory of ``<fingerprint>.json`` files holding ordered responses.

    A fingerprint can be requested several times (retries resend the same
    prompt), so each file stores the full response sequence and replay hands
    them out in order.
    """

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()
        self._cursor: dict[str, int] = defaultdict(int)
        self._pending: dict[str, dict] = {}

    def _path(self, key: str) -> Path:
        return self.root / f"{key}.json"

    def record(self, key: str, prompt: str, model_name: str, response: str) -> None:
        with self._lock:
            self.root.mkdir(parents=True, exist_ok=True)
            entry = self._pending.get(key)
            if entry is None:
                # first write this session replaces any stale recording
                entry = {"fingerprint": key, "model_name": model_name, "prompt": prompt, "responses": []}
                self._pending[key] = entry
            entry["responses"].append(response)
            tmp = self._path(key).with_suffix(".tmp")
            tmp.write_text(json.dumps(entry, ensure_ascii=False, indent=1), encoding="utf-8")
            tmp.replace(self._path(key))

    def lookup(self, key: str) -> str:
        with self._lock:
            p = self._path(key)
            if not p.exists():
                raise ReplayMiss(f"no recorded response for {key}")
            responses = json.loads(p.read_text(encoding="utf-8"))["responses"]
            i = self._cursor[key]
            if i >= len(responses):
                raise ReplayMiss(f"recorded responses for {key} exhausted after {len(responses)}")
            self._cursor[key] = i + 1
            return responses[i]


class ReplayBackend:
    def __init__(self, store: ReplayStore, model_name: str = ""):
        self.store = store
        self.model_name = model_name

    def complete(self, prompt: str) -> str:
        return self.store.lookup(fingerprint(prompt, self.model_name))


class Gateway:
    """Uniform ``generate`` over a backend, optionally recording every response."""

    def __init__(self, config: GenConfig, backend, record: Optional[ReplayStore] = None):
        self.config = config
        self.backend = backend
        self.recorder = record

    def generate(self, prompt: str, attempt_no: int = 1) -> GenAttempt:
        start = time.perf_counter()
        raw = self.backend.complete(prompt)
        # offline backends report 0 so transcripts stay byte-stable
        latency = int((time.perf_counter() - start) * 1000) if isinstance(self.backend, LiveBackend) else 0
        if self.recorder is not None:
            self.recorder.record(fingerprint(prompt, self.config.model_name), prompt, self.config.model_name, raw)
        return GenAttempt(prompt=prompt, raw_output=raw, latency_ms=latency, attempt_no=attempt_no)


def build_gateway(
    config: GenConfig,
    record_dir: Optional[str | Path] = None,
    replay_dir: Optional[str | Path] = None,
    script: Union[list[str], dict[str, list[str]], None] = None,
    responder: Optional[Responder] = None,
) -> Gateway:
    if config.mode == "live":
        backend = LiveBackend(config)
    elif config.mode == "mock":
        if script is None and responder is None:
            responder = SyntheticResponder()
        backend = MockBackend(script, responder, config.model_name)
    else:
        src = replay_dir or record_dir
        if src is None:
            raise ValueError("replay mode needs a replay store directory")
        backend = ReplayBackend(ReplayStore(src), config.model_name)
    recorder = ReplayStore(record_dir) if record_dir is not None and config.mode != "replay" else None
    return Gateway(config, backend, recorder)


# Deterministic stand-in generator for offline pipelines.

_WORDS = (
    "this", "is", "fake", "real", "source", "confirmed", "really", "wow", "check", "facts",
    "breaking", "unbelievable", "sad", "news", "praying", "police", "report", "says", "hoax",
    "true", "not", "sure", "link", "please", "share", "debunked", "official", "statement",
)


class SyntheticResponder:
    """Answers a next-node prompt with a plausible node derived from the prompt hash.

    The reply attaches to an existing node, uses the next free index and has
    a short pseudo-random comment, so mock pipelines exercise the full
    validation path without a model.
    """

    def __call__(self, prompt: str) -> str:
        seed = int(hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16], 16)
        rng = random.Random(seed)
        n = _count_nodes(prompt)
        # favour recent nodes and the root, like real reply cascades
        parent = 0 if rng.random() < 0.35 or n <= 1 else rng.randrange(max(0, n - 6), n)
        words = rng.sample(_WORDS, rng.randint(3, 8))
        return json.dumps(
            {"parent node index": parent, "node index": n, "content": " ".join(words) + f" #{seed % 997}"},
            ensure_ascii=False,
        )


def _count_nodes(prompt: str) -> int:
    start = prompt.find("[")
    if start < 0:
        return 1
    try:
        nodes, _ = json.JSONDecoder().raw_decode(prompt[start:])
        return len(nodes)
    except json.JSONDecodeError:
        return prompt.count('"node index"')
