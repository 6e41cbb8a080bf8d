"""Chat-completion providers, per-role sampling, and usage/cost accounting.

Two providers ship here: :class:`HttpProvider` for any OpenAI-style
``/chat/completions`` endpoint, and :class:`ScriptedProvider`, which plays back
a transcript so whole runs are deterministic offline. :class:`LLMClient` is
what the search code talks to; it fills sampling settings from the role,
charges the budget ledger, and traces every call.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import httpx

from tkcts.core import BudgetLedger, SearchConfig
from tkcts.errors import ConfigError, FixtureError, TransportError

logger = logging.getLogger(__name__)

ROLES = ("generator", "debugger", "summarizer", "judge")

API_KEY_ENV = "TKCTS_API_KEY"
BASE_URL_ENV = "TKCTS_BASE_URL"
AUTH_HEADER_ENV = "TKCTS_AUTH_HEADER"

RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


@dataclass
class ChatRequest:
    role_profile: str
    model: str
    messages: list[str]
    temperature: float
    top_p: float
    max_tokens: int
    # What the call is for (initial, debug, improve, feedback, judge_relative, ...).
    # Providers may ignore it; the trace and the simulator use it.
    purpose: str = ""

    def request_hash(self) -> str:
        body = json.dumps(
            {
                "role": self.role_profile,
                "model": self.model,
                "messages": self.messages,
                "temperature": self.temperature,
                "top_p": self.top_p,
                "max_tokens": self.max_tokens,
            },
            sort_keys=True,
        )
        return hashlib.sha256(body.encode()).hexdigest()


@dataclass
class Usage:
    prompt_tokens: int = 0
    completion_tokens: int = 0

    def __post_init__(self):
        if self.prompt_tokens < 0 or self.completion_tokens < 0:
            raise ValueError("usage counts must be non-negative")


@dataclass
class ChatResponse:
    text: str
    usage: Usage = field(default_factory=Usage)
    model_echo: str = ""


class Provider(Protocol):
    def complete(self, req: ChatRequest) -> ChatResponse: ...


def approx_tokens(text: str) -> int:
    return (len(text) + 3) // 4


class ScriptedProvider:
    """Plays back ``[{"role": ..., "text": ...}, ...]`` entries in order.

    Each request must match the role of the next entry. Optional ``usage``
    entries override the character-based token estimate.
    """

    def __init__(self, entries: list[dict[str, Any]]):
        for i, entry in enumerate(entries):
            if not isinstance(entry, dict) or "role" not in entry or "text" not in entry:
                raise FixtureError(f"transcript entry {i} needs 'role' and 'text'")
            if entry["role"] not in ROLES:
                raise FixtureError(f"transcript entry {i} has unknown role {entry['role']!r}")
        self.entries = list(entries)
        self.index = 0
        self._lock = threading.Lock()

    @classmethod
    def load(cls, path: str | Path) -> ScriptedProvider:
        try:
            entries = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError("transcript", f"cannot read {path}: {exc}") from exc
        if not isinstance(entries, list):
            raise ConfigError("transcript", "expected a JSON array of {role, text} entries")
        return cls(entries)

    def complete(self, req: ChatRequest) -> ChatResponse:
        with self._lock:
            if self.index >= len(self.entries):
                raise FixtureError(
                    f"transcript exhausted after {len(self.entries)} entries "
                    f"(next request role={req.role_profile!r})"
                )
            entry = self.entries[self.index]
            if entry["role"] != req.role_profile:
                raise FixtureError(
                    f"transcript entry {self.index}: expected role {entry['role']!r}, "
                    f"got request for {req.role_profile!r}"
                )
            self.index += 1
        usage = entry.get("usage") or {}
        return ChatResponse(
            text=entry["text"],
            usage=Usage(
                usage.get("prompt_tokens", sum(approx_tokens(m) for m in req.messages)),
                usage.get("completion_tokens", approx_tokens(entry["text"])),
            ),
            model_echo=req.model,
        )


class HttpProvider:
    """One chat-completion POST per call, with bounded retries on transient failures."""

    def __init__(
        self,
        base_url: str,
        api_key: str | None = None,
        auth_header: str = "Authorization",
        retries: int = 2,
        backoff: float = 1.0,
        timeout: float = 600.0,
        transport: httpx.BaseTransport | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        self.base_url = base_url.rstrip("/")
        self.retries = retries
        self.backoff = backoff
        self.sleep = sleep
        self.attempts = 0
        headers = {}
        if api_key:
            headers[auth_header] = f"Bearer {api_key}" if auth_header.lower() == "authorization" else api_key
        self.client = httpx.Client(headers=headers, timeout=timeout, transport=transport)

    @classmethod
    def from_env(cls, **kwargs) -> HttpProvider:
        base_url = os.environ.get(BASE_URL_ENV)
        if not base_url:
            raise ConfigError(BASE_URL_ENV, "set the provider base URL (or pass --transcript)")
        return cls(
            base_url,
            api_key=os.environ.get(API_KEY_ENV),
            auth_header=os.environ.get(AUTH_HEADER_ENV, "Authorization"),
            **kwargs,
        )

    def complete(self, req: ChatRequest) -> ChatResponse:
        payload = {
            "model": req.model,
            "messages": [{"role": "user", "content": m} for m in req.messages],
            "temperature": req.temperature,
            "top_p": req.top_p,
            "max_tokens": req.max_tokens,
        }
        last_error: TransportError | None = None
        for attempt in range(self.retries + 1):
            if attempt:
                self.sleep(self.backoff * 2 ** (attempt - 1))
            self.attempts += 1
            try:
                resp = self.client.post(f"{self.base_url}/chat/completions", json=payload)
            except httpx.TransportError as exc:
                last_error = TransportError(f"transport failure: {exc}")
                logger.warning("chat request attempt %d failed: %s", attempt + 1, exc)
                continue
            if resp.status_code in RETRYABLE_STATUS:
                last_error = TransportError(
                    f"HTTP {resp.status_code}", status=resp.status_code, body=resp.text[:500]
                )
                logger.warning("chat request attempt %d got HTTP %d", attempt + 1, resp.status_code)
                continue
            if resp.status_code >= 400:
                raise TransportError(
                    f"HTTP {resp.status_code}: {resp.text[:500]}", status=resp.status_code, body=resp.text[:500]
                )
            data = resp.json()
            usage = data.get("usage") or {}
            return ChatResponse(
                text=data["choices"][0]["message"]["content"] or "",
                usage=Usage(usage.get("prompt_tokens", 0), usage.get("completion_tokens", 0)),
                model_echo=data.get("model", req.model),
            )
        assert last_error is not None
        raise last_error


PriceTable = dict[str, tuple[float, float]]


def load_price_table(path: str | Path) -> PriceTable:
    """Read ``{model: [in_price, out_price]}`` or ``{model: {"input": .., "output": ..}}`` (dollars per token)."""
    try:
        raw = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError("price_table", f"cannot read {path}: {exc}") from exc
    return parse_price_table(raw)


def parse_price_table(raw: Any) -> PriceTable:
    if not isinstance(raw, dict):
        raise ConfigError("price_table", "expected an object keyed by model")
    table: PriceTable = {}
    for model, prices in raw.items():
        if isinstance(prices, dict):
            prices = (prices.get("input"), prices.get("output"))
        if not isinstance(prices, (list, tuple)) or len(prices) != 2 or not all(
            isinstance(p, (int, float)) and p >= 0 for p in prices
        ):
            raise ConfigError(f"price_table.{model}", "expected [in_price, out_price]")
        table[model] = (float(prices[0]), float(prices[1]))
    return table


def estimate_cost(usage: Usage, price_table: PriceTable, model: str) -> float:
    if model not in price_table:
        raise ConfigError(f"price_table.{model}", "no price for model")
    price_in, price_out = price_table[model]
    return usage.prompt_tokens * price_in + usage.completion_tokens * price_out


class LLMClient:
    """Role-aware front end: sampling per role, ledger charging, tracing."""

    def __init__(
        self,
        provider: Provider,
        cfg: SearchConfig,
        ledger: BudgetLedger,
        tracer=None,
        price_table: PriceTable | None = None,
    ):
        self.provider = provider
        self.cfg = cfg
        self.ledger = ledger
        self.tracer = tracer
        self.price_table = price_table
        self.calls = 0

    def build_request(self, role: str, prompt: str, purpose: str = "") -> ChatRequest:
        if role not in ROLES:
            raise ValueError(f"unknown role {role!r}")
        prof = self.cfg.profiles[role]
        return ChatRequest(
            role_profile=role,
            model=self.cfg.model_for(role),
            messages=[prompt],
            temperature=prof.temperature,
            top_p=prof.top_p,
            max_tokens=prof.max_tokens,
            purpose=purpose,
        )

    def chat(self, role: str, prompt: str, purpose: str = "") -> str:
        req = self.build_request(role, prompt, purpose)
        resp = self.provider.complete(req)
        self.calls += 1
        dollars = 0.0
        if self.price_table is not None:
            dollars = estimate_cost(resp.usage, self.price_table, req.model)
            price_in, price_out = self.price_table[req.model]
        else:
            price_in = price_out = 0.0
        self.ledger.charge_tokens(resp.usage.prompt_tokens, resp.usage.completion_tokens, price_in, price_out)
        if self.tracer is not None:
            self.tracer.emit(
                "llm_call",
                {
                    "role": role,
                    "purpose": purpose,
                    "model": req.model,
                    "model_echo": resp.model_echo,
                    "temperature": req.temperature,
                    "top_p": req.top_p,
                    "max_tokens": req.max_tokens,
                    "request_hash": req.request_hash(),
                    "response": resp.text,
                    "usage": asdict(resp.usage),
                    "dollars": dollars,
                },
            )
        return resp.text
