"""Text-generation clients: a remote service contract and a deterministic mock.

``generate`` always returns exactly k candidates in sample order. Transient
failures are retried with exponential backoff; when retries run out, the
missing slots are filled with finish_reason=Error candidates instead of
aborting, so downstream metrics keep stable denominators.
"""

from __future__ import annotations

import enum
import hashlib
import json
import os
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol


class GenerationError(Exception):
    pass


class AuthError(GenerationError):
    """Non-retryable: the service rejected our credentials."""


class BudgetExceeded(GenerationError):
    """The configured spend cap would be exceeded by this request."""


class TransientGenerationError(GenerationError):
    """Retryable failure (rate limit, 5xx, connection trouble)."""


class FinishReason(enum.Enum):
    STOP = "stop"
    LENGTH = "length"
    ERROR = "error"


@dataclass(frozen=True)
class GenerationRequest:
    example_id: str
    prompt_text: str
    sample_count: int
    temperature: float = 0.8
    max_tokens: int = 500
    stop_sequences: tuple[str, ...] = ()
    model_id: str = "unknown"

    def __post_init__(self):
        if self.sample_count < 1:
            raise ValueError("sample_count must be >= 1")
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be >= 1")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")


@dataclass(frozen=True)
class Candidate:
    example_id: str
    sample_index: int
    text: str
    finish_reason: FinishReason


class GenerationClient(Protocol):
    def complete(self, request: GenerationRequest) -> list[Candidate]: ...


MAX_ATTEMPTS = 5
BACKOFF_BASE_S = 1.0
BACKOFF_FACTOR = 2.0


def generate(
    client: GenerationClient,
    request: GenerationRequest,
    sleep: Callable[[float], None] = time.sleep,
    max_attempts: int = MAX_ATTEMPTS,
) -> list[Candidate]:
    """Call the client, retrying transient failures; always k candidates.

    AuthError and BudgetExceeded propagate. Anything still failing after
    ``max_attempts`` degrades to Error-candidates for the missing slots.
    """
    candidates: list[Candidate] = []
    for attempt in range(max_attempts):
        try:
            candidates = client.complete(request)
            break
        except (AuthError, BudgetExceeded):
            raise
        except TransientGenerationError:
            if attempt + 1 < max_attempts:
                sleep(BACKOFF_BASE_S * (BACKOFF_FACTOR**attempt))
    k = request.sample_count
    out = list(candidates[:k])
    for i in range(len(out), k):
        out.append(
            Candidate(
                example_id=request.example_id,
                sample_index=i,
                text="",
                finish_reason=FinishReason.ERROR,
            )
        )
    return out


def _digest(*parts: object) -> str:
    return hashlib.sha256("|".join(str(p) for p in parts).encode()).hexdigest()


class PlantMode(enum.Enum):
    NONE = "none"
    GROUND_TRUTH_AT_0 = "ground_truth_at_0"
    ALL_BROKEN = "all_broken"
    UNKNOWN_IDENTIFIER_AT_0 = "unknown_identifier_at_0"


@dataclass
class MockGenerationClient:
    """Deterministic offline generator with plantable outcomes.

    Filler texts are derived from hash(seed, prompt, index); plant modes let
    end-to-end tests force a ground-truth copy, a syntax-broken candidate, or
    a candidate using an unresolvable identifier at sample 0.
    """

    seed: int = 0
    plant_mode: PlantMode = PlantMode.NONE
    ground_truths: dict[str, str] = field(default_factory=dict)

    def _filler(self, prompt_text: str, index: int) -> str:
        h = _digest(self.seed, prompt_text, index)
        return f"let mock_{h[:12]} x = x + {int(h[:6], 16) % 997}"

    def _broken(self, prompt_text: str, index: int) -> str:
        h = _digest(self.seed, prompt_text, index)
        return f"let mock_{h[:12]} = ("

    def _unknown_ident(self, prompt_text: str, index: int) -> str:
        h = _digest(self.seed, prompt_text, index)
        return f"let mock_{h[:12]} x = totally_undefined_{h[12:20]} x"

    def complete(self, request: GenerationRequest) -> list[Candidate]:
        out = []
        for i in range(request.sample_count):
            if self.plant_mode is PlantMode.ALL_BROKEN:
                text = self._broken(request.prompt_text, i)
            elif (
                self.plant_mode is PlantMode.GROUND_TRUTH_AT_0
                and i == 0
                and request.example_id in self.ground_truths
            ):
                text = self.ground_truths[request.example_id]
            elif self.plant_mode is PlantMode.UNKNOWN_IDENTIFIER_AT_0 and i == 0:
                text = self._unknown_ident(request.prompt_text, i)
            else:
                text = self._filler(request.prompt_text, i)
            out.append(
                Candidate(
                    example_id=request.example_id,
                    sample_index=i,
                    text=text,
                    finish_reason=FinishReason.STOP,
                )
            )
        return out


def mock_generate(
    seed: int,
    prompt_text: str,
    k: int,
    example_id: str = "",
    plant_mode: PlantMode = PlantMode.NONE,
    ground_truths: dict[str, str] | None = None,
) -> list[Candidate]:
    """Convenience wrapper over MockGenerationClient for one-off calls."""
    client = MockGenerationClient(
        seed=seed, plant_mode=plant_mode, ground_truths=ground_truths or {}
    )
    request = GenerationRequest(example_id=example_id, prompt_text=prompt_text, sample_count=k)
    return client.complete(request)


Transport = Callable[[str, str, dict], dict]


def _requests_transport(endpoint: str, api_key: str, payload: dict) -> dict:
    import requests

    resp = requests.post(
        endpoint,
        json=payload,
        headers={"Authorization": f"Bearer {api_key}"},
        timeout=120,
    )
    if resp.status_code in (401, 403):
        raise AuthError(f"generation service returned {resp.status_code}")
    if resp.status_code == 429 or resp.status_code >= 500:
        raise TransientGenerationError(f"generation service returned {resp.status_code}")
    resp.raise_for_status()
    return resp.json()


_FINISH_MAP = {"stop": FinishReason.STOP, "length": FinishReason.LENGTH}


class RemoteGenerationClient:
    """Client for a completion-style service.

    Wire contract: request {model, prompt, n, temperature, max_tokens, stop}
    answered by {choices: [{text, finish_reason}]}. Endpoint and key come from
    GEN_ENDPOINT / GEN_API_KEY unless given. Every request/response pair is
    appended to a line-delimited JSON transcript for audit and replay. An
    internal semaphore caps in-flight requests; a token spend cap, measured as
    sum over requests of n * max_tokens, raises BudgetExceeded before sending.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        api_key: str | None = None,
        transport: Transport | None = None,
        transcript_path: str | Path | None = None,
        max_in_flight: int = 4,
        spend_cap_tokens: int | None = None,
    ):
        self.endpoint = endpoint or os.environ.get("GEN_ENDPOINT", "")
        self.api_key = api_key or os.environ.get("GEN_API_KEY", "")
        self.transport = transport or _requests_transport
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self._limiter = threading.BoundedSemaphore(max_in_flight)
        self.spend_cap_tokens = spend_cap_tokens
        self._spent_tokens = 0
        self._spend_lock = threading.Lock()
        self._transcript_lock = threading.Lock()

    def _charge(self, amount: int) -> None:
        if self.spend_cap_tokens is None:
            return
        with self._spend_lock:
            if self._spent_tokens + amount > self.spend_cap_tokens:
                raise BudgetExceeded(
                    f"spend cap {self.spend_cap_tokens} tokens would be exceeded"
                )
            self._spent_tokens += amount

    def _log(self, payload: dict, response: dict) -> None:
        if self.transcript_path is None:
            return
        line = json.dumps({"request": payload, "response": response}, sort_keys=True)
        with self._transcript_lock:
            with open(self.transcript_path, "a", encoding="utf-8") as fh:
                fh.write(line + "\n")

    def complete(self, request: GenerationRequest) -> list[Candidate]:
        self._charge(request.sample_count * request.max_tokens)
        payload = {
            "model": request.model_id,
            "prompt": request.prompt_text,
            "n": request.sample_count,
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
            "stop": list(request.stop_sequences),
        }
        with self._limiter:
            response = self.transport(self.endpoint, self.api_key, payload)
        self._log(payload, response)
        choices = response.get("choices")
        if choices is None:
            raise TransientGenerationError("malformed response: no choices")
        out = []
        for i, choice in enumerate(choices[: request.sample_count]):
            out.append(
                Candidate(
                    example_id=request.example_id,
                    sample_index=i,
                    text=choice.get("text", ""),
                    finish_reason=_FINISH_MAP.get(
                        choice.get("finish_reason", ""), FinishReason.ERROR
                    ),
                )
            )
        return out
