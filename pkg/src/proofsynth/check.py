"""Candidate verification: escape-hatch screening, checker protocol client,
and staged error classification.

The checker is an external process speaking line-delimited JSON over stdio:

    -> {"op": "init", "file": ..., "defn_id": ..., "options": {...}}
    <- {"status": "ready"}
    -> {"op": "check", "id": ..., "source": ...}
    <- {"id": ..., "status": "success"|"failure", "errors": [...], "wall_ms": n}
    -> {"op": "shutdown"}

Each error is {"code": int, "stage": "parse"|"resolve"|"typecheck",
"message": str, "range": [sl, sc, el, ec]}. A response timeout yields a
Failed verdict with a synthetic typecheck error; a process crash yields
CheckerUnavailable after one restart-and-resend attempt.
"""

from __future__ import annotations

import enum
import json
import queue
import subprocess
import threading
from dataclasses import dataclass, field
from typing import Sequence

from .lang import TokenKind, tokenize


class CheckFailure(Exception):
    pass


class ProtocolError(CheckFailure):
    """The checker sent something outside the wire contract."""


ESCAPE_HATCHES = frozenset({"admit", "assume", "magic", "tadmit"})


@dataclass(frozen=True)
class ScreenHit:
    token: str
    line: int
    col: int


def screen_escape_hatches(candidate_text: str) -> ScreenHit | None:
    """Token-exact scan for escape hatches; None means the candidate passes."""
    for tok in tokenize(candidate_text):
        if tok.kind in (TokenKind.IDENTIFIER, TokenKind.KEYWORD) and tok.text in ESCAPE_HATCHES:
            return ScreenHit(token=tok.text, line=tok.line, col=tok.col)
    return None


class CheckStatus(enum.Enum):
    VERIFIED = "verified"
    FAILED = "failed"
    SCREENED = "screened"
    CHECKER_UNAVAILABLE = "checker_unavailable"


class ErrorStage(enum.Enum):
    PARSE = "parse"
    RESOLVE = "resolve"
    TYPECHECK = "typecheck"


class ErrorClass(enum.Enum):
    SYNTAX = "syntax"
    IDENTIFIER_NOT_FOUND = "identifier_not_found"
    SEMANTIC = "semantic"


@dataclass(frozen=True)
class CheckError:
    stage: ErrorStage
    code: int
    message: str
    range: tuple[int, int, int, int] = (0, 0, 0, 0)

    def to_json(self) -> dict:
        return {
            "stage": self.stage.value,
            "code": self.code,
            "message": self.message,
            "range": list(self.range),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CheckError":
        rng = obj.get("range") or [0, 0, 0, 0]
        return cls(
            stage=ErrorStage(obj.get("stage", "typecheck")),
            code=int(obj.get("code", 0)),
            message=str(obj.get("message", "")),
            range=tuple(int(x) for x in rng),
        )


@dataclass(frozen=True)
class CheckVerdict:
    candidate_ref: tuple[str, int]
    status: CheckStatus
    errors: tuple[CheckError, ...] = ()
    wall_ms: int = 0

    def to_json(self) -> dict:
        return {
            "example_id": self.candidate_ref[0],
            "sample_index": self.candidate_ref[1],
            "status": self.status.value,
            "errors": [e.to_json() for e in self.errors],
            "wall_ms": self.wall_ms,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CheckVerdict":
        return cls(
            candidate_ref=(obj["example_id"], int(obj["sample_index"])),
            status=CheckStatus(obj["status"]),
            errors=tuple(CheckError.from_json(e) for e in obj.get("errors", [])),
            wall_ms=int(obj.get("wall_ms", 0)),
        )


def screened_verdict(example_id: str, sample_index: int, hit: ScreenHit) -> CheckVerdict:
    error = CheckError(
        stage=ErrorStage.PARSE,
        code=0,
        message=f"escape hatch {hit.token!r}",
        range=(hit.line, hit.col, hit.line, hit.col + len(hit.token)),
    )
    return CheckVerdict(
        candidate_ref=(example_id, sample_index),
        status=CheckStatus.SCREENED,
        errors=(error,),
    )


IDENT_NOT_FOUND_MARKER = "Identifier not found"


def classify_error(verdict: CheckVerdict) -> ErrorClass:
    """Three-way classification of a Failed verdict, by staged priority."""
    if verdict.status is not CheckStatus.FAILED or not verdict.errors:
        raise ValueError("classify_error needs a Failed verdict with errors")
    if any(e.stage is ErrorStage.PARSE for e in verdict.errors):
        return ErrorClass.SYNTAX
    if any(
        e.stage is ErrorStage.RESOLVE or IDENT_NOT_FOUND_MARKER in e.message
        for e in verdict.errors
    ):
        return ErrorClass.IDENTIFIER_NOT_FOUND
    return ErrorClass.SEMANTIC


DEFAULT_TIMEOUT_S = 120.0

_EOF = object()


class CheckerClient:
    """Single-owner client driving one checker process.

    Not thread-safe: each worker owns one client. The client restarts the
    process after crashes and timeouts, replaying the last init.
    """

    def __init__(self, command: Sequence[str], timeout_s: float = DEFAULT_TIMEOUT_S):
        self.command = list(command)
        self.timeout_s = timeout_s
        self._proc: subprocess.Popen | None = None
        self._lines: queue.Queue = queue.Queue()
        self._last_init: dict | None = None

    # -- process plumbing --------------------------------------------------

    def _reader(self, proc: subprocess.Popen) -> None:
        assert proc.stdout is not None
        for line in proc.stdout:
            self._lines.put(line)
        self._lines.put(_EOF)

    def _spawn(self) -> None:
        self._lines = queue.Queue()
        self._proc = subprocess.Popen(
            self.command,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            text=True,
            bufsize=1,
        )
        threading.Thread(target=self._reader, args=(self._proc,), daemon=True).start()

    def _kill(self) -> None:
        if self._proc is not None:
            self._proc.kill()
            self._proc.wait()
            self._proc = None

    def _send(self, obj: dict) -> bool:
        if self._proc is None or self._proc.stdin is None:
            return False
        try:
            self._proc.stdin.write(json.dumps(obj) + "\n")
            self._proc.stdin.flush()
            return True
        except (BrokenPipeError, OSError, ValueError):
            return False

    def _read_response(self) -> dict | None:
        """Next JSON line; None on crash/EOF; ProtocolError on garbage;
        TimeoutError on silence."""
        try:
            line = self._lines.get(timeout=self.timeout_s)
        except queue.Empty:
            raise TimeoutError
        if line is _EOF:
            return None
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            raise ProtocolError(f"not JSON: {line!r}") from None
        if not isinstance(obj, dict):
            raise ProtocolError(f"expected object, got: {line!r}")
        return obj

    # -- protocol ----------------------------------------------------------

    def init(self, file: str, defn_id: str, options: dict | None = None) -> None:
        """Initialize (or re-initialize) the session at a definition's position."""
        self._last_init = {"file": file, "defn_id": defn_id, "options": options or {}}
        if self._proc is None:
            self._spawn()
        self._init_current_session()

    def _init_current_session(self) -> None:
        assert self._last_init is not None
        ok = self._send({"op": "init", **self._last_init})
        response = self._read_response() if ok else None
        if response is None:
            raise CheckFailure("checker process died during init")
        if response.get("status") != "ready":
            raise ProtocolError(f"init not acknowledged: {response}")

    def _restart(self) -> bool:
        self._kill()
        self._spawn()
        try:
            self._init_current_session()
            return True
        except CheckFailure:
            return False

    def check(self, example_id: str, sample_index: int, source: str) -> CheckVerdict:
        """Check one candidate; never raises for timeouts or crashes."""
        if self._last_init is None:
            raise CheckFailure("init must be called before check")
        ref = (example_id, sample_index)
        wire_id = f"{example_id}#{sample_index}"
        message = {"op": "check", "id": wire_id, "source": source}

        for attempt in range(2):
            sent = self._proc is not None and self._send(message)
            response: dict | None = None
            if sent:
                try:
                    response = self._read_response()
                except TimeoutError:
                    self._restart()
                    return CheckVerdict(
                        candidate_ref=ref,
                        status=CheckStatus.FAILED,
                        errors=(
                            CheckError(
                                stage=ErrorStage.TYPECHECK,
                                code=-1,
                                message="timeout",
                            ),
                        ),
                        wall_ms=int(self.timeout_s * 1000),
                    )
            if response is not None:
                return self._parse_verdict(response, ref, wire_id)
            # crash: restart the session and resend once
            if attempt == 0 and not self._restart():
                break
        return CheckVerdict(candidate_ref=ref, status=CheckStatus.CHECKER_UNAVAILABLE)

    def _parse_verdict(self, response: dict, ref: tuple[str, int], wire_id: str) -> CheckVerdict:
        if response.get("id") != wire_id or "status" not in response:
            raise ProtocolError(f"unexpected response: {response}")
        status = response["status"]
        if status == "success":
            return CheckVerdict(
                candidate_ref=ref,
                status=CheckStatus.VERIFIED,
                wall_ms=int(response.get("wall_ms", 0)),
            )
        if status == "failure":
            try:
                errors = tuple(CheckError.from_json(e) for e in response.get("errors", []))
            except (ValueError, TypeError, AttributeError):
                raise ProtocolError(f"bad errors payload: {response}") from None
            return CheckVerdict(
                candidate_ref=ref,
                status=CheckStatus.FAILED,
                errors=errors,
                wall_ms=int(response.get("wall_ms", 0)),
            )
        raise ProtocolError(f"unknown status: {status!r}")

    def shutdown(self) -> None:
        if self._proc is not None:
            self._send({"op": "shutdown"})
            try:
                self._proc.wait(timeout=2)
            except subprocess.TimeoutExpired:
                pass
            self._kill()

    def __enter__(self) -> "CheckerClient":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()


@dataclass(frozen=True)
class CheckItem:
    example_id: str
    sample_index: int
    file: str
    defn_id: str
    source: str


class CheckerPool:
    """N workers, one checker process each; at-most-once verdict per candidate.

    Clients persist across run() calls; results come back as a dict keyed by
    candidate_ref, so callers can order them deterministically regardless of
    worker scheduling.
    """

    def __init__(
        self,
        command: Sequence[str],
        size: int = 1,
        timeout_s: float = DEFAULT_TIMEOUT_S,
        init_options: dict | None = None,
    ):
        if size < 1:
            raise ValueError("pool size must be >= 1")
        self.command = list(command)
        self.size = size
        self.timeout_s = timeout_s
        self.init_options = init_options or {}
        self._idle: queue.Queue = queue.Queue()
        self._created = 0
        self._create_lock = threading.Lock()

    def _acquire(self) -> CheckerClient:
        try:
            return self._idle.get_nowait()
        except queue.Empty:
            pass
        with self._create_lock:
            if self._created < self.size:
                self._created += 1
                return CheckerClient(self.command, timeout_s=self.timeout_s)
        return self._idle.get()

    def run(self, items: Sequence[CheckItem]) -> dict[tuple[str, int], CheckVerdict]:
        results: dict[tuple[str, int], CheckVerdict] = {}
        results_lock = threading.Lock()
        work: queue.Queue = queue.Queue()
        seen: set[tuple[str, int]] = set()
        for item in items:
            ref = (item.example_id, item.sample_index)
            if ref in seen:
                continue
            seen.add(ref)
            work.put(item)
        failures: list[Exception] = []

        def worker() -> None:
            client = self._acquire()
            try:
                while True:
                    try:
                        item = work.get_nowait()
                    except queue.Empty:
                        return
                    client.init(item.file, item.defn_id, self.init_options)
                    verdict = client.check(item.example_id, item.sample_index, item.source)
                    with results_lock:
                        results.setdefault(verdict.candidate_ref, verdict)
            except Exception as e:  # surface worker failures to the caller
                failures.append(e)
            finally:
                self._idle.put(client)

        threads = [
            threading.Thread(target=worker, daemon=True)
            for _ in range(min(self.size, max(1, work.qsize())))
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        if failures:
            raise failures[0]
        return results

    def shutdown(self) -> None:
        while True:
            try:
                client = self._idle.get_nowait()
            except queue.Empty:
                break
            client.shutdown()

    def __enter__(self) -> "CheckerPool":
        return self

    def __exit__(self, *exc) -> None:
        self.shutdown()
