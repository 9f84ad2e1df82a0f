"""Scripted stand-in for the real type checker, for offline runs and tests.

Run as ``python -m proofsynth.stubcheck --script verdicts.ldjson``. The script
is line-delimited JSON keyed by the sha256 hex of the candidate source:

    {"source_hash": "...", "status": "success", "wall_ms": 3}
    {"source_hash": "...", "status": "failure",
     "errors": [{"code": 12, "stage": "parse", "message": "...", "range": [1,1,1,2]}]}
    {"source_hash": "...", "action": "crash", "times": 1, "status": "success"}
    {"source_hash": "...", "action": "malformed"}
    {"source_hash": "...", "action": "hang", "hang_s": 5}
    {"default": true, "status": "failure", "errors": [...]}

Fault actions fire while their ``times`` budget lasts (default 1), then the
entry's ordinary verdict fields apply; crash counters survive restarts in a
small JSON state sidecar (``--state``, default <script>.state). ``--call-log``
appends one line per check request, which lets tests assert that screened
candidates were never sent here.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time


def load_script(path: str) -> tuple[dict[str, dict], dict]:
    table: dict[str, dict] = {}
    default = {"status": "failure", "errors": [
        {"code": 999, "stage": "typecheck", "message": "no scripted verdict", "range": [0, 0, 0, 0]}
    ], "wall_ms": 0}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            entry = json.loads(line)
            if entry.get("default"):
                default = entry
            else:
                table[entry["source_hash"]] = entry
    return table, default


def load_state(path: str) -> dict:
    if os.path.exists(path):
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    return {}


def save_state(path: str, state: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(state, fh)
        fh.flush()
        os.fsync(fh.fileno())


def reply(obj: dict) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(prog="stubcheck")
    parser.add_argument("--script", required=True)
    parser.add_argument("--state", default=None)
    parser.add_argument("--call-log", default=None)
    args = parser.parse_args(argv)

    table, default = load_script(args.script)
    state_path = args.state or (args.script + ".state")

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        msg = json.loads(line)
        op = msg.get("op")
        if op == "init":
            reply({"status": "ready"})
        elif op == "shutdown":
            reply({"status": "bye"})
            return 0
        elif op == "check":
            source_hash = hashlib.sha256(msg.get("source", "").encode()).hexdigest()
            if args.call_log:
                with open(args.call_log, "a", encoding="utf-8") as fh:
                    fh.write(json.dumps({"id": msg.get("id"), "source_hash": source_hash}) + "\n")
            entry = table.get(source_hash, default)
            action = entry.get("action")
            if action:
                state = load_state(state_path)
                fired = state.get(source_hash, 0)
                if fired < entry.get("times", 1):
                    state[source_hash] = fired + 1
                    save_state(state_path, state)
                    if action == "crash":
                        os._exit(1)
                    elif action == "malformed":
                        sys.stdout.write("this is not a protocol line\n")
                        sys.stdout.flush()
                        continue
                    elif action == "hang":
                        time.sleep(float(entry.get("hang_s", 3600)))
            reply(
                {
                    "id": msg.get("id"),
                    "status": entry.get("status", "failure"),
                    "errors": entry.get("errors", []),
                    "wall_ms": entry.get("wall_ms", 0),
                }
            )
        else:
            reply({"status": "error", "message": f"unknown op {op!r}"})
    return 0


if __name__ == "__main__":
    sys.exit(main())
