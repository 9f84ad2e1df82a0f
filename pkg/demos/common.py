"""Shared fixture corpus for the demo scripts: a miniature project tree with
four files, realistic dependence edges, and ideal-premise metadata."""

import json

from proofsynth.corpus import DefinitionRecord


def demo_records():
    return [
        DefinitionRecord(
            id="Base.id", project="demo", file="base.fst",
            goal_type="nat -> nat", prefix="let id =", body="let id x = x",
            file_context=["open Prims"],
        ),
        DefinitionRecord(
            id="Base.add", project="demo", file="base.fst",
            goal_type="int -> int -> int", prefix="let add =",
            body="let add x y = x + y",
            file_context=["open Prims", "let id x = x"],
        ),
        DefinitionRecord(
            id="List.length", project="demo", file="list.fst",
            goal_type="list 'a -> nat", prefix="let rec length =",
            body="let rec length l = match l with | [] -> 0 | _ :: t -> 1 + length t",
            file_context=["open Base"],
        ),
        DefinitionRecord(
            id="List.append_len", project="demo", file="list.fst",
            goal_type=(
                "l:list 'a -> m:list 'a -> "
                "Lemma (ensures (length (append l m) = add (length l) (length m)))"
            ),
            prefix="let rec append_len =",
            body=(
                "let rec append_len l m = match l with "
                "| [] -> () | _ :: t -> append_len t m"
            ),
            file_context=["open Base", "let rec length l = ..."],
            ideal_premises=["List.length", "Base.add"],
            in_scope=["List.length", "Base.add", "Base.id", "Base.unused"],
        ),
        DefinitionRecord(
            id="App.twice", project="demo", file="app.fst",
            goal_type="int -> int", prefix="let twice =",
            body="let twice x = add x x",
            file_context=["open Base"],
            ideal_premises=["Base.add"],
            in_scope=["Base.add", "Base.id", "List.length", "Base.unused"],
        ),
        DefinitionRecord(
            id="Other.double_len", project="otherproj", file="other.fst",
            goal_type="list 'a -> nat", prefix="let double_len =",
            body="let double_len l = add (length l) (length l)",
            file_context=["open List"],
            ideal_premises=["List.length", "Base.add"],
            in_scope=["List.length", "Base.add", "Base.unused"],
        ),
    ]


DEMO_DEPS = {
    "list.fst": ["base.fst"],
    "app.fst": ["base.fst", "list.fst"],
    "other.fst": ["base.fst", "list.fst"],
}

DEMO_LABELS = {
    "base.fst": "train",
    "list.fst": "train",
    "app.fst": "intra_test",
    "other.fst": "cross_test",
}


def write_demo_corpus(directory):
    """Write corpus.jsonl + splits.json into directory; returns their paths."""
    directory.mkdir(parents=True, exist_ok=True)
    corpus_path = directory / "corpus.jsonl"
    emitted = set()
    with open(corpus_path, "w", encoding="utf-8") as fh:
        for rec in demo_records():
            obj = rec.to_json()
            if rec.file not in emitted:
                obj["file_deps"] = DEMO_DEPS.get(rec.file, [])
                emitted.add(rec.file)
            fh.write(json.dumps(obj) + "\n")
    splits_path = directory / "splits.json"
    splits_path.write_text(json.dumps(DEMO_LABELS, indent=2))
    return corpus_path, splits_path
