"""Definition records, the file dependence graph, splits and clone detection.

The corpus is line-delimited JSON: one definition record per line, with the
file-level dependence edges carried on the records themselves (``file_deps``
may repeat across lines of the same file; the union is used).
"""

from __future__ import annotations

import enum
import json
import random
import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable

from . import lang
from .lang import ProblemClass


class CorpusError(Exception):
    pass


class ParseError(CorpusError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class DuplicateId(CorpusError):
    def __init__(self, record_id: str):
        super().__init__(f"duplicate record id: {record_id}")
        self.record_id = record_id


class CycleDetected(CorpusError):
    def __init__(self, files: list[str]):
        super().__init__(f"dependence cycle through: {' -> '.join(files)}")
        self.files = files


class PremiseNotInScope(CorpusError):
    def __init__(self, record_id: str, name: str):
        super().__init__(f"record {record_id}: ideal premise {name!r} not in scope")
        self.record_id = record_id
        self.name = name


class UnknownFile(CorpusError):
    def __init__(self, file: str):
        super().__init__(f"unknown file: {file}")
        self.file = file


@dataclass
class DefinitionRecord:
    """One synthesis problem: a goal type with its context and metadata."""

    id: str
    project: str
    file: str
    goal_type: str
    prefix: str
    body: str
    file_context: list[str] = field(default_factory=list)
    ideal_premises: list[str] = field(default_factory=list)
    in_scope: list[str] = field(default_factory=list)
    problem_class: ProblemClass | None = None
    autogenerated: bool = False

    def to_json(self) -> dict:
        out = {
            "id": self.id,
            "project": self.project,
            "file": self.file,
            "goal_type": self.goal_type,
            "prefix": self.prefix,
            "body": self.body,
            "file_context": list(self.file_context),
            "ideal_premises": list(self.ideal_premises),
            "in_scope": list(self.in_scope),
            "autogenerated": self.autogenerated,
        }
        if self.problem_class is not None:
            out["class"] = self.problem_class.value
        return out


class DependenceGraph:
    """File-level DAG: an edge f -> g means file f depends on file g."""

    def __init__(self) -> None:
        self._deps: dict[str, set[str]] = {}
        self._rdeps: dict[str, set[str]] = {}

    @property
    def nodes(self) -> set[str]:
        return set(self._deps)

    def add_node(self, file: str) -> None:
        self._deps.setdefault(file, set())
        self._rdeps.setdefault(file, set())

    def add_edge(self, file: str, dep: str) -> None:
        self.add_node(file)
        self.add_node(dep)
        self._deps[file].add(dep)
        self._rdeps[dep].add(file)

    def deps(self, file: str) -> set[str]:
        if file not in self._deps:
            raise UnknownFile(file)
        return set(self._deps[file])

    def edge_count(self) -> int:
        return sum(len(d) for d in self._deps.values())

    def check_acyclic(self) -> None:
        """Raise CycleDetected naming one cycle if the graph is not a DAG."""
        WHITE, GRAY, BLACK = 0, 1, 2
        color = {f: WHITE for f in self._deps}
        stack_path: list[str] = []

        def visit(f: str) -> None:
            color[f] = GRAY
            stack_path.append(f)
            for d in sorted(self._deps[f]):
                if color[d] == GRAY:
                    cycle = stack_path[stack_path.index(d) :] + [d]
                    raise CycleDetected(cycle)
                if color[d] == WHITE:
                    visit(d)
            stack_path.pop()
            color[f] = BLACK

        for f in sorted(self._deps):
            if color[f] == WHITE:
                visit(f)

    def transitive_deps(self, file: str) -> set[str]:
        """All files ``file`` transitively depends on, excluding itself."""
        if file not in self._deps:
            raise UnknownFile(file)
        seen: set[str] = set()
        work = list(self._deps[file])
        while work:
            d = work.pop()
            if d in seen:
                continue
            seen.add(d)
            work.extend(self._deps.get(d, ()))
        seen.discard(file)
        return seen

    def dependents_closure(self, file: str) -> set[str]:
        """All files that transitively depend on ``file``, including itself."""
        if file not in self._rdeps:
            raise UnknownFile(file)
        seen = {file}
        work = list(self._rdeps[file])
        while work:
            d = work.pop()
            if d in seen:
                continue
            seen.add(d)
            work.extend(self._rdeps.get(d, ()))
        return seen

    def topological_depths(self) -> dict[str, int]:
        """Depth 0 for files with no dependencies; otherwise 1 + max dep depth."""
        self.check_acyclic()
        depth: dict[str, int] = {}

        def compute(f: str) -> int:
            if f in depth:
                return depth[f]
            ds = self._deps[f]
            depth[f] = 0 if not ds else 1 + max(compute(d) for d in sorted(ds))
            return depth[f]

        for f in sorted(self._deps):
            compute(f)
        return depth


def dependents_closure(graph: DependenceGraph, file: str) -> set[str]:
    """Module-level alias; the complement defines retrieval eligibility."""
    return graph.dependents_closure(file)


REQUIRED_FIELDS = ("id", "project", "file", "goal_type", "prefix", "body")


def _record_from_json(obj: dict, line_no: int) -> DefinitionRecord:
    for f in REQUIRED_FIELDS:
        if f not in obj:
            raise ParseError(line_no, f"missing field {f!r}")
    cls = None
    if obj.get("class") is not None:
        try:
            cls = ProblemClass(obj["class"])
        except ValueError:
            raise ParseError(line_no, f"unknown class {obj['class']!r}") from None
    return DefinitionRecord(
        id=obj["id"],
        project=obj["project"],
        file=obj["file"],
        goal_type=obj["goal_type"],
        prefix=obj["prefix"],
        body=obj["body"],
        file_context=list(obj.get("file_context", [])),
        ideal_premises=list(obj.get("ideal_premises", [])),
        in_scope=list(obj.get("in_scope", [])),
        problem_class=cls,
        autogenerated=bool(obj.get("autogenerated", False)),
    )


def load_corpus(path: str | Path) -> tuple[list[DefinitionRecord], DependenceGraph]:
    """Load records and the dependence graph, validating corpus invariants."""
    records: list[DefinitionRecord] = []
    graph = DependenceGraph()
    seen_ids: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise ParseError(line_no, str(e)) from None
            rec = _record_from_json(obj, line_no)
            if not rec.goal_type.strip():
                raise ParseError(line_no, f"record {rec.id}: empty goal_type")
            if rec.id in seen_ids:
                raise DuplicateId(rec.id)
            seen_ids.add(rec.id)
            graph.add_node(rec.file)
            for dep in obj.get("file_deps", []):
                graph.add_edge(rec.file, dep)
            records.append(rec)

    for rec in records:
        scope = set(rec.in_scope)
        for name in rec.ideal_premises:
            if name not in scope:
                raise PremiseNotInScope(rec.id, name)
    graph.check_acyclic()

    for rec in records:
        if rec.problem_class is None:
            if rec.autogenerated:
                rec.problem_class = ProblemClass.AUTO_GENERATED
            else:
                rec.problem_class = lang.classify_type(rec.goal_type)
    return records, graph


def save_corpus(records: list[DefinitionRecord], graph: DependenceGraph, path: str | Path) -> None:
    """Write line-delimited JSON; file_deps are emitted on each file's first record."""
    emitted_files: set[str] = set()
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            obj = rec.to_json()
            if rec.file not in emitted_files:
                obj["file_deps"] = sorted(graph.deps(rec.file)) if rec.file in graph.nodes else []
                emitted_files.add(rec.file)
            fh.write(json.dumps(obj, sort_keys=True) + "\n")


def validate_records(records: list[DefinitionRecord]) -> list[str]:
    """Soft invariant checks, reported rather than raised.

    Flags ideal premises that do not occur in the body, or that occur in the
    goal type (the selection objective excludes those by construction).
    """
    problems = []
    for rec in records:
        if not rec.body:
            continue
        body_ids = lang.extract_identifiers(rec.body)
        body_shorts = {lang.short_name(i) for i in body_ids}
        type_ids = lang.extract_identifiers(rec.goal_type)
        type_shorts = {lang.short_name(i) for i in type_ids}
        for name in rec.ideal_premises:
            short = lang.short_name(name)
            if name not in body_ids and short not in body_shorts:
                problems.append(f"{rec.id}: premise {name!r} does not occur in the body")
            elif name in type_ids or short in type_shorts:
                problems.append(f"{rec.id}: premise {name!r} occurs in the goal type")
    return problems


class Split(enum.Enum):
    TRAIN = "train"
    VALID = "valid"
    INTRA_TEST = "intra_test"
    CROSS_TEST = "cross_test"


@dataclass
class SplitAssignment:
    by_file: dict[str, Split]
    cross_projects: set[str]

    def files(self, split: Split) -> set[str]:
        return {f for f, s in self.by_file.items() if s is split}

    def split_of(self, file: str) -> Split:
        if file not in self.by_file:
            raise UnknownFile(file)
        return self.by_file[file]


def _stable_int(*parts: object) -> int:
    digest = hashlib.sha256("|".join(str(p) for p in parts).encode()).digest()
    return int.from_bytes(digest[:8], "little")


def make_splits(
    graph: DependenceGraph,
    file_projects: dict[str, str],
    cross_projects: set[str],
    fractions: tuple[float, float, float],
    seed: int,
) -> SplitAssignment:
    """Assign every file to a split, keeping Train dependence-closed.

    Cross-project files go to CrossTest. The rest are ordered by topological
    depth (roots first) with a seeded shuffle within equal depth; Train grows
    by whole dependence closures until its fraction of the non-cross files is
    met, skipping closures that would touch cross-project files. The next
    fraction becomes Valid and the remainder IntraTest.
    """
    train_frac, valid_frac, intra_frac = fractions
    if min(train_frac, valid_frac, intra_frac) <= 0:
        raise ValueError("fractions must be positive")
    if train_frac + valid_frac + intra_frac > 1.0 + 1e-9:
        raise ValueError("fractions must sum to at most 1")

    depths = graph.topological_depths()  # raises CycleDetected on cycles
    nodes = sorted(graph.nodes)
    cross_files = {f for f in nodes if file_projects.get(f) in cross_projects}
    rest = [f for f in nodes if f not in cross_files]

    rng = random.Random(seed)
    shuffled = list(rest)
    rng.shuffle(shuffled)
    order = sorted(shuffled, key=lambda f: depths[f])  # stable: keeps shuffle within depth

    by_file: dict[str, Split] = {f: Split.CROSS_TEST for f in cross_files}
    train: set[str] = set()
    train_target = train_frac * len(rest)
    for f in order:
        if len(train) >= train_target:
            break
        if f in train:
            continue
        closure = graph.transitive_deps(f) | {f}
        if closure & cross_files:
            continue
        train |= closure
    for f in train:
        by_file[f] = Split.TRAIN

    remaining = [f for f in order if f not in train]
    valid_target = valid_frac * len(rest)
    valid_count = 0
    for f in remaining:
        if valid_count >= valid_target:
            by_file[f] = Split.INTRA_TEST
        else:
            by_file[f] = Split.VALID
            valid_count += 1
    return SplitAssignment(by_file=by_file, cross_projects=set(cross_projects))


def validate_splits(
    assignment: SplitAssignment,
    graph: DependenceGraph,
    file_projects: dict[str, str],
) -> list[str]:
    """Return human-readable violations of the split invariants (empty if ok)."""
    problems = []
    for f in sorted(graph.nodes):
        if f not in assignment.by_file:
            problems.append(f"file {f!r} has no split assignment")
    train = assignment.files(Split.TRAIN)
    for f in sorted(train):
        if f not in graph.nodes:
            continue
        missing = graph.transitive_deps(f) - train
        for m in sorted(missing):
            problems.append(f"closure violation: train file {f!r} depends on non-train {m!r}")
    for f, split in sorted(assignment.by_file.items()):
        is_cross_project = file_projects.get(f) in assignment.cross_projects
        if is_cross_project and split is not Split.CROSS_TEST:
            problems.append(f"cross-project file {f!r} assigned to {split.value}")
        if not is_cross_project and split is Split.CROSS_TEST:
            problems.append(f"non-cross-project file {f!r} assigned to cross_test")
    return problems


def load_split_labels(path: str | Path, cross_projects: Iterable[str]) -> SplitAssignment:
    """Read a JSON object mapping file -> split label."""
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    by_file = {f: Split(v) for f, v in raw.items()}
    return SplitAssignment(by_file=by_file, cross_projects=set(cross_projects))


def save_split_labels(assignment: SplitAssignment, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {f: s.value for f, s in sorted(assignment.by_file.items())},
            fh,
            indent=2,
            sort_keys=True,
        )
        fh.write("\n")


TEST_SPLITS = (Split.INTRA_TEST, Split.CROSS_TEST)


def clone_report(
    records: list[DefinitionRecord], splits: SplitAssignment
) -> list[tuple[str, str]]:
    """(train_id, test_id) pairs whose bodies are clones across the split line."""
    by_form: dict[tuple[str, ...], list[tuple[str, Split]]] = {}
    for rec in records:
        if not rec.body.strip():
            continue
        split = splits.split_of(rec.file)
        form = tuple(lang.normalize_body(rec.body, rec.id))
        by_form.setdefault(form, []).append((rec.id, split))

    pairs = []
    for members in by_form.values():
        train_ids = sorted(i for i, s in members if s is Split.TRAIN)
        test_ids = sorted(i for i, s in members if s in TEST_SPLITS)
        for t in train_ids:
            for x in test_ids:
                pairs.append((t, x))
    return sorted(pairs)
