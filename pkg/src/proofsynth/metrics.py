"""Scoring and analytics over run reports.

A report is one line-delimited JSON file: a header line with run metadata
followed by one outcome line per example. Outcomes carry the verdicts in
sample order plus, when available, the candidate texts and the ground-truth
body so edit-distance and overlap analytics are self-contained.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .check import CheckStatus, CheckVerdict, ErrorClass, classify_error
from .lang import ProblemClass, content_tokens, extract_identifiers
from .prompt import Component, PromptBundle


class MetricsError(Exception):
    pass


class EmptyReport(MetricsError):
    pass


class MismatchedExampleSets(MetricsError):
    pass


class EmptyGroundTruth(MetricsError):
    def __init__(self, example_id: str):
        super().__init__(f"no usable ground truth for {example_id}")
        self.example_id = example_id


class MissingBundle(MetricsError):
    def __init__(self, example_id: str):
        super().__init__(f"no prompt bundle logged for {example_id}")
        self.example_id = example_id


@dataclass
class ExampleOutcome:
    example_id: str
    problem_class: ProblemClass
    verdicts: list[CheckVerdict]
    candidate_texts: list[str] | None = None
    ground_truth: str | None = None

    @property
    def verified_set(self) -> list[int]:
        return [
            i for i, v in enumerate(self.verdicts) if v.status is CheckStatus.VERIFIED
        ]

    def solved_at(self, k: int) -> bool:
        return any(i < k for i in self.verified_set)

    def to_json(self) -> dict:
        out = {
            "example_id": self.example_id,
            "class": self.problem_class.value,
            "verdicts": [v.to_json() for v in self.verdicts],
        }
        if self.candidate_texts is not None:
            out["candidate_texts"] = self.candidate_texts
        if self.ground_truth is not None:
            out["ground_truth"] = self.ground_truth
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ExampleOutcome":
        return cls(
            example_id=obj["example_id"],
            problem_class=ProblemClass(obj["class"]),
            verdicts=[CheckVerdict.from_json(v) for v in obj["verdicts"]],
            candidate_texts=obj.get("candidate_texts"),
            ground_truth=obj.get("ground_truth"),
        )


@dataclass
class RunReport:
    run_id: str
    model_id: str
    labels: dict[str, str] = field(default_factory=dict)
    outcomes: list[ExampleOutcome] = field(default_factory=list)

    def example_ids(self) -> set[str]:
        return {o.example_id for o in self.outcomes}


def write_report(report: RunReport, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        header = {
            "run_id": report.run_id,
            "model_id": report.model_id,
            "labels": report.labels,
        }
        fh.write(json.dumps(header, sort_keys=True) + "\n")
        for outcome in report.outcomes:
            fh.write(json.dumps(outcome.to_json(), sort_keys=True) + "\n")


def read_report(path: str | Path) -> RunReport:
    with open(path, encoding="utf-8") as fh:
        lines = [l for l in fh.read().splitlines() if l.strip()]
    if not lines:
        raise EmptyReport(f"{path} is empty")
    header = json.loads(lines[0])
    outcomes = []
    seen: set[str] = set()
    for line in lines[1:]:
        outcome = ExampleOutcome.from_json(json.loads(line))
        if outcome.example_id in seen:
            continue  # at-most-once per example; first write wins
        seen.add(outcome.example_id)
        outcomes.append(outcome)
    return RunReport(
        run_id=header["run_id"],
        model_id=header.get("model_id", ""),
        labels=dict(header.get("labels", {})),
        outcomes=outcomes,
    )


def verify_at_k(report: RunReport, k: int) -> float:
    """Percentage of examples with a verified candidate among the first k."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not report.outcomes:
        raise EmptyReport(report.run_id)
    solved = sum(1 for o in report.outcomes if o.solved_at(k))
    return 100.0 * solved / len(report.outcomes)


def shortfall(report: RunReport, k: int) -> int:
    """Examples that have fewer than k verdicts (they count with what exists)."""
    return sum(1 for o in report.outcomes if len(o.verdicts) < k)


def solved_ids(report: RunReport, k: int) -> set[str]:
    return {o.example_id for o in report.outcomes if o.solved_at(k)}


def _require_same_examples(reports: Sequence[RunReport]) -> set[str]:
    if not reports:
        raise EmptyReport("no reports")
    ids = reports[0].example_ids()
    for r in reports[1:]:
        if r.example_ids() != ids:
            raise MismatchedExampleSets(
                f"report {r.run_id} covers a different example set"
            )
    if not ids:
        raise EmptyReport(reports[0].run_id)
    return ids


def verify_at_nk(reports: Sequence[RunReport], k: int) -> float:
    """verify@k over the union of solved sets of all reports."""
    ids = _require_same_examples(reports)
    union: set[str] = set()
    for r in reports:
        union |= solved_ids(r, k)
    return 100.0 * len(union) / len(ids)


def exclusive_solves(
    reports: Sequence[RunReport], k: int
) -> dict[frozenset[str], int]:
    """Count examples by the exact subset of runs that solved them at k."""
    ids = _require_same_examples(reports)
    solved_by = {r.run_id: solved_ids(r, k) for r in reports}
    counts: dict[frozenset[str], int] = {}
    for example_id in ids:
        signature = frozenset(
            run_id for run_id, solved in solved_by.items() if example_id in solved
        )
        counts[signature] = counts.get(signature, 0) + 1
    return counts


def class_breakdown(report: RunReport, k: int) -> dict[ProblemClass, float]:
    """verify@k restricted to each problem class present in the report."""
    by_class: dict[ProblemClass, list[ExampleOutcome]] = {}
    for o in report.outcomes:
        by_class.setdefault(o.problem_class, []).append(o)
    return {
        cls: 100.0 * sum(1 for o in members if o.solved_at(k)) / len(members)
        for cls, members in sorted(by_class.items(), key=lambda kv: kv[0].value)
    }


@dataclass
class ErrorDistribution:
    counts: dict[ErrorClass, int]
    percentages: dict[ErrorClass, float]
    failed_total: int
    screened: int
    unavailable: int


def error_distribution(report: RunReport) -> ErrorDistribution:
    """Three-way classification over all Failed candidates.

    Screened candidates are counted separately and excluded from the
    percentages, as is CheckerUnavailable.
    """
    counts = {cls: 0 for cls in ErrorClass}
    screened = 0
    unavailable = 0
    for outcome in report.outcomes:
        for verdict in outcome.verdicts:
            if verdict.status is CheckStatus.SCREENED:
                screened += 1
            elif verdict.status is CheckStatus.CHECKER_UNAVAILABLE:
                unavailable += 1
            elif verdict.status is CheckStatus.FAILED and verdict.errors:
                counts[classify_error(verdict)] += 1
    failed_total = sum(counts.values())
    percentages = {
        cls: (100.0 * n / failed_total if failed_total else 0.0)
        for cls, n in counts.items()
    }
    return ErrorDistribution(
        counts=counts,
        percentages=percentages,
        failed_total=failed_total,
        screened=screened,
        unavailable=unavailable,
    )


def token_texts(source: str) -> list[str]:
    return [t.text for t in content_tokens(source)]


def levenshtein(a: Sequence[str], b: Sequence[str]) -> int:
    """Token-level edit distance, two-row dynamic program."""
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, x in enumerate(a, start=1):
        current = [i] + [0] * len(b)
        for j, y in enumerate(b, start=1):
            current[j] = min(
                previous[j] + 1,
                current[j - 1] + 1,
                previous[j - 1] + (0 if x == y else 1),
            )
        previous = current
    return previous[-1]


@dataclass
class DistanceSummary:
    count: int
    mean: float
    q1: float
    median: float
    q3: float


def min_edit_distance(
    report: RunReport,
) -> tuple[dict[str, float | None], DistanceSummary | None]:
    """Per example with verified candidates: min over the verified set of the
    token Levenshtein distance to the ground truth, normalized by the ground
    truth's token count. Examples without verified candidates map to None."""
    per_example: dict[str, float | None] = {}
    values = []
    for outcome in report.outcomes:
        vs = outcome.verified_set
        if not vs:
            per_example[outcome.example_id] = None
            continue
        if outcome.ground_truth is None or outcome.candidate_texts is None:
            raise EmptyGroundTruth(outcome.example_id)
        g_tokens = token_texts(outcome.ground_truth)
        if not g_tokens:
            raise EmptyGroundTruth(outcome.example_id)
        best = min(
            levenshtein(g_tokens, token_texts(outcome.candidate_texts[i])) for i in vs
        )
        value = best / len(g_tokens)
        per_example[outcome.example_id] = value
        values.append(value)
    if not values:
        return per_example, None
    arr = np.asarray(values)
    summary = DistanceSummary(
        count=len(values),
        mean=float(arr.mean()),
        q1=float(np.percentile(arr, 25)),
        median=float(np.percentile(arr, 50)),
        q3=float(np.percentile(arr, 75)),
    )
    return per_example, summary


def rank_sum_z(solved: Sequence[float], unsolved: Sequence[float]) -> float:
    """Wilcoxon rank-sum statistic (normal approximation, average tied ranks).

    Positive when the solved group tends to have larger values.
    """
    n1, n2 = len(solved), len(unsolved)
    if n1 == 0 or n2 == 0:
        return 0.0
    combined = sorted(
        [(v, 0) for v in solved] + [(v, 1) for v in unsolved], key=lambda p: p[0]
    )
    ranks = [0.0] * len(combined)
    i = 0
    while i < len(combined):
        j = i
        while j + 1 < len(combined) and combined[j + 1][0] == combined[i][0]:
            j += 1
        avg_rank = (i + j) / 2 + 1
        for idx in range(i, j + 1):
            ranks[idx] = avg_rank
        i = j + 1
    w = sum(r for r, (_, group) in zip(ranks, combined) if group == 0)
    mu = n1 * (n1 + n2 + 1) / 2.0
    sigma = math.sqrt(n1 * n2 * (n1 + n2 + 1) / 12.0)
    if sigma == 0.0:
        return 0.0
    return (w - mu) / sigma


OVERLAP_COMPONENTS = (Component.CONTEXT, Component.RELATED, Component.PREMISES)


@dataclass
class OverlapRow:
    component: Component
    mean_solved: float | None
    mean_unsolved: float | None
    z: float


@dataclass
class OverlapTable:
    per_example: dict[tuple[str, str], float]
    rows: list[OverlapRow]


def identifier_overlap(
    report: RunReport,
    bundles: Mapping[str, PromptBundle],
    k: int = 10,
) -> OverlapTable:
    """Identifier overlap between ground truth and each prompt component.

    Per example and component: |ids(truth) ∩ ids(component)| / |ids(truth)| in
    percent. Means are split by solved/unsolved at k, with a rank-sum z per
    component. Examples whose ground truth has no identifiers are skipped.
    """
    per_example: dict[tuple[str, str], float] = {}
    groups: dict[Component, dict[bool, list[float]]] = {
        c: {True: [], False: []} for c in OVERLAP_COMPONENTS
    }
    for outcome in report.outcomes:
        if outcome.example_id not in bundles:
            raise MissingBundle(outcome.example_id)
        if outcome.ground_truth is None:
            raise EmptyGroundTruth(outcome.example_id)
        truth_ids = extract_identifiers(outcome.ground_truth)
        if not truth_ids:
            continue
        bundle = bundles[outcome.example_id]
        solved = outcome.solved_at(k)
        for component in OVERLAP_COMPONENTS:
            part = bundle.part(component)
            if part is None:
                continue
            part_ids = extract_identifiers(part.text)
            pct = 100.0 * len(truth_ids & part_ids) / len(truth_ids)
            per_example[(outcome.example_id, component.value)] = pct
            groups[component][solved].append(pct)

    rows = []
    for component in OVERLAP_COMPONENTS:
        solved_vals = groups[component][True]
        unsolved_vals = groups[component][False]
        rows.append(
            OverlapRow(
                component=component,
                mean_solved=float(np.mean(solved_vals)) if solved_vals else None,
                mean_unsolved=float(np.mean(unsolved_vals)) if unsolved_vals else None,
                z=rank_sum_z(solved_vals, unsolved_vals),
            )
        )
    return OverlapTable(per_example=per_example, rows=rows)


# -- CSV emitters ----------------------------------------------------------


def _write_csv(path: str | Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(x) for x in row) + "\n")


def write_verify_csv(reports: Sequence[RunReport], ks: Sequence[int], path: str | Path) -> None:
    rows = []
    for r in reports:
        row = [r.run_id, r.model_id] + [f"{verify_at_k(r, k):.2f}" for k in ks]
        rows.append(row)
    if len(reports) >= 1:
        rows.append(
            ["verify@nk", "all"] + [f"{verify_at_nk(reports, k):.2f}" for k in ks]
        )
    _write_csv(path, ["run_id", "model_id"] + [f"k={k}" for k in ks], rows)


def write_class_breakdown_csv(report: RunReport, k: int, path: str | Path) -> None:
    rows = [
        [cls.value, f"{pct:.2f}"] for cls, pct in class_breakdown(report, k).items()
    ]
    _write_csv(path, ["class", f"verify@{k}"], rows)


def write_error_csv(report: RunReport, path: str | Path) -> None:
    dist = error_distribution(report)
    rows = [
        [cls.value, dist.counts[cls], f"{dist.percentages[cls]:.2f}"]
        for cls in ErrorClass
    ]
    rows.append(["screened", dist.screened, ""])
    rows.append(["checker_unavailable", dist.unavailable, ""])
    _write_csv(path, ["error_class", "count", "percent_of_failed"], rows)


def write_distance_csv(report: RunReport, path: str | Path) -> None:
    per_example, summary = min_edit_distance(report)
    rows = [
        [eid, "" if v is None else f"{v:.6f}"] for eid, v in sorted(per_example.items())
    ]
    if summary is not None:
        rows.append(["__mean__", f"{summary.mean:.6f}"])
        rows.append(["__q1__", f"{summary.q1:.6f}"])
        rows.append(["__median__", f"{summary.median:.6f}"])
        rows.append(["__q3__", f"{summary.q3:.6f}"])
    _write_csv(path, ["example_id", "normalized_min_distance"], rows)


def write_exclusive_csv(
    reports: Sequence[RunReport], k: int, path: str | Path
) -> None:
    counts = exclusive_solves(reports, k)
    rows = [
        ["+".join(sorted(sig)) if sig else "(none)", n]
        for sig, n in sorted(counts.items(), key=lambda kv: ("+".join(sorted(kv[0]))))
    ]
    _write_csv(path, ["solved_by", "count"], rows)


def write_overlap_csv(table: OverlapTable, path: str | Path) -> None:
    rows = []
    for row in table.rows:
        rows.append(
            [
                row.component.value,
                "" if row.mean_solved is None else f"{row.mean_solved:.2f}",
                "" if row.mean_unsolved is None else f"{row.mean_unsolved:.2f}",
                f"{row.z:.4f}",
            ]
        )
    _write_csv(path, ["component", "mean_solved", "mean_unsolved", "rank_sum_z"], rows)
