"""Prompt assembly under per-component token budgets.

Three formats share the same selected content: a natural-language prompt
where every component is preceded by a short description, a tagged format
wrapping components in <context>/<related>/<premises>/<goal> markers, and a
completion format that joins raw component texts with a separator token.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from .corpus import DefinitionRecord
from .lang import count_tokens, tokenize, TokenKind
from .retrieve import RetrievalHit
from .lang import short_name

Tokenizer = Callable[[str], int]


@dataclass(frozen=True)
class PromptBudget:
    context_tokens: int
    related_tokens: int
    premise_tokens: int
    generation_tokens: int

    def __post_init__(self):
        for name in ("context_tokens", "related_tokens", "premise_tokens", "generation_tokens"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")


PROFILES = {
    "small": PromptBudget(500, 400, 300, 500),
    "large": PromptBudget(10_000, 3_000, 2_000, 1_000),
}


class PromptFormat(enum.Enum):
    NATURAL_LANGUAGE = "natural"
    TAGGED = "tagged"
    COMPLETION = "completion"


class Ablation(enum.Enum):
    NO_CONTEXT = "no_context"
    NO_RELATED = "no_related"
    NO_PREMISES = "no_premises"


class Component(enum.Enum):
    INSTRUCTIONS = "instructions"
    CONTEXT = "context"
    RELATED = "related"
    PREMISES = "premises"
    GOAL = "goal"


@dataclass(frozen=True)
class PromptPart:
    component: Component
    text: str
    token_count: int


@dataclass
class PromptBundle:
    format: PromptFormat
    parts: list[PromptPart]
    ablations: set[Ablation] = field(default_factory=set)
    total_tokens: int = 0

    def part(self, component: Component) -> PromptPart | None:
        for p in self.parts:
            if p.component is component:
                return p
        return None


TEMPLATE_KEYS = (
    "instructions",
    "context_header",
    "related_header",
    "related_example",
    "premises_header",
    "goal_header",
    "truncation_marker",
    "completion_separator",
)


def load_template(path: str | Path | None = None) -> dict[str, str]:
    """Parse the key = value template file; \\n in values means newline."""
    if path is None:
        text = resources.files("proofsynth").joinpath("data/prompt_template.txt").read_text("utf-8")
    else:
        text = Path(path).read_text("utf-8")
    template: dict[str, str] = {}
    for line in text.splitlines():
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        key, _, value = line.partition("=")
        template[key.strip()] = value.strip().replace("\\n", "\n")
    missing = [k for k in TEMPLATE_KEYS if k not in template]
    if missing:
        raise ValueError(f"prompt template missing keys: {missing}")
    return template


DEFAULT_TEMPLATE = load_template()


def _is_directive(element: str) -> bool:
    stripped = element.lstrip()
    return stripped.startswith(("open ", "module "))


def truncate_to_tokens(text: str, limit: int, marker: str, tokenizer: Tokenizer) -> str:
    """Prefix of ``text`` holding at most ``limit`` countable tokens, with the
    marker appended at a token boundary (the marker counts toward the limit)."""
    marker_cost = tokenizer(marker)
    keep = limit - marker_cost
    if keep <= 0:
        return marker if marker_cost <= limit else ""
    consumed = 0
    end = 0
    for tok in tokenize(text):
        if tok.kind not in (TokenKind.WHITESPACE, TokenKind.COMMENT):
            if consumed == keep:
                break
            consumed += 1
        end += len(tok.text)
    return text[:end].rstrip() + marker


def select_context(
    file_context: Sequence[str],
    budget: int,
    tokenizer: Tokenizer = count_tokens,
    truncation_marker: str = "...",
) -> list[str]:
    """Pick file-context elements under the token budget.

    Open/module lines are considered first regardless of distance; everything
    else is scanned from the nearest-to-goal element backwards. Elements that
    do not fit the remaining budget are skipped (the scan continues), except
    that an element too large for the whole budget is truncated at a token
    boundary with a marker. Survivors come out in original file order.
    """
    if budget <= 0:
        return []
    indexed = list(enumerate(file_context))
    directives = [(i, e) for i, e in reversed(indexed) if _is_directive(e)]
    others = [(i, e) for i, e in reversed(indexed) if not _is_directive(e)]

    chosen: dict[int, str] = {}
    remaining = budget
    for i, element in directives + others:
        cost = tokenizer(element)
        if cost == 0:
            continue
        if cost <= remaining:
            chosen[i] = element
            remaining -= cost
        elif cost > budget and remaining > 0:
            truncated = truncate_to_tokens(element, remaining, truncation_marker, tokenizer)
            if truncated and tokenizer(truncated) <= remaining:
                chosen[i] = truncated
                remaining -= tokenizer(truncated)
    return [chosen[i] for i in sorted(chosen)]


def _greedy_items(
    items: Sequence[str], budget: int, tokenizer: Tokenizer, joiner_cost: int = 0
) -> list[str]:
    """Skip-and-continue fill over pre-rendered items."""
    kept: list[str] = []
    remaining = budget
    for item in items:
        cost = tokenizer(item) + (joiner_cost if kept else 0)
        if cost <= remaining:
            kept.append(item)
            remaining -= cost
    return kept


def assemble(
    record: DefinitionRecord,
    related_hits: Sequence[RetrievalHit],
    premises: Sequence[str],
    budgets: PromptBudget,
    format: PromptFormat = PromptFormat.NATURAL_LANGUAGE,
    ablations: set[Ablation] | None = None,
    tokenizer: Tokenizer = count_tokens,
    template: dict[str, str] | None = None,
) -> PromptBundle:
    """Build the prompt bundle for one record.

    Every budgeted part (context, related, premises) is emitted only when it
    has content, and its full text, headers and tags included, stays within
    its budget. The goal part always ends with the record's prefix.
    """
    ablations = set(ablations or ())
    template = template or DEFAULT_TEMPLATE
    marker = template["truncation_marker"]
    natural = format is PromptFormat.NATURAL_LANGUAGE
    tagged = format is PromptFormat.TAGGED

    def dress(component: str, header: str, content: str) -> str:
        if natural:
            return header + "\n" + content
        if tagged:
            return f"<{component}>\n{content}\n</{component}>"
        return content

    def overhead(component: str, header: str) -> int:
        return tokenizer(dress(component, header, ""))

    parts: list[PromptPart] = []

    if format is not PromptFormat.COMPLETION:
        text = template["instructions"]
        parts.append(PromptPart(Component.INSTRUCTIONS, text, tokenizer(text)))

    if Ablation.NO_CONTEXT not in ablations and record.file_context:
        head = template["context_header"]
        inner_budget = budgets.context_tokens - overhead("context", head)
        selected = select_context(record.file_context, inner_budget, tokenizer, marker)
        if selected:
            text = dress("context", head, "\n".join(selected))
            parts.append(PromptPart(Component.CONTEXT, text, tokenizer(text)))

    if Ablation.NO_RELATED not in ablations and related_hits:
        head = template["related_header"]
        inner_budget = budgets.related_tokens - overhead("related", head)
        rendered = [
            template["related_example"].format(type_text=h.type_text, body_text=h.body_text)
            for h in related_hits
        ]
        kept = _greedy_items(rendered, inner_budget, tokenizer)
        if kept:
            text = dress("related", head, "\n\n".join(kept))
            parts.append(PromptPart(Component.RELATED, text, tokenizer(text)))

    if Ablation.NO_PREMISES not in ablations and premises:
        head = template["premises_header"]
        inner_budget = budgets.premise_tokens - overhead("premises", head)
        shorts: list[str] = []
        for name in premises:
            s = short_name(name)
            if s not in shorts:
                shorts.append(s)
        comma_cost = tokenizer(",")
        kept = _greedy_items(shorts, inner_budget, tokenizer, joiner_cost=comma_cost)
        if kept:
            text = dress("premises", head, ", ".join(kept))
            parts.append(PromptPart(Component.PREMISES, text, tokenizer(text)))

    goal_content = record.goal_type + "\n" + record.prefix
    if natural:
        goal_text = template["goal_header"] + "\n" + goal_content
    elif tagged:
        goal_text = "<goal>\n" + goal_content  # left open: generation continues here
    else:
        goal_text = goal_content
    parts.append(PromptPart(Component.GOAL, goal_text, tokenizer(goal_text)))

    return PromptBundle(
        format=format,
        parts=parts,
        ablations=ablations,
        total_tokens=sum(p.token_count for p in parts),
    )


def render(bundle: PromptBundle, template: dict[str, str] | None = None) -> str:
    """Final prompt text: parts joined by blank lines, or by the separator
    token in completion format."""
    template = template or DEFAULT_TEMPLATE
    if bundle.format is PromptFormat.COMPLETION:
        return template["completion_separator"].join(p.text for p in bundle.parts)
    return "\n\n".join(p.text for p in bundle.parts)


def budget_for(component: Component, budgets: PromptBudget) -> int | None:
    if component is Component.CONTEXT:
        return budgets.context_tokens
    if component is Component.RELATED:
        return budgets.related_tokens
    if component is Component.PREMISES:
        return budgets.premise_tokens
    return None
