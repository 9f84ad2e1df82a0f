"""Surface-language front end: lexer, identifier extraction, type taxonomy.

The lexer is a deterministic scanner for the ML-family surface syntax used
throughout the harness. It is not a parser: its only hard guarantee is the
round-trip property (concatenating all token texts, whitespace and comments
included, reproduces the input byte for byte), which makes it safe to use
for token counting, edit distance and clone normalization.
"""

from __future__ import annotations

import enum
import string
from dataclasses import dataclass
from importlib import resources

SELF_MARKER = "⟨SELF⟩"  # ⟨SELF⟩, substituted for self-references

_IDENT_START = set(string.ascii_letters + "_'")
_IDENT_CONT = set(string.ascii_letters + string.digits + "_.'")
_OPERATOR_CHARS = set("+-*/<>=!&|^~?:@.#$%\\`")
_PUNCTUATION = set("()[]{},;")
_EFFECT_HEADS = ("Tot", "Pure", "Lemma", "GTot", "Ghost")


def _load_keywords() -> frozenset[str]:
    text = resources.files("proofsynth").joinpath("data/fstar_keywords.txt").read_text("utf-8")
    words = set()
    for line in text.splitlines():
        line = line.strip()
        if line and not line.startswith("#"):
            words.add(line)
    return frozenset(words)


KEYWORDS = _load_keywords()


class TokenKind(enum.Enum):
    IDENTIFIER = "identifier"
    KEYWORD = "keyword"
    OPERATOR = "operator"
    LITERAL = "literal"
    PUNCTUATION = "punctuation"
    COMMENT = "comment"
    WHITESPACE = "whitespace"


@dataclass(frozen=True)
class Token:
    kind: TokenKind
    text: str
    line: int
    col: int


class MalformedType(ValueError):
    """Raised when a type's brackets do not balance."""


@dataclass(frozen=True)
class TypeShape:
    """Top-level arrow structure of a type: binders, result, effect head."""

    binders: tuple[tuple[str | None, str], ...]
    result_text: str
    effect_head: str | None


class ProblemClass(enum.Enum):
    SIMPLY_TYPED = "simply_typed"
    DEPENDENTLY_TYPED = "dependently_typed"
    PROOF = "proof"
    AUTO_GENERATED = "auto_generated"


def tokenize(source: str) -> list[Token]:
    """Lex ``source`` into a lossless token stream.

    Unknown bytes become length-1 operator tokens; the scan never fails.
    """
    tokens: list[Token] = []
    i = 0
    n = len(source)
    line = 1
    col = 1

    def emit(kind: TokenKind, end: int) -> None:
        nonlocal i, line, col
        text = source[i:end]
        tokens.append(Token(kind, text, line, col))
        newlines = text.count("\n")
        if newlines:
            line += newlines
            col = len(text) - text.rfind("\n")
        else:
            col += len(text)
        i = end

    while i < n:
        ch = source[i]
        if ch in " \t\r\n\f\v":
            j = i + 1
            while j < n and source[j] in " \t\r\n\f\v":
                j += 1
            emit(TokenKind.WHITESPACE, j)
        elif ch == "/" and source.startswith("//", i):
            j = source.find("\n", i)
            emit(TokenKind.COMMENT, n if j < 0 else j)
        elif ch == "(" and source.startswith("(*", i):
            depth = 1
            j = i + 2
            while j < n and depth:
                if source.startswith("(*", j):
                    depth += 1
                    j += 2
                elif source.startswith("*)", j):
                    depth -= 1
                    j += 2
                else:
                    j += 1
            emit(TokenKind.COMMENT, j)
        elif ch == '"':
            j = i + 1
            while j < n:
                if source[j] == "\\" and j + 1 < n:
                    j += 2
                elif source[j] == '"':
                    j += 1
                    break
                else:
                    j += 1
            emit(TokenKind.LITERAL, j)
        elif ch.isdigit():
            j = i + 1
            if ch == "0" and j < n and source[j] in "xX":
                j += 1
                while j < n and source[j] in string.hexdigits:
                    j += 1
            else:
                while j < n and source[j].isdigit():
                    j += 1
                if j + 1 < n and source[j] == "." and source[j + 1].isdigit():
                    j += 1
                    while j < n and source[j].isdigit():
                        j += 1
            # width/sign suffixes: 1ul, 0uy, 7L, ...
            while j < n and source[j].isalpha():
                j += 1
            emit(TokenKind.LITERAL, j)
        elif ch in _IDENT_START:
            j = i + 1
            while j < n and source[j] in _IDENT_CONT:
                j += 1
            text = source[i:j]
            emit(TokenKind.KEYWORD if text in KEYWORDS else TokenKind.IDENTIFIER, j)
        elif ch in _PUNCTUATION:
            emit(TokenKind.PUNCTUATION, i + 1)
        elif ch in _OPERATOR_CHARS:
            j = i + 1
            while j < n and source[j] in _OPERATOR_CHARS:
                j += 1
            emit(TokenKind.OPERATOR, j)
        else:
            emit(TokenKind.OPERATOR, i + 1)
    return tokens


def content_tokens(source: str) -> list[Token]:
    """Tokens with whitespace and comments dropped."""
    return [
        t
        for t in tokenize(source)
        if t.kind not in (TokenKind.WHITESPACE, TokenKind.COMMENT)
    ]


def count_tokens(source: str) -> int:
    """Default token-budget measure: number of non-whitespace, non-comment tokens."""
    return len(content_tokens(source))


def extract_identifiers(source: str) -> set[str]:
    """Distinct identifier texts in ``source``; keywords and literals excluded."""
    return {t.text for t in tokenize(source) if t.kind is TokenKind.IDENTIFIER}


def short_name(qualified: str) -> str:
    """Final dotted component of a fully qualified name."""
    return qualified.rstrip(".").rsplit(".", 1)[-1]


def normalize_body(body: str, self_name: str) -> list[str]:
    """Clone-normal form: content token texts with self-references masked.

    Tokens equal to ``self_name`` or to its short name become SELF_MARKER, so
    two definitions that differ only in their own name normalize identically.
    """
    if not self_name:
        raise ValueError("self_name must be nonempty")
    short = short_name(self_name)
    out = []
    for t in content_tokens(body):
        out.append(SELF_MARKER if t.text in (self_name, short) else t.text)
    return out


_OPEN = {"(": ")", "[": "]", "{": "}"}
_CLOSE = {")": "(", "]": "[", "}": "{"}


def _check_balance(tokens: list[Token], type_text: str) -> None:
    stack: list[str] = []
    for t in tokens:
        if t.kind is not TokenKind.PUNCTUATION:
            continue
        if t.text in _OPEN:
            stack.append(t.text)
        elif t.text in _CLOSE:
            if not stack or stack[-1] != _CLOSE[t.text]:
                raise MalformedType(f"unbalanced {t.text!r} in type: {type_text!r}")
            stack.pop()
    if stack:
        raise MalformedType(f"unclosed {stack[-1]!r} in type: {type_text!r}")


def _split_top_level_arrows(tokens: list[Token]) -> list[list[Token]]:
    segments: list[list[Token]] = []
    current: list[Token] = []
    depth = 0
    for t in tokens:
        if t.kind is TokenKind.PUNCTUATION:
            if t.text in _OPEN:
                depth += 1
            elif t.text in _CLOSE:
                depth -= 1
        if depth == 0 and t.kind is TokenKind.OPERATOR and t.text == "->":
            segments.append(current)
            current = []
        else:
            current.append(t)
    segments.append(current)
    return segments


def _segment_text(tokens: list[Token]) -> str:
    return "".join(t.text for t in tokens).strip()


def _content(tokens: list[Token]) -> list[Token]:
    return [
        t
        for t in tokens
        if t.kind not in (TokenKind.WHITESPACE, TokenKind.COMMENT)
    ]


def _strip_outer_parens(tokens: list[Token]) -> list[Token]:
    """Remove one enclosing paren pair when it spans the whole segment."""
    toks = _content(tokens)
    if len(toks) < 2 or toks[0].text != "(" or toks[-1].text != ")":
        return tokens
    depth = 0
    for idx, t in enumerate(toks):
        if t.kind is TokenKind.PUNCTUATION:
            if t.text in _OPEN:
                depth += 1
            elif t.text in _CLOSE:
                depth -= 1
                if depth == 0 and idx != len(toks) - 1:
                    return tokens  # closes early: not one enclosing pair
    first, last = toks[0], toks[-1]
    inner = [t for t in tokens if t is not first and t is not last]
    # trim whitespace left dangling at the edges
    while inner and inner[0].kind is TokenKind.WHITESPACE:
        inner.pop(0)
    while inner and inner[-1].kind is TokenKind.WHITESPACE:
        inner.pop()
    return inner


def _parse_binder(segment: list[Token]) -> tuple[str | None, str]:
    """Split a binder segment into (name, type_text); name None when unnamed."""
    stripped = _strip_outer_parens(segment)
    toks = _content(stripped)
    # optional implicit marker (#x:t) before the name
    start = 1 if toks and toks[0].kind is TokenKind.OPERATOR and toks[0].text == "#" else 0
    if (
        len(toks) >= start + 2
        and toks[start].kind is TokenKind.IDENTIFIER
        and toks[start + 1].kind is TokenKind.OPERATOR
        and toks[start + 1].text == ":"
    ):
        name = toks[start].text
        colon = toks[start + 1]
        after = stripped[stripped.index(colon) + 1 :]
        type_text = _segment_text(after)
        if type_text:
            return name, type_text
    return None, _segment_text(segment)


def parse_type_shape(type_text: str) -> TypeShape:
    """Split ``type_text`` on top-level arrows into binders and a result.

    Raises MalformedType when brackets are unbalanced or a segment is empty.
    """
    if not type_text.strip():
        raise MalformedType("empty type text")
    tokens = tokenize(type_text)
    _check_balance(tokens, type_text)
    segments = _split_top_level_arrows(tokens)
    for seg in segments:
        if not _content(seg):
            raise MalformedType(f"empty arrow segment in type: {type_text!r}")

    binders = tuple(_parse_binder(seg) for seg in segments[:-1])

    result_seg = segments[-1]
    result_content = _content(result_seg)
    effect_head = None
    first = result_content[0]
    if first.kind is TokenKind.IDENTIFIER and first.text in _EFFECT_HEADS:
        effect_head = first.text
        after = result_seg[result_seg.index(first) + 1 :]
        rest = _segment_text(after)
        result_text = rest if rest else effect_head
    else:
        result_text = _segment_text(result_seg)
    return TypeShape(binders=binders, result_text=result_text, effect_head=effect_head)


def _result_head(result_text: str) -> str | None:
    """First identifier of the result, looking through leading parens."""
    for t in content_tokens(result_text):
        if t.kind is TokenKind.PUNCTUATION and t.text == "(":
            continue
        if t.kind in (TokenKind.IDENTIFIER, TokenKind.KEYWORD):
            return t.text
        return None
    return None


def _mentions(name: str, text: str) -> bool:
    return name in extract_identifiers(text)


def classify(shape: TypeShape) -> ProblemClass:
    """Heuristic taxonomy: proof, dependently typed, or simply typed.

    A type is a proof when its effect is Lemma, its result head is squash or
    prop, or it returns unit with an ensures clause. Otherwise it is
    dependently typed when some binder name is mentioned in a later binder's
    type or in the result (a binder's own refinement does not count, and type
    variables like 'a never induce dependence); else simply typed.
    """
    head = _result_head(shape.result_text)
    if shape.effect_head == "Lemma":
        return ProblemClass.PROOF
    if head in ("squash", "prop"):
        return ProblemClass.PROOF
    if head == "unit":
        ensure_scope = shape.result_text
        if any(t.text == "ensures" for t in content_tokens(ensure_scope)):
            return ProblemClass.PROOF

    for idx, (name, _) in enumerate(shape.binders):
        if name is None or name.startswith(("'", "_")):
            continue
        later_types = [btype for _, btype in shape.binders[idx + 1 :]]
        if any(_mentions(name, btype) for btype in later_types):
            return ProblemClass.DEPENDENTLY_TYPED
        if _mentions(name, shape.result_text):
            return ProblemClass.DEPENDENTLY_TYPED
    return ProblemClass.SIMPLY_TYPED


def classify_type(type_text: str) -> ProblemClass:
    """Parse and classify in one step."""
    return classify(parse_type_shape(type_text))
