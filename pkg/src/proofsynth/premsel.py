"""Premise selection: training pairs, MSE objective over a linear head,
gradient training, cosine ranking, MAP/NDCG evaluation, and source modes.

The trainable model is a k x d matrix W applied on top of a frozen base
embedding: e(x) = W @ base(x). Training minimizes, per goal g with positives
p_1..p_n and sampled negatives q_1..q_n,

    (1 / 2n) * sum_i (e(g)@e(q_i))^2 + (e(g)@e(p_i) - 1)^2

over raw dot products; ranking at inference time uses cosine similarity.
"""

from __future__ import annotations

import enum
import hashlib
import random
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import DefinitionRecord
from .embed import EmbeddingProvider
from . import lang


class PremselError(Exception):
    pass


class InsufficientNegatives(PremselError):
    def __init__(self, goal_id: str):
        super().__init__(f"negative pool exhausted for goal {goal_id}")
        self.goal_id = goal_id


class NonFiniteLoss(PremselError):
    def __init__(self, epoch: int):
        super().__init__(f"loss became non-finite during epoch {epoch}")
        self.epoch = epoch


class MissingText(PremselError):
    def __init__(self, name: str):
        super().__init__(f"no text for premise {name!r}")
        self.name = name


class NoPositives(PremselError):
    def __init__(self, goal_id: str):
        super().__init__(f"no ground-truth positives for goal {goal_id}")
        self.goal_id = goal_id


class ModelRequired(PremselError):
    pass


@dataclass
class PremiseTrainingExample:
    goal_id: str
    goal_text: str
    positives: list[str]
    negatives: list[str]
    with_replacement: bool = False


@dataclass
class PremiseModel:
    base_dimension: int
    head_dimension: int
    weights: np.ndarray  # shape (k, d)
    seed: int

    def head(self, base_values: np.ndarray) -> np.ndarray:
        return self.weights @ base_values


INIT_SCALE = 0.05


def init_model(base_dimension: int, head_dimension: int, seed: int) -> PremiseModel:
    """Deterministic uniform [-0.05, 0.05] initialization from the seed."""
    rng = np.random.default_rng(seed)
    weights = rng.uniform(-INIT_SCALE, INIT_SCALE, size=(head_dimension, base_dimension))
    return PremiseModel(
        base_dimension=base_dimension,
        head_dimension=head_dimension,
        weights=weights,
        seed=seed,
    )


MODEL_MAGIC = b"PMS1"


def save_model(model: PremiseModel, path: str | Path) -> None:
    """Binary layout: "PMS1", <u32 d, <u32 k, <i64 seed, then k*d little-endian f64."""
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IIq", model.base_dimension, model.head_dimension, model.seed))
        fh.write(np.ascontiguousarray(model.weights, dtype="<f8").tobytes())


def load_model(path: str | Path) -> PremiseModel:
    data = Path(path).read_bytes()
    if data[:4] != MODEL_MAGIC:
        raise PremselError(f"bad model file magic in {path}")
    d, k, seed = struct.unpack("<IIq", data[4:20])
    weights = np.frombuffer(data[20:], dtype="<f8").reshape(k, d).astype(np.float64)
    if weights.size != k * d:
        raise PremselError("model file truncated")
    return PremiseModel(base_dimension=d, head_dimension=k, weights=weights, seed=seed)


def _occurs(name: str, idents: set[str], ident_shorts: set[str]) -> bool:
    return name in idents or lang.short_name(name) in ident_shorts


def _per_record_rng(seed: int, goal_id: str) -> random.Random:
    digest = hashlib.sha256(f"{seed}|{goal_id}".encode()).digest()
    return random.Random(int.from_bytes(digest[:8], "little"))


def build_training_pairs(
    records: Sequence[DefinitionRecord], seed: int
) -> list[PremiseTrainingExample]:
    """One example per record with ideal premises: positives are the ideal
    premises; an equal number of negatives is sampled from the in-scope names
    that occur in neither the body nor the goal type.

    Sampling is without replacement; a pool smaller than n falls back to
    replacement and flags the example. Records with no positives or an empty
    pool are skipped.
    """
    pairs: list[PremiseTrainingExample] = []
    for rec in records:
        positives = list(rec.ideal_premises)
        if not positives:
            continue
        idents = lang.extract_identifiers(rec.body) | lang.extract_identifiers(rec.goal_type)
        ident_shorts = {lang.short_name(i) for i in idents}
        pool = sorted(
            name
            for name in set(rec.in_scope) - set(positives)
            if not _occurs(name, idents, ident_shorts)
        )
        n = len(positives)
        if not pool:
            continue
        rng = _per_record_rng(seed, rec.id)
        if len(pool) >= n:
            negatives = rng.sample(pool, n)
            flagged = False
        else:
            negatives = [rng.choice(pool) for _ in range(n)]
            flagged = True
        pairs.append(
            PremiseTrainingExample(
                goal_id=rec.id,
                goal_text=rec.goal_type,
                positives=positives,
                negatives=negatives,
                with_replacement=flagged,
            )
        )
    return pairs


def premise_text_map(records: Sequence[DefinitionRecord]) -> dict[str, str]:
    """Text shown to the embedder for a premise name: that record's goal type."""
    return {rec.id: rec.goal_type for rec in records}


class _BaseCache:
    """Memoized base embeddings keyed by text."""

    def __init__(self, provider: EmbeddingProvider):
        self.provider = provider
        self._cache: dict[str, np.ndarray] = {}

    def get(self, text: str) -> np.ndarray:
        vec = self._cache.get(text)
        if vec is None:
            vec = self.provider.embed_text(text).values
            self._cache[text] = vec
        return vec


def _premise_text(name: str, name_texts: Mapping[str, str] | None) -> str:
    if name_texts is None:
        return name
    return name_texts.get(name, name)


def loss(
    model: PremiseModel,
    example: PremiseTrainingExample,
    base_embedder: EmbeddingProvider,
    name_texts: Mapping[str, str] | None = None,
) -> float:
    """Mean-square alignment error over raw head dot products."""
    cache = _BaseCache(base_embedder)
    return _example_loss(model.weights, example, cache, name_texts)


def _example_loss(
    W: np.ndarray,
    example: PremiseTrainingExample,
    cache: _BaseCache,
    name_texts: Mapping[str, str] | None,
) -> float:
    n = len(example.positives)
    eg = W @ cache.get(example.goal_text)
    total = 0.0
    for q in example.negatives:
        total += float(eg @ (W @ cache.get(_premise_text(q, name_texts)))) ** 2
    for p in example.positives:
        total += (float(eg @ (W @ cache.get(_premise_text(p, name_texts)))) - 1.0) ** 2
    return total / (2.0 * n)


def _example_grad(
    W: np.ndarray,
    example: PremiseTrainingExample,
    cache: _BaseCache,
    name_texts: Mapping[str, str] | None,
) -> np.ndarray:
    """Analytic dL/dW for one example.

    With s_x = (W bg) @ (W bx), dL/ds is s/n for negatives and (s-1)/n for
    positives, and ds/dW = (W bx) bg^T + (W bg) bx^T.
    """
    n = len(example.positives)
    bg = cache.get(example.goal_text)
    eg = W @ bg
    grad = np.zeros_like(W)
    for names, offset in ((example.negatives, 0.0), (example.positives, 1.0)):
        for x in names:
            bx = cache.get(_premise_text(x, name_texts))
            ex = W @ bx
            coeff = (float(eg @ ex) - offset) / n
            grad += coeff * (np.outer(eg, bx) + np.outer(ex, bg))
    return grad


def train(
    model: PremiseModel,
    pairs: Sequence[PremiseTrainingExample],
    epochs: int,
    learning_rate: float,
    batch_size: int,
    seed: int,
    base_embedder: EmbeddingProvider,
    name_texts: Mapping[str, str] | None = None,
) -> tuple[PremiseModel, list[float]]:
    """Minibatch gradient descent on the mean example loss.

    Deterministic for a fixed seed; returns the trained model and the mean
    loss over all pairs at the end of every epoch. Raises NonFiniteLoss with
    the epoch index if the loss diverges.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if learning_rate < 0:
        raise ValueError("learning_rate must be >= 0")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    if not pairs:
        raise PremselError("no training pairs")

    cache = _BaseCache(base_embedder)
    W = np.array(model.weights, dtype=np.float64, copy=True)
    rng = random.Random(seed)
    trace: list[float] = []
    for epoch in range(epochs):
        order = list(range(len(pairs)))
        rng.shuffle(order)
        for start in range(0, len(order), batch_size):
            batch = order[start : start + batch_size]
            grad = np.zeros_like(W)
            for idx in batch:
                grad += _example_grad(W, pairs[idx], cache, name_texts)
            W -= learning_rate * (grad / len(batch))
        mean_loss = sum(_example_loss(W, ex, cache, name_texts) for ex in pairs) / len(pairs)
        if not np.isfinite(mean_loss):
            raise NonFiniteLoss(epoch)
        trace.append(mean_loss)
    trained = PremiseModel(
        base_dimension=model.base_dimension,
        head_dimension=model.head_dimension,
        weights=W,
        seed=model.seed,
    )
    return trained, trace


@dataclass
class PremiseRanking:
    goal_id: str
    ranked: list[tuple[str, float]] = field(default_factory=list)

    def names(self) -> list[str]:
        return [name for name, _ in self.ranked]


def _safe_cosine(a: np.ndarray, b: np.ndarray) -> float:
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 0.0
    return max(-1.0, min(1.0, float(a @ b) / (na * nb)))


def rank_premises(
    model: PremiseModel,
    goal_text: str,
    candidate_names: Sequence[str],
    name_texts: Mapping[str, str],
    base_embedder: EmbeddingProvider,
    goal_id: str = "",
) -> PremiseRanking:
    """Score candidates by cosine between head embeddings of goal and premise
    text; descending scores, ties broken by ascending name."""
    cache = _BaseCache(base_embedder)
    eg = model.head(cache.get(goal_text))
    scored: list[tuple[str, float]] = []
    seen = set()
    for name in candidate_names:
        if name in seen:
            continue
        seen.add(name)
        if name not in name_texts:
            raise MissingText(name)
        ex = model.head(cache.get(name_texts[name]))
        scored.append((name, _safe_cosine(eg, ex)))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return PremiseRanking(goal_id=goal_id, ranked=scored)


def evaluate_ranking(
    rankings: Sequence[PremiseRanking],
    ground_truth: Mapping[str, set[str]],
) -> tuple[float, float]:
    """(MAP, NDCG) over the rankings with binary relevance.

    AP averages precision at each positive's rank over the total number of
    positives; DCG is sum rel_i / log2(i + 1) with ranks starting at 1, and
    the ideal DCG places all positives first.
    """
    if not rankings:
        raise PremselError("no rankings to evaluate")
    ap_values = []
    ndcg_values = []
    for ranking in rankings:
        positives = ground_truth.get(ranking.goal_id, set())
        if not positives:
            raise NoPositives(ranking.goal_id)
        hits = 0
        precision_sum = 0.0
        dcg = 0.0
        for rank, (name, _) in enumerate(ranking.ranked, start=1):
            if name in positives:
                hits += 1
                precision_sum += hits / rank
                dcg += 1.0 / np.log2(rank + 1)
        ap_values.append(precision_sum / len(positives))
        idcg = sum(1.0 / np.log2(i + 1) for i in range(1, len(positives) + 1))
        ndcg_values.append(dcg / idcg)
    return float(np.mean(ap_values)), float(np.mean(ndcg_values))


class PremiseMode(enum.Enum):
    MODEL = "model"
    ORACLE = "oracle"
    NONE = "none"


def premise_source(
    mode: PremiseMode,
    record: DefinitionRecord,
    model: PremiseModel | None = None,
    base_embedder: EmbeddingProvider | None = None,
    name_texts: Mapping[str, str] | None = None,
) -> list[str]:
    """Premise names to show in the prompt, per the configured mode."""
    if mode is PremiseMode.NONE:
        return []
    if mode is PremiseMode.ORACLE:
        return list(record.ideal_premises)
    if model is None or base_embedder is None:
        raise ModelRequired("premise mode 'model' needs a trained model and base embedder")
    texts = dict(name_texts or {})
    for name in record.in_scope:
        texts.setdefault(name, name)
    ranking = rank_premises(
        model, record.goal_type, sorted(set(record.in_scope)), texts, base_embedder,
        goal_id=record.id,
    )
    return ranking.names()
