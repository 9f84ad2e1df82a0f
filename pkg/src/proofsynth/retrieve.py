"""Related-example retrieval: exact cosine ranking under eligibility and budgets."""

from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .corpus import DefinitionRecord, DependenceGraph, SplitAssignment, Split
from .embed import EmbeddingProvider, EmbeddingVector
from .lang import count_tokens


class RetrieveError(Exception):
    pass


class EmptyCorpus(RetrieveError):
    pass


class UnknownRecord(RetrieveError):
    pass


class EmbeddingFailed(RetrieveError):
    def __init__(self, record_id: str, cause: Exception):
        super().__init__(f"embedding failed for record {record_id}: {cause}")
        self.record_id = record_id


class RetrievalStrategy(enum.Enum):
    TRAIN_ONLY = "train_only"
    NON_DEPENDENT = "non_dependent"


@dataclass(frozen=True)
class RetrievalHit:
    record_id: str
    similarity: float
    type_text: str
    body_text: str
    token_cost: int


class RetrievalIndex:
    """Immutable matrix of goal-type embeddings plus per-record metadata."""

    def __init__(
        self,
        record_ids: list[str],
        matrix: np.ndarray,
        type_texts: list[str],
        body_texts: list[str],
        token_costs: list[int],
        provider: EmbeddingProvider,
    ):
        self.record_ids = record_ids
        self.matrix = matrix
        self.type_texts = type_texts
        self.body_texts = body_texts
        self.token_costs = token_costs
        self.provider = provider
        self._pos = {rid: i for i, rid in enumerate(record_ids)}

    def __len__(self) -> int:
        return len(self.record_ids)

    def content_hash(self) -> str:
        h = hashlib.sha256()
        h.update(self.provider.provider_id.encode())
        for rid, t, b in zip(self.record_ids, self.type_texts, self.body_texts):
            h.update(b"\x00" + rid.encode() + b"\x00" + t.encode() + b"\x00" + b.encode())
        return h.hexdigest()


Tokenizer = Callable[[str], int]


def build_index(
    records: Sequence[DefinitionRecord],
    provider: EmbeddingProvider,
    tokenizer: Tokenizer = count_tokens,
) -> RetrievalIndex:
    """Embed every record's goal type once; the index is immutable afterwards."""
    if not records:
        raise EmptyCorpus("cannot build an index over zero records")
    rows = []
    ids, types, bodies, costs = [], [], [], []
    for rec in records:
        try:
            vec = provider.embed_text(rec.goal_type)
        except Exception as e:
            raise EmbeddingFailed(rec.id, e) from e
        rows.append(vec.values / (vec.norm if vec.norm else 1.0))
        ids.append(rec.id)
        types.append(rec.goal_type)
        bodies.append(rec.body)
        costs.append(tokenizer(rec.goal_type) + tokenizer(rec.body))
    return RetrievalIndex(
        record_ids=ids,
        matrix=np.vstack(rows),
        type_texts=types,
        body_texts=bodies,
        token_costs=costs,
        provider=provider,
    )


def eligible(
    strategy: RetrievalStrategy,
    records: Sequence[DefinitionRecord],
    splits: SplitAssignment,
    graph: DependenceGraph,
    query_record: DefinitionRecord,
) -> set[str]:
    """Record ids a query may retrieve from, per the configured strategy.

    TrainOnly: records in Train files. NonDependent: records in files outside
    the dependents closure of the query's file. The query itself is excluded.
    """
    if all(rec.id != query_record.id for rec in records):
        raise UnknownRecord(query_record.id)
    if strategy is RetrievalStrategy.TRAIN_ONLY:
        train_files = splits.files(Split.TRAIN)
        ids = {rec.id for rec in records if rec.file in train_files}
    else:
        blocked = graph.dependents_closure(query_record.file)
        ids = {rec.id for rec in records if rec.file not in blocked}
    ids.discard(query_record.id)
    return ids


def retrieve_related(
    index: RetrievalIndex,
    query_type: str,
    eligible_ids: Iterable[str],
    budget_tokens: int,
) -> list[RetrievalHit]:
    """Rank eligible records by cosine to the query type and greedily fill.

    Hits come out in descending similarity (ties by ascending record id); a
    hit is included iff its token cost fits the remaining budget, and a
    too-large hit does not stop the scan.
    """
    if budget_tokens < 0:
        raise ValueError("budget_tokens must be >= 0")
    allowed = set(eligible_ids) & set(index.record_ids)
    if not allowed or budget_tokens == 0:
        return []
    qvec = index.provider.embed_text(query_type)
    q = qvec.values / (qvec.norm if qvec.norm else 1.0)
    sims = np.clip(index.matrix @ q, -1.0, 1.0)

    candidates = sorted(
        (rid for rid in allowed),
        key=lambda rid: (-sims[index._pos[rid]], rid),
    )
    hits: list[RetrievalHit] = []
    remaining = budget_tokens
    for rid in candidates:
        i = index._pos[rid]
        cost = index.token_costs[i]
        if cost <= remaining:
            hits.append(
                RetrievalHit(
                    record_id=rid,
                    similarity=float(sims[i]),
                    type_text=index.type_texts[i],
                    body_text=index.body_texts[i],
                    token_cost=cost,
                )
            )
            remaining -= cost
    return hits


def save_index(index: RetrievalIndex, path: str | Path) -> None:
    """Persist the index as .npz plus a JSON sidecar carrying the content hash."""
    path = Path(path)
    np.savez(path, matrix=index.matrix)
    meta = {
        "record_ids": index.record_ids,
        "type_texts": index.type_texts,
        "body_texts": index.body_texts,
        "token_costs": index.token_costs,
        "provider_id": index.provider.provider_id,
        "content_hash": index.content_hash(),
    }
    Path(str(path) + ".meta.json").write_text(json.dumps(meta))


def load_index(path: str | Path, provider: EmbeddingProvider) -> RetrievalIndex:
    """Load a persisted index; raises if it was built by a different provider
    or its content hash no longer matches."""
    path = Path(path)
    npz = str(path) if str(path).endswith(".npz") else str(path) + ".npz"
    data = np.load(npz)
    meta = json.loads(Path(str(path) + ".meta.json").read_text())
    if meta["provider_id"] != provider.provider_id:
        raise RetrieveError(
            f"index built with provider {meta['provider_id']}, not {provider.provider_id}"
        )
    index = RetrievalIndex(
        record_ids=list(meta["record_ids"]),
        matrix=data["matrix"],
        type_texts=list(meta["type_texts"]),
        body_texts=list(meta["body_texts"]),
        token_costs=list(meta["token_costs"]),
        provider=provider,
    )
    if index.content_hash() != meta["content_hash"]:
        raise RetrieveError("index content hash mismatch; rebuild the index")
    return index
