import json
import random

import pytest

from proofsynth.corpus import DefinitionRecord, DependenceGraph


def make_record(rec_id, **kw):
    short = rec_id.rsplit(".", 1)[-1]
    defaults = dict(
        project="proj",
        file=f"{rec_id}.fst",
        goal_type="int -> int",
        prefix=f"let {short} =",
        body=f"let {short} x = x",
        file_context=[],
        ideal_premises=[],
        in_scope=[],
        autogenerated=False,
    )
    defaults.update(kw)
    return DefinitionRecord(id=rec_id, **defaults)


def record_json(rec, file_deps=None):
    obj = rec.to_json()
    if file_deps is not None:
        obj["file_deps"] = list(file_deps)
    return json.dumps(obj)


def write_corpus(path, records, deps=None):
    """Write records as line-delimited JSON; deps maps file -> [dep files]."""
    deps = deps or {}
    emitted = set()
    lines = []
    for rec in records:
        file_deps = None
        if rec.file not in emitted:
            file_deps = deps.get(rec.file, [])
            emitted.add(rec.file)
        lines.append(record_json(rec, file_deps))
    path.write_text("\n".join(lines) + ("\n" if lines else ""))
    return path


def random_dag(rng, n, edge_prob=0.3):
    """Random DAG over files f0..f{n-1}; edges point from higher to lower index."""
    g = DependenceGraph()
    files = [f"f{i}" for i in range(n)]
    for f in files:
        g.add_node(f)
    for i in range(n):
        for j in range(i):
            if rng.random() < edge_prob:
                g.add_edge(files[i], files[j])
    return g, files


@pytest.fixture
def rng():
    return random.Random(20240501)


import numpy as np

from proofsynth.embed import EmbeddingProvider, EmbeddingVector


class VectorProvider(EmbeddingProvider):
    """Test fixture: maps known texts to fixed base vectors."""

    kind = "fixture"

    def __init__(self, vectors, dimension):
        super().__init__(dimension)
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}

    def embed_text(self, text):
        return EmbeddingVector.of(self.vectors[text])


def one_hot(dim, idx, scale=1.0):
    v = np.zeros(dim)
    v[idx] = scale
    return v
