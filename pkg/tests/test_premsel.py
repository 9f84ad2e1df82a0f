import math
import random

import numpy as np
import pytest

from proofsynth.embed import LocalHashedProvider
from proofsynth.premsel import (
    MissingText,
    ModelRequired,
    NoPositives,
    NonFiniteLoss,
    PremiseMode,
    PremiseModel,
    PremiseRanking,
    PremiseTrainingExample,
    build_training_pairs,
    evaluate_ranking,
    init_model,
    load_model,
    loss,
    premise_source,
    premise_text_map,
    rank_premises,
    save_model,
    train,
)

from conftest import VectorProvider, make_record, one_hot

D = 8
HASHED = LocalHashedProvider(dimension=16)


def model_with(columns, k=4, d=D):
    """Model whose W maps one-hot base vector e_i to the given k-vector."""
    W = np.zeros((k, d))
    for idx, col in columns.items():
        W[:, idx] = col
    return PremiseModel(base_dimension=d, head_dimension=k, weights=W, seed=0)


class TestLoss:
    def test_perfect_alignment_is_zero(self):
        provider = VectorProvider(
            {"g": one_hot(D, 0), "p": one_hot(D, 1), "q": one_hot(D, 2)}, D
        )
        # W e0 = u, W e1 = u (dot 1), W e2 = orthogonal to u (dot 0)
        model = model_with({0: one_hot(4, 0), 1: one_hot(4, 0), 2: one_hot(4, 1)})
        ex = PremiseTrainingExample("g", "g", positives=["p"], negatives=["q"])
        assert loss(model, ex, provider) == 0.0

    def test_half_half_is_quarter(self):
        provider = VectorProvider(
            {"g": one_hot(D, 0), "p": one_hot(D, 1), "q": one_hot(D, 2)}, D
        )
        model = model_with(
            {0: one_hot(4, 0), 1: one_hot(4, 0, 0.5), 2: one_hot(4, 0, 0.5)}
        )
        ex = PremiseTrainingExample("g", "g", positives=["p"], negatives=["q"])
        # (1/2) * ((0.5)^2 + (0.5 - 1)^2) = 0.25
        assert loss(model, ex, provider) == pytest.approx(0.25, abs=1e-15)

    def test_matches_scalar_oracle(self):
        rng = random.Random(31)
        for _ in range(30):
            n = rng.randrange(1, 4)
            ex = PremiseTrainingExample(
                "g", "goal text",
                positives=[f"p{i}" for i in range(n)],
                negatives=[f"q{i}" for i in range(n)],
            )
            k, d = rng.randrange(2, 5), 16
            W = np.array([[rng.uniform(-1, 1) for _ in range(d)] for _ in range(k)])
            model = PremiseModel(d, k, W, seed=0)
            got = loss(model, ex, HASHED)

            # scalar recomputation without numpy matmul
            def base(t):
                return HASHED.embed_text(t).values

            def head(v):
                return [sum(W[r][c] * v[c] for c in range(d)) for r in range(k)]

            eg = head(base("goal text"))
            total = 0.0
            for q in ex.negatives:
                s = sum(a * b for a, b in zip(eg, head(base(q))))
                total += s * s
            for p in ex.positives:
                s = sum(a * b for a, b in zip(eg, head(base(p))))
                total += (s - 1.0) ** 2
            assert got == pytest.approx(total / (2 * n), abs=1e-12)

    def test_loss_nonnegative(self):
        rng = random.Random(8)
        for _ in range(20):
            model = init_model(16, 4, seed=rng.randrange(10_000))
            ex = PremiseTrainingExample("g", "some goal", ["alpha"], ["beta"])
            assert loss(model, ex, HASHED) >= 0.0


def central_difference_grad(model, ex, provider, h=1e-5):
    W = model.weights
    grad = np.zeros_like(W)
    for r in range(W.shape[0]):
        for c in range(W.shape[1]):
            up = PremiseModel(model.base_dimension, model.head_dimension, W.copy(), 0)
            dn = PremiseModel(model.base_dimension, model.head_dimension, W.copy(), 0)
            up.weights[r, c] += h
            dn.weights[r, c] -= h
            grad[r, c] = (loss(up, ex, provider) - loss(dn, ex, provider)) / (2 * h)
    return grad


class TestGradient:
    def test_matches_central_differences(self):
        from proofsynth.premsel import _BaseCache, _example_grad

        rng = random.Random(404)
        worst = 0.0
        for case in range(50):
            n = rng.randrange(1, 4)
            ex = PremiseTrainingExample(
                f"g{case}", f"goal {case}",
                positives=[f"p{case}_{i}" for i in range(n)],
                negatives=[f"q{case}_{i}" for i in range(n)],
            )
            k = rng.randrange(2, 5)
            model = init_model(16, k, seed=case)
            model.weights = model.weights * rng.uniform(1.0, 20.0)
            analytic = _example_grad(model.weights, ex, _BaseCache(HASHED), None)
            fd = central_difference_grad(model, ex, HASHED)
            rel = np.abs(analytic - fd) / np.maximum(
                np.maximum(np.abs(analytic), np.abs(fd)), 1e-6
            )
            worst = max(worst, float(rel.max()))
        assert worst < 1e-4


def separable_setup(n_examples=3, d=D):
    vectors = {}
    pairs = []
    for i in range(n_examples):
        g = f"goal{i}"
        p = f"pos{i}"
        q = f"neg{i}"
        vectors[g] = one_hot(d, 2 * i)
        vectors[p] = one_hot(d, 2 * i)  # same base direction as the goal
        vectors[q] = one_hot(d, 2 * i + 1)
        pairs.append(PremiseTrainingExample(g, g, positives=[p], negatives=[q]))
    return VectorProvider(vectors, d), pairs


class TestTrain:
    def test_separable_data_converges(self):
        provider, pairs = separable_setup()
        model = init_model(D, 4, seed=3)
        trained, trace = train(
            model, pairs, epochs=200, learning_rate=0.5, batch_size=2, seed=1,
            base_embedder=provider,
        )
        assert trace[-1] < 0.01

    def test_zero_learning_rate_constant_trace(self):
        provider, pairs = separable_setup()
        model = init_model(D, 4, seed=3)
        _, trace = train(
            model, pairs, epochs=5, learning_rate=0.0, batch_size=2, seed=1,
            base_embedder=provider,
        )
        assert len(set(trace)) == 1

    def test_bit_reproducible(self):
        provider, pairs = separable_setup()
        model = init_model(D, 4, seed=3)
        t1, trace1 = train(model, pairs, 20, 0.3, 2, seed=9, base_embedder=provider)
        t2, trace2 = train(model, pairs, 20, 0.3, 2, seed=9, base_embedder=provider)
        assert trace1 == trace2
        assert np.array_equal(t1.weights, t2.weights)

    def test_does_not_mutate_input_model(self):
        provider, pairs = separable_setup()
        model = init_model(D, 4, seed=3)
        before = model.weights.copy()
        train(model, pairs, 3, 0.3, 2, seed=9, base_embedder=provider)
        assert np.array_equal(model.weights, before)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_loss_reports_epoch(self):
        provider, pairs = separable_setup()
        model = init_model(D, 4, seed=3)
        with pytest.raises(NonFiniteLoss) as e:
            train(model, pairs, 50, 1e6, 2, seed=1, base_embedder=provider)
        assert e.value.epoch >= 0


class TestInitAndPersistence:
    def test_deterministic_init(self):
        a = init_model(32, 8, seed=5)
        b = init_model(32, 8, seed=5)
        assert np.array_equal(a.weights, b.weights)
        assert np.abs(a.weights).max() <= 0.05

    def test_save_load_roundtrip(self, tmp_path):
        model = init_model(16, 4, seed=11)
        path = tmp_path / "model.bin"
        save_model(model, path)
        loaded = load_model(path)
        assert loaded.base_dimension == 16
        assert loaded.head_dimension == 4
        assert loaded.seed == 11
        assert np.array_equal(loaded.weights, model.weights)

    def test_save_is_byte_stable(self, tmp_path):
        model = init_model(16, 4, seed=11)
        p1, p2 = tmp_path / "a.bin", tmp_path / "b.bin"
        save_model(model, p1)
        save_model(model, p2)
        assert p1.read_bytes() == p2.read_bytes()
        assert p1.read_bytes()[:4] == b"PMS1"

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"XXXX" + b"\x00" * 32)
        with pytest.raises(Exception):
            load_model(p)


class TestBuildTrainingPairs:
    def records(self):
        return [
            make_record(
                "A.uses", goal_type="int -> int", body="let uses x = helper x",
                ideal_premises=["Lib.helper"],
                in_scope=["Lib.helper", "Lib.unused1", "Lib.unused2", "Lib.unused3"],
            ),
            make_record("A.nopremise", body="let nopremise x = x", in_scope=["Lib.a"]),
        ]

    def test_zero_positive_records_skipped(self):
        pairs = build_training_pairs(self.records(), seed=1)
        assert [p.goal_id for p in pairs] == ["A.uses"]

    def test_negatives_disjoint_and_sized(self):
        pairs = build_training_pairs(self.records(), seed=1)
        ex = pairs[0]
        assert len(ex.negatives) == len(ex.positives) == 1
        assert not (set(ex.negatives) & set(ex.positives))
        assert set(ex.negatives) <= {"Lib.unused1", "Lib.unused2", "Lib.unused3"}
        assert not ex.with_replacement

    def test_same_seed_identical(self):
        a = build_training_pairs(self.records(), seed=7)
        b = build_training_pairs(self.records(), seed=7)
        assert a == b

    def test_names_in_body_or_type_excluded(self):
        rec = make_record(
            "A.g", goal_type="x:int -> Lib.t x", body="let g x = Lib.used x",
            ideal_premises=["Lib.used"],
            in_scope=["Lib.used", "Lib.t", "Lib.free"],
        )
        pairs = build_training_pairs([rec], seed=3)
        assert pairs[0].negatives == ["Lib.free"]

    def test_small_pool_samples_with_replacement(self):
        rec = make_record(
            "A.g", body="let g x = a x b x c x",
            ideal_premises=["L.a", "L.b", "L.c"],
            in_scope=["L.a", "L.b", "L.c", "L.only"],
        )
        pairs = build_training_pairs([rec], seed=3)
        assert pairs[0].with_replacement
        assert pairs[0].negatives == ["L.only"] * 3

    def test_empty_pool_skips_record(self):
        rec = make_record(
            "A.g", body="let g x = a x", ideal_premises=["L.a"], in_scope=["L.a"],
        )
        assert build_training_pairs([rec], seed=3) == []


class TestRankPremises:
    def test_identical_text_ranked_first(self):
        model = init_model(16, 4, seed=2)
        names = ["cand.same", "cand.other"]
        texts = {"cand.same": "the goal", "cand.other": "something else"}
        ranking = rank_premises(model, "the goal", names, texts, HASHED)
        assert ranking.ranked[0][0] == "cand.same"
        assert ranking.ranked[0][1] == pytest.approx(1.0, abs=1e-9)

    def test_matches_bruteforce_cosine_oracle(self):
        model = init_model(16, 4, seed=6)
        names = [f"n{i}" for i in range(4)]
        texts = {n: f"text for {n}" for n in names}
        ranking = rank_premises(model, "a goal", names, texts, HASHED)

        def oracle_score(text):
            g = model.weights @ HASHED.embed_text("a goal").values
            x = model.weights @ HASHED.embed_text(text).values
            return float(g @ x) / (np.linalg.norm(g) * np.linalg.norm(x))

        want = sorted(names, key=lambda n: (-oracle_score(texts[n]), n))
        assert ranking.names() == want
        for name, score in ranking.ranked:
            assert score == pytest.approx(oracle_score(texts[name]), abs=1e-9)

    def test_empty_candidates(self):
        model = init_model(16, 4, seed=2)
        assert rank_premises(model, "goal", [], {}, HASHED).ranked == []

    def test_missing_text(self):
        model = init_model(16, 4, seed=2)
        with pytest.raises(MissingText):
            rank_premises(model, "goal", ["x"], {}, HASHED)

    def test_scores_non_increasing(self):
        model = init_model(16, 4, seed=12)
        names = [f"n{i}" for i in range(8)]
        texts = {n: f"type {i} of {n}" for i, n in enumerate(names)}
        scores = [s for _, s in rank_premises(model, "goal", names, texts, HASHED).ranked]
        assert scores == sorted(scores, reverse=True)

    def test_scale_invariance_of_order(self):
        model = init_model(16, 4, seed=12)
        doubled = PremiseModel(16, 4, model.weights * 2.0, seed=12)
        names = [f"n{i}" for i in range(6)]
        texts = {n: f"type {i} {n}" for i, n in enumerate(names)}
        a = rank_premises(model, "goal", names, texts, HASHED).names()
        b = rank_premises(doubled, "goal", names, texts, HASHED).names()
        assert a == b


def ap_ndcg_oracle(ranked_names, positives):
    # brute-force metric oracle, independent of the implementation
    precisions = []
    seen = 0
    dcg = 0.0
    for i, name in enumerate(ranked_names, start=1):
        if name in positives:
            seen += 1
            precisions.append(seen / i)
            dcg += 1.0 / math.log2(i + 1)
    ap = sum(precisions) / len(positives)
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, len(positives) + 1))
    return ap, dcg / idcg


class TestEvaluateRanking:
    def ranking(self, goal_id, names):
        return PremiseRanking(
            goal_id=goal_id,
            ranked=[(n, 1.0 - i * 0.01) for i, n in enumerate(names)],
        )

    def test_perfect_ranking(self):
        r = self.ranking("g", ["p1", "p2", "n1", "n2"])
        m, n = evaluate_ranking([r], {"g": {"p1", "p2"}})
        assert m == 1.0
        assert n == 1.0

    def test_single_positive_at_rank_two(self):
        r = self.ranking("g", ["n1", "p1"])
        m, n = evaluate_ranking([r], {"g": {"p1"}})
        assert m == pytest.approx(0.5, abs=1e-12)
        assert n == pytest.approx(1.0 / math.log2(3), abs=1e-12)

    def test_matches_bruteforce_oracle(self):
        rng = random.Random(55)
        for _ in range(100):
            size = rng.randrange(1, 12)
            names = [f"n{i}" for i in range(size)]
            rng.shuffle(names)
            positives = set(rng.sample(names, rng.randrange(1, size + 1)))
            r = self.ranking("g", names)
            got = evaluate_ranking([r], {"g": positives})
            want = ap_ndcg_oracle(names, positives)
            assert got[0] == pytest.approx(want[0], abs=1e-12)
            assert got[1] == pytest.approx(want[1], abs=1e-12)

    def test_goal_permutation_invariance(self):
        r1 = self.ranking("g1", ["p", "n"])
        r2 = self.ranking("g2", ["n", "p"])
        truth = {"g1": {"p"}, "g2": {"p"}}
        assert evaluate_ranking([r1, r2], truth) == evaluate_ranking([r2, r1], truth)

    def test_no_positives_raises(self):
        r = self.ranking("g", ["a"])
        with pytest.raises(NoPositives):
            evaluate_ranking([r], {"g": set()})


class TestPremiseSource:
    def rec(self):
        return make_record(
            "A.g", goal_type="int -> int", body="let g x = h x",
            ideal_premises=["L.h"], in_scope=["L.h", "L.other"],
        )

    def test_oracle_mode(self):
        assert premise_source(PremiseMode.ORACLE, self.rec()) == ["L.h"]

    def test_none_mode(self):
        assert premise_source(PremiseMode.NONE, self.rec()) == []

    def test_model_required(self):
        with pytest.raises(ModelRequired):
            premise_source(PremiseMode.MODEL, self.rec())

    def test_perfect_model_ranks_positives_first(self):
        # base: goal and positive share a direction, negative is orthogonal
        provider = VectorProvider(
            {"int -> int": one_hot(D, 0), "L.h": one_hot(D, 0), "L.other": one_hot(D, 1)},
            D,
        )
        model = model_with({0: one_hot(4, 0), 1: one_hot(4, 1)})
        names = premise_source(
            PremiseMode.MODEL, self.rec(), model=model, base_embedder=provider,
            name_texts={"L.h": "L.h", "L.other": "L.other"},
        )
        assert names[0] == "L.h"


class TestPremiseTextMap:
    def test_maps_id_to_goal_type(self):
        recs = [make_record("A.x", goal_type="nat -> nat")]
        assert premise_text_map(recs) == {"A.x": "nat -> nat"}
