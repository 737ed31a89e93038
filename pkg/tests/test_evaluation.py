import csv
import io
import json

import numpy as np
import pytest

from summrerank.encoder import OracleScorer
from summrerank.evaluation import (
    RankedPool,
    alpha_filter_rate,
    corpus_z_distribution,
    histogram_csv,
    identical_score_stats,
    model_order,
    oracle_order,
    pairwise_f1_fp,
    ranked,
    ranking_report,
    rows_to_csv,
    semantic_source,
    sweep,
    sweep_table,
    topk_quality,
    z_distribution,
    z_statistic,
)
from summrerank.pool import CandidatePool, Document, generate_synthetic_corpus
from summrerank.training import TrainConfig, train

from . import oracles


def scored_pool(lex, sem, pid="p"):
    m = len(lex)
    doc = Document.from_text(pid, "a b.")
    return CandidatePool(doc, "ref", tuple(f"c{i}" for i in range(m)), tuple(map(float, lex)), tuple(map(float, sem)))


class TestZ:
    def test_coinciding_argmax(self):
        assert z_statistic([0.9, 0.5, 0.1], [0.8, 0.3, 0.2]) == 1

    def test_semantic_max_last(self):
        assert z_statistic([0.9, 0.5, 0.1], [0.1, 0.2, 0.3]) == 3

    def test_all_identical(self):
        assert z_statistic([0.5] * 4, [0.5] * 4) == 1

    def test_empty(self):
        with pytest.raises(ValueError):
            z_statistic([], [])

    def test_distribution_examples(self):
        assert z_distribution([1, 1, 1], 3)["percent"] == [100.0, 0.0, 0.0]
        dist = z_distribution([1, 1, 2, 3], 3)
        assert dist["share_z_gt_1"] == 0.5
        assert dist["counts"] == [2, 1, 1]

    def test_corpus(self):
        pools = [scored_pool([0.9, 0.1], [0.9, 0.1], "a"), scored_pool([0.9, 0.1], [0.1, 0.9], "b")]
        dist = corpus_z_distribution(pools)
        assert dist["z"] == [1, 2]
        assert sum(dist["counts"]) == 2

    def test_matches_brute_force(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            m = int(rng.integers(1, 7))
            lex, sem = rng.choice([0.1, 0.4, 0.7], m), rng.choice([0.2, 0.5, 0.8], m)
            assert z_statistic(lex, sem) == oracles.z_brute(lex.tolist(), sem.tolist())


class TestOracleOrder:
    def test_sorted_identity(self):
        assert oracle_order(scored_pool([0.9, 0.5, 0.1], [0, 0, 0])).order.tolist() == [0, 1, 2]

    def test_reverse(self):
        assert oracle_order(scored_pool([0.1, 0.5, 0.9], [0, 0, 0])).order.tolist() == [2, 1, 0]

    def test_ties_stable(self):
        assert oracle_order(scored_pool([0.3, 0.9, 0.3, 0.9], [0] * 4)).order.tolist() == [1, 3, 0, 2]

    def test_semantic(self):
        assert oracle_order(scored_pool([0.1, 0.2], [0.9, 0.1]), by="semantic").order.tolist() == [0, 1]

    def test_invalid_permutation(self):
        with pytest.raises(ValueError):
            RankedPool(scored_pool([0.1, 0.2], [0.1, 0.2]), np.array([0, 0]), np.zeros(2), np.zeros(2))

    def test_unknown_oracle(self):
        with pytest.raises(ValueError):
            oracle_order(scored_pool([0.1], [0.1]), by="bleu")


class TestTopK:
    def test_lexical_oracle_top1_is_mean_max(self):
        pools = [scored_pool([0.2, 0.8, 0.5], [0, 0, 0], "a"), scored_pool([0.6, 0.1, 0.4], [0, 0, 0], "b")]
        assert topk_quality([oracle_order(p) for p in pools], 1)[1] == pytest.approx(0.7)

    def test_k_equals_m_is_order_invariant(self):
        pool = scored_pool([0.2, 0.8, 0.5], [0.3, 0.1, 0.9])
        a = topk_quality([ranked(pool, [0, 1, 2])], 3)
        b = topk_quality([ranked(pool, [2, 0, 1])], 3)
        assert a == pytest.approx(b)
        assert a[0] == pytest.approx(np.mean([0.3, 0.1, 0.9]))

    def test_k_larger_than_pool_uses_all(self):
        pool = scored_pool([0.2, 0.8], [0.4, 0.6])
        assert topk_quality([oracle_order(pool)], 5) == pytest.approx((0.5, 0.5))

    def test_random_fixture_matches_brute_force(self):
        rng = np.random.default_rng(1)
        rps = []
        for i in range(5):
            lex, sem = rng.uniform(size=6), rng.uniform(size=6)
            rps.append(ranked(scored_pool(lex, sem, f"p{i}"), rng.permutation(6)))
        for k in (1, 3, 5):
            sem_k = np.mean([np.mean([rp.semantic[j] for j in list(rp.order)[:k]]) for rp in rps])
            lex_k = np.mean([np.mean([rp.lexical[j] for j in list(rp.order)[:k]]) for rp in rps])
            assert topk_quality(rps, k) == pytest.approx((sem_k, lex_k))

    def test_invalid_k(self):
        with pytest.raises(ValueError):
            topk_quality([], 0)


class TestPairwise:
    def test_concordant(self):
        rp = ranked(scored_pool([0.9, 0.5, 0.1], [0.8, 0.4, 0.2]), [0, 1, 2])
        assert pairwise_f1_fp([rp]) == (1.0, 0.0)

    def test_single_discordant_pair(self):
        rp = ranked(scored_pool([0.9, 0.5], [0.2, 0.8]), [0, 1])
        assert pairwise_f1_fp([rp])[1] == 1.0

    def test_singleton_pool_has_no_pairs(self):
        assert pairwise_f1_fp([ranked(scored_pool([0.3], [0.3]), [0])]) == (0.0, 0.0)

    def test_random_four_candidate_fixture(self):
        rng = np.random.default_rng(2)
        lex, sem = rng.uniform(size=4), rng.uniform(size=4)
        order = rng.permutation(4)
        want = oracles.f1_fp_from_counts(*oracles.pairs_brute(order.tolist(), lex.tolist(), sem.tolist()))
        assert pairwise_f1_fp([ranked(scored_pool(lex, sem), order)]) == pytest.approx(want)

    def test_fewer_discordant_pairs_never_lowers_f1(self):
        # ranking by lexical; semantic starts reversed and gets progressively fixed
        lex = [0.9, 0.7, 0.5, 0.3, 0.1]
        prev_f1, prev_fp = -1.0, 2.0
        for fixed in range(6):
            sem = sorted(lex[:fixed], reverse=True) + sorted(lex[fixed:])
            f1, fp = pairwise_f1_fp([oracle_order(scored_pool(lex, sem))])
            assert f1 >= prev_f1 and fp <= prev_fp
            prev_f1, prev_fp = f1, fp


class TestIdenticalScores:
    def test_counted(self):
        # "a b" and "c d" are different texts with the same R-avg against "a b c d"
        doc = Document.from_text("p", "x.")
        pool = CandidatePool(doc, "a b c d", ("a b", "c d", "a x y z"))
        assert identical_score_stats([pool]) == 1.0

    def test_all_distinct(self):
        doc = Document.from_text("p", "x.")
        pool = CandidatePool(doc, "a b c d", ("a b c d", "a b", "zzz"))
        assert identical_score_stats([pool]) == 0.0

    def test_duplicates_removed_first(self):
        doc = Document.from_text("p", "x.")
        pool = CandidatePool(doc, "a b c d", ("a b", "a b", "zzz"))
        assert identical_score_stats([pool]) == 0.0
        assert identical_score_stats([]) == 0.0


class TestReport:
    def test_invariants(self):
        pools = generate_synthetic_corpus(12, 6, seed=3)
        report, rows = ranking_report([oracle_order(p) for p in pools])
        assert sum(report.z_histogram) == report.n_pools == len(rows) == 12
        for v in (report.f1, report.fp_rate, report.identical_score_rate, report.z_share_gt_1):
            assert 0.0 <= v <= 1.0
        assert report.semantic_source == "greedy-token-f1"
        parsed = list(csv.DictReader(io.StringIO(rows_to_csv(rows))))
        assert len(parsed) == 12 and parsed[0]["id"] == pools[0].id
        json.loads(json.dumps(report.to_dict()))

    def test_histogram_csv(self):
        assert histogram_csv([1, 1]).splitlines() == ["z,count,percent", "1,1,50.000000", "2,1,50.000000"]

    def test_semantic_source_labels(self):
        a = scored_pool([0.1], [0.1], "a")
        b = CandidatePool(Document.from_text("b", "x."), "x", ("x",))
        assert semantic_source([a]) == "sidecar"
        assert semantic_source([b]) == "greedy-token-f1"
        assert semantic_source([a, b]) == "mixed"


class TestSweep:
    corpus = generate_synthetic_corpus(10, 16, seed=7, false_positives=1)
    base = TrainConfig(epochs=1, seed=0)

    def test_singleton_grid_matches_direct_run(self):
        rows = sweep({"phi": [0.9]}, self.corpus, self.base)
        ckpt = train(self.corpus, self.base)
        report, _ = ranking_report([model_order(ckpt.model, p) for p in self.corpus])
        assert len(rows) == 1 and rows[0]["report"] == report.to_dict()

    def test_phi_grid_filter_rate_monotone(self):
        rows = sweep({"phi": [0.7, 0.9]}, self.corpus, self.base)
        assert rows[1]["alpha"]["filtered"] >= rows[0]["alpha"]["filtered"]
        assert alpha_filter_rate(self.corpus, 0.9)["false_positive_filtered"] == 1.0

    def test_candidate_count_grid_truncates(self):
        rows = sweep({"n_candidates": [4, 8, 16]}, self.corpus, self.base)
        assert [r["pool_sizes"] for r in rows] == [[4], [8], [16]]
        assert [r["report"]["n_pools"] for r in rows] == [10, 10, 10]

    def test_failing_cell_does_not_abort(self):
        rows = sweep([{"phi": 0.9}, {"phi": 7.0}, {"lam": 0.1}], self.corpus, self.base)
        assert "error" in rows[1] and "error" not in rows[0] and "error" not in rows[2]
        table = sweep_table(rows)
        assert table[1]["error"].startswith("ValueError")
        assert table[0]["error"] == ""


def test_model_order_oracle_scorer():
    pools = generate_synthetic_corpus(4, 5, seed=1)
    for pool in pools:
        assert model_order(OracleScorer(), pool).order.tolist() == oracle_order(pool).order.tolist()
