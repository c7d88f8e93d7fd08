"""
Task Query Tests

Query vectors built from labeled data in the three query modes, the
merged candidate pool, labeled dataset files and query files.
"""

import numpy as np
import pytest

from models.embedder import SentenceEncoder, WordVectorTable
from models.errors import ConfigError, EmbeddingError, FormatError, RetrievalError
from models.sentence_bank import EmbeddingMatrix
from models.task_queries import (
    ALL_AVERAGE,
    LABEL_AVERAGE,
    PER_SENTENCE,
    LabeledDataset,
    QuerySet,
    build_queries,
    default_per_query_k,
    query_mode,
    read_queries,
    retrieve_pool,
    write_queries,
)
from models.vector_index import FlatIndex

pytestmark = pytest.mark.queries


@pytest.fixture
def plane_encoder() -> SentenceEncoder:
    table = WordVectorTable.from_dict({
        "great": (1.0, 0.0, 0.0),
        "fun": (0.8, 0.6, 0.0),
        "awful": (0.0, 0.0, 1.0),
        "boring": (0.0, 0.6, 0.8),
    })
    return SentenceEncoder("avg", table)


@pytest.fixture
def reviews() -> LabeledDataset:
    return LabeledDataset.from_named([
        ("pos", "great"),
        ("neg", "awful"),
        ("pos", "fun"),
        ("neg", "boring"),
        ("pos", "unknown words only"),
    ])


class TestBuildQueries:
    def test_mode_aliases(self):
        """Short mode names map to the query modes, anything else is rejected."""
        assert query_mode("all") == ALL_AVERAGE
        assert query_mode("label") == LABEL_AVERAGE
        assert query_mode("sent") == PER_SENTENCE
        with pytest.raises(ConfigError):
            query_mode("centroid")

    def test_all_average_is_one_unit_vector(self, reviews, plane_encoder):
        """All examples give a single unlabeled query at their normalized mean."""
        queries = build_queries(reviews, "all", plane_encoder)
        assert queries.vectors.shape == (1, 3)
        assert queries.labels == [None]
        expected = np.mean([[1, 0, 0], [0, 0, 1], [0.8, 0.6, 0], [0, 0.6, 0.8]], axis=0)
        np.testing.assert_allclose(queries.vectors[0], expected / np.linalg.norm(expected))

    def test_label_average_has_one_query_per_label(self, reviews, plane_encoder):
        """One normalized mean per label, in label order."""
        queries = build_queries(reviews, "label", plane_encoder)
        assert queries.labels == [0, 1]
        np.testing.assert_allclose(np.linalg.norm(queries.vectors, axis=1), 1.0)
        pos = np.array([1.8, 0.6, 0.0])
        np.testing.assert_allclose(queries.vectors[0], pos / np.linalg.norm(pos))

    def test_label_average_ignores_duplicated_examples(self, reviews, plane_encoder):
        """Repeating every example leaves the label queries unchanged"""
        doubled = LabeledDataset(reviews.examples * 3, reviews.labels)
        np.testing.assert_allclose(build_queries(doubled, "label", plane_encoder).vectors,
                                   build_queries(reviews, "label", plane_encoder).vectors)

    def test_per_sentence_skips_null_embeddings(self, reviews, plane_encoder):
        """One query per embeddable example, labelled with its class."""
        queries = build_queries(reviews, "sent", plane_encoder)
        assert len(queries) == 4
        assert queries.labels == [0, 1, 0, 1]

    def test_label_without_embeddable_example(self, plane_encoder):
        """A label with no embeddable example is named in the error."""
        data = LabeledDataset.from_named([("pos", "great"), ("neg", "nothing known")])
        with pytest.raises(EmbeddingError, match="neg"):
            build_queries(data, "label", plane_encoder)

    def test_no_embeddable_example_at_all(self, plane_encoder):
        """No embeddable example leaves nothing to average."""
        data = LabeledDataset.from_named([("pos", "zzz"), ("neg", "qqq")])
        with pytest.raises(EmbeddingError):
            build_queries(data, "all", plane_encoder)


class TestRetrievePool:
    def test_union_keeps_best_score_and_its_query_label(self, reviews, plane_encoder):
        """
        Verify how the pool merges hits from several queries.

        A sentence found by more than one query keeps its best score and the
        label of the query that produced it.
        """
        rows = np.array([[1.0, 0.0, 0.0], [0.0, 0.0, 1.0], [0.6, 0.0, 0.8], [0.0, 1.0, 0.0]], dtype=np.float32)
        index = FlatIndex(EmbeddingMatrix(rows, np.zeros(4, dtype=bool)))
        queries = build_queries(reviews, "label", plane_encoder)
        pool = retrieve_pool(queries, index, per_query_k=3)

        ids = [entry.id for entry in pool]
        assert len(ids) == len(set(ids)), "pool must not repeat ids"
        assert [entry.score for entry in pool] == sorted((entry.score for entry in pool), reverse=True)
        by_id = {entry.id: entry for entry in pool}
        assert by_id[0].source_label == 0
        assert by_id[1].source_label == 1
        best_for_2 = max(float(q @ rows[2]) for q in queries.vectors)
        assert by_id[2].score == pytest.approx(best_for_2, abs=1e-6)

    @pytest.mark.parametrize("queries, expected_size", [
        ([[1.0, 0.0], [-1.0, 0.0]], 4),
        ([[1.0, 0.0], [0.9, 0.1]], 2),
    ])
    def test_pool_size_is_at_most_queries_times_k(self, queries, expected_size):
        """The pool reaches |queries| x k exactly when the hit sets are disjoint"""
        rows = np.array([[1.0, 0.0], [0.9, 0.1], [-1.0, 0.0], [-0.9, -0.1]], dtype=np.float32)
        rows /= np.linalg.norm(rows, axis=1, keepdims=True)
        index = FlatIndex(EmbeddingMatrix(rows, np.zeros(4, dtype=bool)))
        vectors = np.asarray(queries, dtype=np.float32)
        pool = retrieve_pool(QuerySet(PER_SENTENCE, vectors, [None, None]), index, per_query_k=2)
        hit_sets = [{hit.id for hit in hits} for hits in index.top_k_multi(vectors, 2)]
        assert len(pool) == expected_size <= 2 * 2
        assert (len(pool) == 4) == hit_sets[0].isdisjoint(hit_sets[1])

    def test_per_sentence_pool_contains_each_single_query_pool(self, rng, reviews, plane_encoder):
        """The merged pool holds every hit of every single-query search."""
        rows = rng.normal(size=(60, 3)).astype(np.float32)
        index = FlatIndex(EmbeddingMatrix(rows / np.linalg.norm(rows, axis=1, keepdims=True),
                                          np.zeros(60, dtype=bool)))
        queries = build_queries(reviews, "sent", plane_encoder)
        merged = {entry.id for entry in retrieve_pool(queries, index, per_query_k=5)}
        for vector, label in zip(queries.vectors, queries.labels):
            single = retrieve_pool(QuerySet(PER_SENTENCE, vector[None, :], [label]), index, per_query_k=5)
            assert {entry.id for entry in single} <= merged

    def test_per_query_k_must_be_positive(self, reviews, plane_encoder):
        """Retrieval depth of zero is rejected."""
        index = FlatIndex(EmbeddingMatrix(np.eye(3, dtype=np.float32), np.zeros(3, dtype=bool)))
        with pytest.raises(RetrievalError):
            retrieve_pool(build_queries(reviews, "all", plane_encoder), index, 0)

    @pytest.mark.parametrize("budget, n_queries, factor, expected", [
        (200, 2, 20, 2000),
        (10, 3, 20, 67),
        (1, 1, 1, 1),
    ])
    def test_default_per_query_k(self, budget, n_queries, factor, expected):
        """Per-query depth is the candidate budget spread over the queries."""
        assert default_per_query_k(budget, n_queries, factor) == expected

    def test_pool_from_synthetic_task_is_mostly_in_domain(self, synthetic_task, encoder, resources):
        """Label queries pull mostly in-domain sentences out of a mixed bank."""
        queries = build_queries(synthetic_task.train, "label", encoder)
        pool = retrieve_pool(queries, resources.index, per_query_k=100)
        in_domain = set(synthetic_task.in_domain_pool)
        share = np.mean([resources.bank.text(entry.id) in in_domain for entry in pool])
        assert share > 0.5, f"only {share:.0%} of retrieved sentences come from the task domain"


class TestFiles:
    def test_tsv_round_trip(self, tmp_path, reviews):
        """Labels keep first-seen order and examples come back unchanged."""
        reviews.save_tsv(tmp_path / "r.tsv")
        loaded = LabeledDataset.load_tsv(tmp_path / "r.tsv")
        assert loaded.labels == ["pos", "neg"]
        assert loaded.examples == reviews.examples
        assert loaded.counts.tolist() == [3, 2]

    def test_tsv_with_fixed_label_order(self, tmp_path, reviews):
        """A given label order overrides first-seen order."""
        reviews.save_tsv(tmp_path / "r.tsv")
        loaded = LabeledDataset.load_tsv(tmp_path / "r.tsv", labels=["neg", "pos"])
        assert loaded.label_id("pos") == 1
        assert loaded.counts.tolist() == [2, 3]

    def test_tsv_without_tab_is_rejected(self, tmp_path):
        """Each line needs a label and a tab before the text."""
        (tmp_path / "bad.tsv").write_text("pos great movie\n", encoding="utf-8")
        with pytest.raises(FormatError):
            LabeledDataset.load_tsv(tmp_path / "bad.tsv")

    def test_query_file_round_trip(self, tmp_path, reviews, plane_encoder):
        """Mode and labels survive a write and read of a query file."""
        queries = build_queries(reviews, "label", plane_encoder)
        write_queries(queries, tmp_path / "q.vec")
        loaded = read_queries(tmp_path / "q.vec")
        assert loaded.mode == LABEL_AVERAGE
        assert loaded.labels == [0, 1]
        np.testing.assert_allclose(loaded.vectors, queries.vectors, atol=1e-7)
