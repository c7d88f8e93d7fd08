"""
Augmentor Tests

Size multipliers, largest-remainder class quotas, confidence filtering
with training-set exclusion and shortfall reporting, synthetic data files.
"""

import json

import jsonschema
import numpy as np
import pytest

from models.augmentor import (
    AugmentConfig,
    SyntheticExample,
    choose_multiplier,
    class_quotas,
    filter_synthetic,
    read_synthetic,
    synthetic_record_schema,
    write_synthetic,
)
from models.errors import ConfigError, FormatError, ShortfallError

pytestmark = pytest.mark.augment


def _example(text, probs, sentence_id):
    return SyntheticExample.from_probs(text, probs, sentence_id)


class TestMultiplier:
    @pytest.mark.parametrize("train_size, expected", [(40, 100), (4999, 100), (5000, 10), (67000, 10)])
    def test_auto_multiplier(self, train_size, expected):
        """Small tasks get the larger multiplier."""
        assert choose_multiplier(train_size) == expected

    def test_explicit_multiplier_wins(self):
        """A configured multiplier overrides the automatic choice."""
        assert choose_multiplier(40, AugmentConfig(multiplier=3)) == 3

    def test_threshold_is_configurable(self):
        """The small-task threshold moves with the config."""
        assert choose_multiplier(900, AugmentConfig(small_task_threshold=500)) == 10

    def test_multiplier_must_be_positive(self):
        """A zero multiplier is a config error."""
        with pytest.raises(ConfigError):
            AugmentConfig(multiplier=0)


class TestClassQuotas:
    @pytest.mark.parametrize("counts, target, expected", [
        ((60, 40), 1000, [600, 400]),
        ((1, 1, 1), 10, [4, 3, 3]),
        ((99, 1), 10, [9, 1]),
        ((5, 0, 5), 4, [2, 0, 2]),
        ((1, 1, 8), 3, [1, 1, 1]),
    ])
    def test_examples(self, counts, target, expected):
        """Largest-remainder quotas, ties to the lower class."""
        assert class_quotas(counts, target) == expected

    def test_random_instances_keep_sum_and_ratio(self, rng):
        """
        Verify quotas on random class counts.

        Quotas add up to the target, every class present in training gets at
        least one slot, and each quota is within one of its proportional share.
        """
        for _ in range(100):
            n_classes = int(rng.integers(2, 7))
            counts = rng.integers(0, 50, size=n_classes)
            counts[rng.integers(n_classes)] += 1
            positive = int((counts > 0).sum())
            target = int(rng.integers(positive, 2000))
            quotas = class_quotas(counts, target)

            assert sum(quotas) == target
            for c, n in enumerate(counts):
                if n == 0:
                    assert quotas[c] == 0
                else:
                    assert quotas[c] >= 1
            exact = target * counts / counts.sum()
            if (exact[counts > 0] >= 1).all():
                assert np.all(np.abs(np.array(quotas) - exact) < 1.0), (counts, target, quotas)

    def test_target_below_class_count(self):
        """A target smaller than the number of present classes cannot give each one a slot."""
        with pytest.raises(ConfigError):
            class_quotas((3, 3, 3), 2)

    def test_empty_training_set(self):
        """No training examples means no ratio to follow."""
        with pytest.raises(ConfigError):
            class_quotas((0, 0), 10)


class TestFilter:
    @pytest.fixture
    def pool(self):
        return [
            _example("a one", [0.9, 0.1], 0),
            _example("a two", [0.6, 0.4], 1),
            _example("a three", [0.95, 0.05], 2),
            _example("b one", [0.2, 0.8], 3),
            _example("b two", [0.3, 0.7], 4),
            _example("a tie", [0.6, 0.4], 5),
        ]

    def test_keeps_most_confident_per_class(self, pool):
        """Each class keeps its most confident candidates up to its quota."""
        result = filter_synthetic(pool, [2, 1], train_texts=[])
        assert [e.sentence_id for e in result.examples] == [2, 0, 3]
        assert result.shortfalls == {}

    def test_ties_go_to_the_lower_sentence_id(self, pool):
        """Equal confidences are taken in ascending sentence id."""
        result = filter_synthetic(pool, [4, 0], train_texts=[])
        assert [e.sentence_id for e in result.examples] == [2, 0, 1, 5]

    def test_training_sentences_are_excluded(self, pool):
        """A candidate equal to a training sentence after normalization is skipped."""
        result = filter_synthetic(pool, [2, 1], train_texts=["A   THREE"])
        assert [e.sentence_id for e in result.examples] == [0, 1, 3]
        assert result.excluded_overlap == 1

    def test_shortfall_is_an_error_by_default(self, pool):
        """The error carries the missing count per class."""
        with pytest.raises(ShortfallError) as excinfo:
            filter_synthetic(pool, [1, 3], train_texts=[])
        assert excinfo.value.deficits == {1: 1}

    def test_shortfall_can_be_allowed(self, pool):
        """With shortfalls allowed the filter returns what it has and reports the gap."""
        result = filter_synthetic(pool, [1, 3], train_texts=[], allow_shortfall=True)
        assert len(result.examples) == 3
        assert result.summary()["shortfalls"] == {"1": 1}

    def test_selection_keeps_label_ratio(self, rng):
        """The selected classes follow the training label ratio exactly."""
        pool = [_example(f"s{i}", p, i) for i, p in enumerate(rng.dirichlet([1, 1, 1], size=600))]
        quotas = class_quotas([30, 20, 10], 60)
        result = filter_synthetic(pool, quotas, train_texts=[])
        counts = np.bincount([e.assigned_class for e in result.examples], minlength=3)
        assert counts.tolist() == quotas == [30, 20, 10]


class TestSyntheticExamples:
    def test_argmax_tie_goes_to_lowest_class(self):
        """Tied top probabilities assign the lower class."""
        example = SyntheticExample.from_probs("x", [0.4, 0.4, 0.2])
        assert example.assigned_class == 0
        assert example.confidence == pytest.approx(0.4)

    def test_file_round_trip(self, tmp_path):
        """One JSON object per line with id, text, probs and confidence."""
        examples = [_example("first", [0.25, 0.75], 7), _example("zweite Zeile", [0.5, 0.5], 9)]
        write_synthetic(examples, tmp_path / "s.jsonl")
        record = json.loads((tmp_path / "s.jsonl").read_text(encoding="utf-8").splitlines()[0])
        assert record == {"id": 7, "text": "first", "probs": [0.25, 0.75], "confidence": 0.75}
        loaded = read_synthetic(tmp_path / "s.jsonl")
        assert [(e.sentence_id, e.text, e.assigned_class) for e in loaded] == [(7, "first", 1), (9, "zweite Zeile", 0)]

    def test_malformed_line_is_reported_with_its_number(self, tmp_path):
        """The error names the file and the failing line."""
        (tmp_path / "s.jsonl").write_text('{"text": "ok", "probs": [0.5, 0.5]}\n{"text": "bad"}\n',
                                          encoding="utf-8")
        with pytest.raises(FormatError, match=":2:"):
            read_synthetic(tmp_path / "s.jsonl")

    @pytest.mark.parametrize("record", [
        {"text": "x", "probs": [1.0]},
        {"text": "x", "probs": [-0.1, 1.1]},
        {"probs": [0.5, 0.5]},
        {"text": "x", "probs": [0.5, 0.5], "confidence": 1.5},
    ])
    def test_record_schema_rejects_malformed_records(self, record):
        """Records with missing fields or the wrong types fail validation."""
        with pytest.raises(jsonschema.exceptions.ValidationError):
            jsonschema.validate(record, synthetic_record_schema)
