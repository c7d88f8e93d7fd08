"""
Sentence Bank Tests

Segmentation, normalization, deduplication, test-overlap removal, the
on-disk bank layout and the SABK vector file format.
"""

import numpy as np
import pytest

from models.errors import FormatError
from models.sentence_bank import (
    EmbeddingMatrix,
    SegmentConfig,
    SentenceBank,
    TextLookup,
    VECTOR_HEADER,
    bank_paths,
    build_bank,
    dedup_stats,
    fingerprint,
    normalize,
    read_vectors,
    remove_overlap,
    segment,
    subsample_bank,
    write_vectors,
)

pytestmark = pytest.mark.bank


class TestSegmentAndNormalize:
    def test_segment_splits_on_sentence_punctuation(self):
        """Sentences end at a terminal mark followed by whitespace."""
        assert segment("I liked it. Really great!", SegmentConfig(min_tokens=1)) == \
            ["I liked it.", "Really great!"]

    def test_segment_empty_document(self):
        """Blank documents give no sentences."""
        assert segment("") == []
        assert segment("   \n ") == []

    def test_segment_applies_length_floor(self):
        """Sentences under the token floor are dropped."""
        assert segment("a. b.", SegmentConfig(min_tokens=3)) == []

    def test_segment_applies_length_ceiling(self):
        """Sentences over the token ceiling are dropped, shorter ones are kept."""
        doc = "one two three four five six. one two three."
        assert segment(doc, SegmentConfig(min_tokens=1, max_tokens=4)) == ["one two three."]

    def test_segment_keeps_abbreviation_like_tokens_without_whitespace(self):
        """A dot inside a token does not split the sentence."""
        # no whitespace after the dot, so no split
        assert segment("version 1.2 is out now", SegmentConfig(min_tokens=1)) == ["version 1.2 is out now"]

    @pytest.mark.parametrize("raw, expected", [
        ("Hello   World.", "hello world."),
        ("hello world.", "hello world."),
        ("  A\tB ", "a b"),
        ("Café", "café"),
    ])
    def test_normalize(self, raw, expected):
        """Lowercase and collapse whitespace."""
        assert normalize(raw) == expected

    def test_normalize_is_idempotent(self):
        """Normalizing twice changes nothing."""
        text = "  Mixed\tCASE   text\n"
        assert normalize(normalize(text)) == normalize(text)

    @pytest.mark.parametrize("codepoint", [0x3AA, 0x3AB, 0x1FBC, 0x1FCC, 0x1FFC])
    def test_normalize_is_idempotent_on_composed_greek(self, codepoint):
        """Lowercasing happens before composition, so the result is already NFC"""
        text = chr(codepoint) + "\u0301 b c"
        assert normalize(normalize(text)) == normalize(text)

    def test_canonically_equivalent_spellings_normalize_alike(self):
        """Composed and decomposed spellings are one sentence in the bank."""
        composed, decomposed = "\u0390 b c", "\u03aa\u0301 b c"
        assert normalize(composed) == normalize(decomposed)
        assert build_bank([composed, decomposed]).count == 1

    def test_fingerprint_depends_only_on_normalized_text(self):
        """
        Verify the fingerprint is a 64-bit hash of the normalized text.

        Case and spacing do not matter, punctuation does.
        """
        assert fingerprint("Hello world.") == fingerprint("hello   WORLD.")
        assert fingerprint("hello world.") != fingerprint("hello world!")
        assert 0 <= fingerprint("anything") < 2 ** 64


class TestBuildBank:
    def test_dedup_keeps_first_occurrence(self):
        """The first spelling of a duplicate is the one stored."""
        bank = build_bank(["Hello world.", "hello   WORLD."], SegmentConfig(min_tokens=1))
        assert bank.count == 1
        assert bank.records[0].text == "Hello world."
        assert bank.meta["build"]["duplicates"] == 1

    def test_ids_are_dense_in_stream_order(self):
        """Ids count from zero in the order sentences arrive."""
        bank = build_bank(["a b c", "d e f"])
        assert [(r.id, r.text) for r in bank.records] == [(0, "a b c"), (1, "d e f")]

    def test_empty_stream(self):
        """An empty stream builds an empty bank."""
        bank = build_bank([])
        assert bank.count == 0
        assert bank.meta["build"]["seen"] == 0

    def test_length_bounds_are_enforced(self):
        """Default bounds drop one-token and over-long sentences."""
        stats = dedup_stats(["a", "a b c", " ".join(["x"] * 101)])
        assert (stats.too_short, stats.too_long, stats.kept) == (1, 1, 1)

    def test_dedup_is_idempotent(self, synthetic_task):
        """Rebuilding a bank from its own texts gives the same texts."""
        once = build_bank(synthetic_task.bank_text)
        twice = build_bank(once.texts())
        assert twice.texts() == once.texts()

    def test_no_two_records_share_a_fingerprint(self, synthetic_task):
        """Fingerprints are unique and ids stay dense after repeats in the stream."""
        bank = build_bank(synthetic_task.bank_text + synthetic_task.bank_text[:100])
        fingerprints = [r.fingerprint for r in bank.records]
        assert len(set(fingerprints)) == len(fingerprints)
        assert [r.id for r in bank.records] == list(range(bank.count))


class TestRemoveOverlap:
    def test_overlapping_sentence_is_removed(self):
        """A bank sentence matching a test sentence is removed and maps to -1."""
        bank = build_bank(["good movie", "bad plot"], SegmentConfig(min_tokens=1))
        cleaned, id_map = remove_overlap(bank, ["Bad  Plot"])
        assert cleaned.texts() == ["good movie"]
        assert id_map.tolist() == [0, -1]

    def test_disjoint_test_set_gives_identity_map(self):
        """Nothing overlaps, so every id maps to itself."""
        bank = build_bank(["good movie", "bad plot"], SegmentConfig(min_tokens=1))
        cleaned, id_map = remove_overlap(bank, ["something else"])
        assert cleaned.texts() == bank.texts()
        assert id_map.tolist() == [0, 1]

    def test_superset_test_set_empties_bank(self):
        """Removing a superset of the bank leaves nothing."""
        bank = build_bank(["good movie", "bad plot"], SegmentConfig(min_tokens=1))
        cleaned, _ = remove_overlap(bank, ["good movie", "bad plot", "extra"])
        assert cleaned.count == 0

    def test_no_survivor_matches_a_test_sentence(self, synthetic_task):
        """
        Verify overlap removal on a bank with planted test sentences.

        No surviving sentence normalizes to a test sentence, and the id map
        keeps the surviving ids in order.
        """
        test_texts = synthetic_task.test.texts
        bank = build_bank(synthetic_task.bank_text + test_texts[:50])
        cleaned, id_map = remove_overlap(bank, test_texts)
        survivors = {normalize(t) for t in cleaned.texts()}
        assert not survivors & {normalize(t) for t in test_texts}
        kept = id_map[id_map >= 0]
        assert kept.tolist() == list(range(cleaned.count))

    def test_vectors_follow_the_id_map(self):
        """Attached vectors are compacted with the surviving rows."""
        bank = build_bank(["good movie", "bad plot", "good good"], SegmentConfig(min_tokens=1))
        rows = np.arange(6, dtype=np.float32).reshape(3, 2)
        bank.attach_vectors(EmbeddingMatrix(rows, np.zeros(3, dtype=bool)))
        cleaned, _ = remove_overlap(bank, ["bad plot"])
        np.testing.assert_array_equal(cleaned.vectors.data, rows[[0, 2]])


class TestSubsample:
    def test_subsamples_are_nested_for_a_seed(self, synthetic_task):
        """For one seed a smaller subsample sits inside a larger one."""
        bank = build_bank(synthetic_task.bank_text)
        small = set(subsample_bank(bank, 100, seed=3).texts())
        large = set(subsample_bank(bank, 500, seed=3).texts())
        assert len(small) == 100 and len(large) == 500
        assert small <= large

    def test_oversized_request_returns_whole_bank(self):
        """Asking for more sentences than the bank holds returns the bank itself."""
        bank = build_bank(["a b c", "d e f"])
        assert subsample_bank(bank, 10) is bank


class TestVectorFile:
    def _matrix(self, rng, count=7, dim=5):
        data = rng.normal(size=(count, dim)).astype(np.float32)
        data /= np.linalg.norm(data, axis=1, keepdims=True)
        null_mask = np.zeros(count, dtype=bool)
        null_mask[2] = True
        data[2] = 0.0
        return EmbeddingMatrix(data, null_mask)

    def test_float32_round_trip_is_exact(self, tmp_path, rng):
        """Float32 rows come back byte for byte."""
        matrix = self._matrix(rng)
        write_vectors(matrix, tmp_path / "m.vec")
        loaded = read_vectors(tmp_path / "m.vec")
        assert loaded.dtype == "float32"
        assert np.asarray(loaded.data).tobytes() == matrix.data.tobytes()
        np.testing.assert_array_equal(loaded.null_mask, matrix.null_mask)

    def test_int8_round_trip_keeps_scales(self, tmp_path, rng):
        """Int8 rows, per-row scales and the null bitmap survive a round trip."""
        data = rng.integers(-127, 128, size=(9, 4)).astype(np.int8)
        data[3] = 0
        mask = np.zeros(9, dtype=bool)
        mask[3] = True
        matrix = EmbeddingMatrix(data, mask, rng.random(9).astype(np.float32))
        write_vectors(matrix, tmp_path / "q.vec")
        loaded = read_vectors(tmp_path / "q.vec", mmap=False)
        assert loaded.dtype == "int8"
        np.testing.assert_array_equal(loaded.data, data)
        np.testing.assert_array_equal(loaded.scales, matrix.scales)
        np.testing.assert_array_equal(loaded.null_mask, mask)

    def test_file_size_matches_layout(self, tmp_path, rng):
        """Header, row data and the null bitmap add up to the file size."""
        matrix = self._matrix(rng, count=10, dim=3)
        path = tmp_path / "m.vec"
        write_vectors(matrix, path)
        assert VECTOR_HEADER.size == 36
        assert path.stat().st_size == 36 + 10 * 3 * 4 + 2

    def test_empty_int8_matrix_is_valid(self, tmp_path):
        """A zero-row file is valid and keeps its dimension."""
        write_vectors(EmbeddingMatrix.empty(8, "int8"), tmp_path / "e.vec")
        loaded = read_vectors(tmp_path / "e.vec")
        assert (loaded.count, loaded.dim, loaded.dtype) == (0, 8, "int8")

    def test_truncated_file_is_rejected(self, tmp_path, rng):
        """A file cut short of its declared rows is rejected."""
        path = tmp_path / "m.vec"
        write_vectors(self._matrix(rng), path)
        raw = path.read_bytes()
        path.write_bytes(raw[:-5])
        with pytest.raises(FormatError, match="truncated"):
            read_vectors(path)

    def test_trailing_bytes_are_rejected(self, tmp_path, rng):
        """Bytes past the null bitmap are a format error."""
        path = tmp_path / "m.vec"
        write_vectors(self._matrix(rng), path)
        with open(path, "ab") as fh:
            fh.write(b"\x00")
        with pytest.raises(FormatError, match="trailing"):
            read_vectors(path)

    def test_bad_magic_is_rejected(self, tmp_path, rng):
        """A file that does not start with the vector magic is rejected."""
        path = tmp_path / "m.vec"
        write_vectors(self._matrix(rng), path)
        raw = bytearray(path.read_bytes())
        raw[:4] = b"XXXX"
        path.write_bytes(bytes(raw))
        with pytest.raises(FormatError, match="magic"):
            read_vectors(path)

    def test_dimension_mismatch_is_rejected(self, tmp_path, rng):
        """Reading with an expected dimension checks the header."""
        path = tmp_path / "m.vec"
        write_vectors(self._matrix(rng, dim=5), path)
        with pytest.raises(FormatError, match="dimension"):
            read_vectors(path, expected_dim=6)

    def test_null_rows_must_be_zero(self):
        """A row flagged null must hold zeros."""
        with pytest.raises(FormatError):
            EmbeddingMatrix(np.ones((2, 2), dtype=np.float32), np.array([True, False]))


class TestBankOnDisk:
    def test_save_load_and_lookup_with_escaped_text(self, tmp_path):
        """
        Verify a saved bank loads back with its texts intact.

        Backslashes and newlines in a sentence are escaped so the text file
        keeps one line per sentence, and lookups return the original text.
        """
        texts = ["first line here", "has a \\ backslash", "multi\nline sentence text"]
        bank = build_bank(texts, SegmentConfig(min_tokens=1))
        prefix = str(tmp_path / "b")
        bank.save(prefix)

        assert bank_paths(prefix)["text"].read_text(encoding="utf-8").count("\n") == 3
        loaded = SentenceBank.load(prefix)
        assert loaded.texts() == texts
        lookup = TextLookup(prefix)
        assert len(lookup) == 3
        assert lookup[2] == "multi\nline sentence text"
        assert lookup.get_many([1, 0]) == [texts[1], texts[0]]
        with pytest.raises(IndexError):
            lookup[3]

    def test_saved_bank_vectors_are_unit_norm(self, bank_prefix):
        """Non-null bank vectors are unit length and the backend is recorded."""
        bank = SentenceBank.load(bank_prefix)
        rows = np.asarray(bank.vectors.data)[~bank.vectors.null_mask]
        np.testing.assert_allclose(np.linalg.norm(rows, axis=1), 1.0, atol=1e-5)
        assert bank.meta["backend"] == "avg"

    def test_mismatched_vectors_are_rejected(self):
        """A vector matrix with the wrong row count cannot be attached."""
        bank = build_bank(["a b c"])
        with pytest.raises(FormatError):
            bank.attach_vectors(EmbeddingMatrix(np.zeros((2, 3), dtype=np.float32), np.zeros(2, dtype=bool)))
