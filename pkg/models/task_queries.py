"""
Task embeddings: query vectors that summarize a labeled training set, and the
merged candidate pool retrieved with them.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, NamedTuple, Optional

import numpy as np

from models.errors import ConfigError, EmbeddingError, FormatError, RetrievalError
from models.sentence_bank import EmbeddingMatrix, read_vectors, write_vectors

log = logging.getLogger(__name__)

ALL_AVERAGE = 'all-average'
LABEL_AVERAGE = 'label-average'
PER_SENTENCE = 'per-sentence'
QUERY_MODES = (ALL_AVERAGE, LABEL_AVERAGE, PER_SENTENCE)
_MODE_ALIASES = {'all': ALL_AVERAGE, 'label': LABEL_AVERAGE, 'sent': PER_SENTENCE}


def query_mode(name):
    mode = _MODE_ALIASES.get(name, name)
    if mode not in QUERY_MODES:
        raise ConfigError(f'Unknown query mode {name!r}')
    return mode


class LabeledDataset:
    """(text, label_id) examples with a label vocabulary in order of first appearance."""

    def __init__(self, examples, labels):
        self.examples = [(text, int(label)) for text, label in examples]
        self.labels = list(labels)
        for _, label in self.examples:
            if not 0 <= label < len(self.labels):
                raise FormatError(f'Label id {label} outside vocabulary of {len(self.labels)}')

    def __len__(self):
        return len(self.examples)

    def __repr__(self):
        return f"<LabeledDataset(examples={len(self)}, labels={self.labels})>"

    @property
    def texts(self):
        return [text for text, _ in self.examples]

    @property
    def label_ids(self):
        return np.array([label for _, label in self.examples], dtype=np.int64)

    @property
    def counts(self):
        return np.bincount(self.label_ids, minlength=len(self.labels))

    @property
    def num_classes(self):
        return len(self.labels)

    def label_id(self, name):
        return self.labels.index(name)

    def subset(self, indices):
        return LabeledDataset([self.examples[i] for i in indices], self.labels)

    @classmethod
    def from_named(cls, pairs, labels=None):
        """Build from (label_name, text) pairs; new names extend the vocabulary."""
        labels = list(labels or [])
        examples = []
        for name, text in pairs:
            if name not in labels:
                labels.append(name)
            examples.append((text, labels.index(name)))
        return cls(examples, labels)

    @classmethod
    def load_tsv(cls, path, labels=None):
        """label<TAB>text per line, UTF-8."""
        pairs = []
        with open(path, encoding='utf-8') as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.rstrip('\n')
                if not line:
                    continue
                name, sep, text = line.partition('\t')
                if not sep:
                    raise FormatError(f'{path}:{line_no}: expected label<TAB>text')
                pairs.append((name, text))
        return cls.from_named(pairs, labels)

    def save_tsv(self, path):
        with open(path, 'w', encoding='utf-8') as fh:
            for text, label in self.examples:
                fh.write(f'{self.labels[label]}\t{text}\n')


@dataclass
class QuerySet:
    mode: str
    vectors: np.ndarray
    labels: List[Optional[int]] = field(default_factory=list)

    def __len__(self):
        return len(self.vectors)


def _mean_unit(rows):
    mean = np.mean(rows, axis=0)
    norm = np.linalg.norm(mean)
    if norm < 1e-12:
        return None
    return mean / norm


def build_queries(data, mode, encoder):
    mode = query_mode(mode)
    embedded = [(encoder.encode(text), label) for text, label in data.examples]
    skipped = sum(1 for vector, _ in embedded if vector is None)
    if skipped:
        log.warning('Skipping %d training sentences with no embedding', skipped)
    embedded = [(vector, label) for vector, label in embedded if vector is not None]
    if not embedded:
        raise EmbeddingError('No training sentence has an embedding')

    if mode == ALL_AVERAGE:
        query = _mean_unit([vector for vector, _ in embedded])
        if query is None:
            raise EmbeddingError('Training embeddings average to the zero vector')
        return QuerySet(mode, query[None, :], [None])

    if mode == PER_SENTENCE:
        return QuerySet(mode, np.vstack([vector for vector, _ in embedded]),
                        [label for _, label in embedded])

    vectors, labels = [], []
    for label, name in enumerate(data.labels):
        rows = [vector for vector, row_label in embedded if row_label == label]
        query = _mean_unit(rows) if rows else None
        if query is None:
            raise EmbeddingError(f'Label {name!r} has no embeddable training example')
        vectors.append(query)
        labels.append(label)
    return QuerySet(mode, np.vstack(vectors), labels)


class PoolEntry(NamedTuple):
    id: int
    score: float
    source_label: Optional[int]


def retrieve_pool(query_set, index, per_query_k):
    """Union of per-query hits, keeping each id's best score and the label of
    the query that produced it."""
    if per_query_k < 1:
        raise RetrievalError('per_query_k must be at least 1')
    if len(query_set) == 0:
        raise RetrievalError('Empty query set')
    best = {}
    results = index.top_k_multi(query_set.vectors, per_query_k)
    for label, hits in zip(query_set.labels, results):
        for hit in hits:
            current = best.get(hit.id)
            if current is None or hit.score > current.score:
                best[hit.id] = PoolEntry(hit.id, hit.score, label)
    return sorted(best.values(), key=lambda entry: (-entry.score, entry.id))


def default_per_query_k(budget, n_queries, factor=20):
    """Pool target of ``factor`` x the augmentation budget, split evenly over queries."""
    return max(1, -(-factor * budget // max(n_queries, 1)))


def write_queries(query_set, path):
    """Query vectors in the SABK vector format, labels in a ``.labels`` sidecar."""
    matrix = EmbeddingMatrix(np.asarray(query_set.vectors, dtype=np.float32),
                             np.zeros(len(query_set), dtype=bool))
    write_vectors(matrix, path)
    sidecar = Path(str(path) + '.labels')
    sidecar.write_text(query_set.mode + '\n' + '\n'.join(
        '' if label is None else str(label) for label in query_set.labels) + '\n', encoding='utf-8')


def read_queries(path):
    matrix = read_vectors(path, mmap=False)
    sidecar = Path(str(path) + '.labels')
    mode, labels = ALL_AVERAGE, [None] * matrix.count
    if sidecar.exists():
        lines = sidecar.read_text(encoding='utf-8').split('\n')
        mode = lines[0]
        labels = [int(x) if x else None for x in lines[1:1 + matrix.count]]
    return QuerySet(mode, np.asarray(matrix.data, dtype=np.float32), labels)
