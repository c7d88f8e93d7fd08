"""
Seeded generator for small text classification tasks with a matching
sentence bank and word vectors, used to exercise the pipelines end to end.

Every class draws tokens from its own vocabulary, from a shared vocabulary,
and (with probability ``overlap``) from another class's vocabulary. Bank
distractors come from a separate vocabulary that no task sentence uses.
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import List

import numpy as np

from models.embedder import WordVectorTable, save_word_vectors
from models.errors import ConfigError
from models.task_queries import LabeledDataset

log = logging.getLogger(__name__)

DISTRACTOR_TOPICS = 4
MIN_LENGTH, MAX_LENGTH = 5, 12


@dataclass
class SyntheticTask:
    train: LabeledDataset
    valid: LabeledDataset
    test: LabeledDataset
    bank_text: List[str]
    bank_labels: List[int] = field(default_factory=list)
    table: WordVectorTable = None
    seed: int = 0

    def __iter__(self):
        return iter((self.train, self.valid, self.test, self.bank_text))

    @property
    def in_domain_pool(self):
        """Bank sentences produced by the task generator (no distractors)."""
        return [text for text, label in zip(self.bank_text, self.bank_labels) if label >= 0]

    def save(self, directory):
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        self.train.save_tsv(directory / 'train.tsv')
        self.valid.save_tsv(directory / 'valid.tsv')
        self.test.save_tsv(directory / 'test.tsv')
        (directory / 'corpus.txt').write_text('\n'.join(self.bank_text) + '\n', encoding='utf-8')
        (directory / 'in_domain.txt').write_text('\n'.join(self.in_domain_pool) + '\n', encoding='utf-8')
        save_word_vectors(self.table, directory / 'vectors.txt')
        return directory


class _Generator:
    """Token ids are laid out as [class 0 | class 1 | ... | shared | distractor topics],
    ``vocab_size`` ids per block, each block Zipf-distributed."""

    def __init__(self, seed, vocab_size, n_classes, dim, overlap, class_share, signal):
        self.rng = np.random.default_rng(seed)
        self.vocab_size = vocab_size
        self.n_classes = n_classes
        self.overlap = overlap if n_classes > 1 else 0.0
        self.class_share = class_share
        weights = 1.0 / np.arange(1, vocab_size + 1)
        self.zipf = weights / weights.sum()

        words = [f'c{c}w{i}' for c in range(n_classes) for i in range(vocab_size)]
        words += [f's{i}' for i in range(vocab_size)]
        words += [f'd{t}w{i}' for t in range(DISTRACTOR_TOPICS) for i in range(vocab_size)]
        self.words = np.array(words)

        centers = self.rng.normal(size=(n_classes + DISTRACTOR_TOPICS, dim))
        centers /= np.linalg.norm(centers, axis=1, keepdims=True)
        block_center = np.zeros((n_classes + 1 + DISTRACTOR_TOPICS, dim))
        block_center[:n_classes] = signal * centers[:n_classes]
        block_center[n_classes + 1:] = signal * centers[n_classes:]
        vectors = np.repeat(block_center, vocab_size, axis=0)
        vectors += self.rng.normal(0.0, 1.0 / np.sqrt(dim), size=vectors.shape)
        self.table = WordVectorTable(words, vectors)

    def _ranks(self, size):
        return self.rng.choice(self.vocab_size, size=size, p=self.zipf)

    def _join(self, token_ids, lengths):
        tokens = self.words[token_ids]
        bounds = np.cumsum(lengths)[:-1]
        return [' '.join(chunk) for chunk in np.split(tokens, bounds)]

    def sentences(self, labels):
        labels = np.asarray(labels, dtype=np.int64)
        if labels.size == 0:
            return []
        lengths = self.rng.integers(MIN_LENGTH, MAX_LENGTH + 1, size=len(labels))
        owner = np.repeat(labels, lengths)
        u = self.rng.random(owner.size)
        ranks = self._ranks(owner.size)
        shift = self.rng.integers(1, max(self.n_classes, 2), size=owner.size)
        block = np.where(u < self.overlap, (owner + shift) % self.n_classes,
                         np.where(u < self.overlap + self.class_share, owner, self.n_classes))
        return self._join(block * self.vocab_size + ranks, lengths)

    def distractors(self, count):
        if count == 0:
            return []
        lengths = self.rng.integers(MIN_LENGTH, MAX_LENGTH + 1, size=count)
        topics = np.repeat(self.rng.integers(DISTRACTOR_TOPICS, size=count), lengths)
        block = self.n_classes + 1 + topics
        return self._join(block * self.vocab_size + self._ranks(lengths.sum()), lengths)

    def dataset(self, size, labels):
        ids = np.arange(size) % self.n_classes
        self.rng.shuffle(ids)
        return LabeledDataset(list(zip(self.sentences(ids), ids.tolist())), labels)


def generate_synthetic_task(seed, vocab_size=200, n_classes=2, n_train=40, n_test=1000, bank_size=10000,
                            distractor_ratio=0.8, n_valid=None, dim=50, overlap=0.15, class_share=0.3,
                            signal=0.6):
    """Deterministic in ``seed``: same arguments, same task."""
    if min(vocab_size, n_classes, n_train, n_test, dim) < 1 or bank_size < 0:
        raise ConfigError('Synthetic task sizes must be positive')
    if not 0.0 <= distractor_ratio <= 1.0:
        raise ConfigError('distractor_ratio must be within [0, 1]')
    if overlap < 0 or class_share < 0 or overlap + class_share > 1.0:
        raise ConfigError('overlap and class_share must be non-negative and sum to at most 1')

    generator = _Generator(seed, vocab_size, n_classes, dim, overlap, class_share, signal)
    labels = [f'class{c}' for c in range(n_classes)]
    train = generator.dataset(n_train, labels)
    valid = generator.dataset(n_valid if n_valid is not None else n_test, labels)
    test = generator.dataset(n_test, labels)

    n_distractors = int(round(bank_size * distractor_ratio))
    bank_labels = generator.rng.integers(n_classes, size=bank_size - n_distractors)
    texts = generator.sentences(bank_labels) + generator.distractors(n_distractors)
    owners = bank_labels.tolist() + [-1] * n_distractors
    order = generator.rng.permutation(len(texts))
    log.info('Synthetic task (seed %d): %d train, %d test, bank %d (%d distractors)',
             seed, n_train, n_test, bank_size, n_distractors)
    return SyntheticTask(train, valid, test, [texts[i] for i in order], [owners[i] for i in order],
                         generator.table, seed)
