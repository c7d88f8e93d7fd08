"""
Paraphrastic sentence embeddings.

Three backends produce unit-norm vectors: a plain word-vector average, a
SIF-weighted average with common-component removal, and a linear projection
over the word average trained with a margin triplet loss on paraphrase pairs
using in-batch hard negatives.
"""
import logging
import re
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from tqdm import tqdm

from models.errors import ConfigError, EmbeddingError, FormatError, TrainingError
from models.sentence_bank import EmbeddingMatrix, normalize

log = logging.getLogger(__name__)

_TOKEN = re.compile(r"\w+|[^\w\s]")
_EPS = 1e-12

BACKENDS = ('avg', 'sif', 'proj')
_BACKEND_ALIASES = {'average': 'avg', 'projection': 'proj'}


def tokenize(sentence):
    return _TOKEN.findall(normalize(sentence))


def _unit(vector):
    norm = np.linalg.norm(vector)
    if not np.isfinite(norm) or norm < _EPS:
        return None
    return vector / norm


def cosine(x, y):
    denom = np.linalg.norm(x) * np.linalg.norm(y)
    return float(np.dot(x, y) / denom) if denom > _EPS else 0.0


class WordVectorTable:
    """Word vectors plus unigram probabilities p(w) estimated from the bank."""

    def __init__(self, words, vectors, unigram_prob=None):
        self.words = list(words)
        self.index = {}
        for i, word in enumerate(self.words):
            self.index.setdefault(word, i)
        self.vectors = np.asarray(vectors, dtype=np.float64)
        if self.vectors.ndim != 2 or self.vectors.shape[0] != len(self.words):
            raise FormatError('Word vector matrix does not match the vocabulary')
        if unigram_prob is None:
            unigram_prob = np.full(len(self.words), 1.0 / max(len(self.words), 1))
        self.unigram_prob = np.asarray(unigram_prob, dtype=np.float64)

    def __len__(self):
        return len(self.words)

    def __repr__(self):
        return f"<WordVectorTable(words={len(self)}, dim={self.dim})>"

    @property
    def dim(self):
        return int(self.vectors.shape[1])

    @classmethod
    def from_dict(cls, mapping):
        words = list(mapping)
        return cls(words, np.array([mapping[w] for w in words], dtype=np.float64))

    def token_rows(self, sentence):
        return [self.index[token] for token in tokenize(sentence) if token in self.index]


def load_word_vectors(path, limit=None):
    """Read the text vector format: a "count dim" header, then "token v1 ... vd" lines."""
    words, rows = [], []
    with open(path, encoding='utf-8') as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise FormatError(f'{path}: first line must be "count dim"')
        count, dim = int(header[0]), int(header[1])
        for line_no, line in enumerate(fh, start=2):
            if limit is not None and len(words) >= limit:
                break
            parts = line.rstrip('\n').rstrip(' ').split(' ')
            if len(parts) != dim + 1:
                raise FormatError(f'{path}:{line_no}: expected {dim} values, got {len(parts) - 1}')
            words.append(parts[0])
            rows.append(np.asarray(parts[1:], dtype=np.float64))
    if limit is None and len(words) != count:
        log.warning('%s: header announces %d vectors, read %d', path, count, len(words))
    return WordVectorTable(words, np.vstack(rows) if rows else np.zeros((0, dim)))


def save_word_vectors(table, path):
    with open(path, 'w', encoding='utf-8') as fh:
        fh.write(f'{len(table)} {table.dim}\n')
        for word, row in zip(table.words, table.vectors):
            fh.write(word + ' ' + ' '.join(f'{x:.8g}' for x in row) + '\n')


def estimate_unigram(table, sentences):
    """Set p(w) from add-one smoothed token counts over ``sentences``."""
    counts = np.ones(len(table), dtype=np.float64)
    for sentence in sentences:
        for row in table.token_rows(sentence):
            counts[row] += 1
    table.unigram_prob = counts / counts.sum()
    return table


def embed_avg(sentence, table):
    rows = table.token_rows(sentence)
    if not rows:
        return None
    return _unit(table.vectors[rows].mean(axis=0))


@dataclass
class SifParams:
    a: float
    pc: np.ndarray
    eigenvalue: float = 0.0
    # p(w) the component was fitted with, aligned with the word-vector file
    unigram_prob: Optional[np.ndarray] = None

    def save(self, path):
        unigram = np.zeros(0) if self.unigram_prob is None else self.unigram_prob
        with open(path, 'wb') as fh:
            np.savez(fh, a=self.a, pc=self.pc, eigenvalue=self.eigenvalue, unigram_prob=unigram)

    @classmethod
    def load(cls, path):
        with np.load(path) as data:
            unigram = np.asarray(data['unigram_prob'], dtype=np.float64)
            return cls(float(data['a']), np.asarray(data['pc'], dtype=np.float64), float(data['eigenvalue']),
                       unigram if unigram.size else None)


def sif_weighted_average(sentence, table, a):
    """Mean of a/(a + p(w)) weighted token vectors, before component removal."""
    rows = table.token_rows(sentence)
    if not rows:
        return None
    weights = a / (a + table.unigram_prob[rows])
    return (weights[:, None] * table.vectors[rows]).sum(axis=0) / len(rows)


def fit_sif(bank_sample, a=1e-3, min_sample=1000, max_iter=100, tol=1e-9):
    """Top principal component (uncentered) of raw weighted-average vectors."""
    if a <= 0:
        raise ConfigError('SIF parameter a must be positive')
    X = np.asarray(bank_sample, dtype=np.float64)
    if X.ndim != 2 or len(X) < min_sample:
        raise EmbeddingError(f'SIF fitting needs at least {min_sample} sample vectors, got {len(X)}')
    C = X.T @ X / len(X)
    if not np.isfinite(C).all() or np.trace(C) < _EPS:
        raise EmbeddingError('Degenerate SIF sample: zero variance')

    v = C[:, int(np.argmax(np.linalg.norm(C, axis=0)))]
    v = v / np.linalg.norm(v)
    for _ in range(max_iter):
        w = C @ v
        w_norm = np.linalg.norm(w)
        if w_norm < _EPS:
            raise EmbeddingError('Degenerate SIF sample: power iteration collapsed')
        w = w / w_norm
        change = np.linalg.norm(w - v)
        v = w
        if change < tol:
            break
    if v[int(np.argmax(np.abs(v)))] < 0:
        v = -v
    return SifParams(a=a, pc=v, eigenvalue=float(v @ C @ v))


def embed_sif(sentence, table, sif_params):
    raw = sif_weighted_average(sentence, table, sif_params.a)
    if raw is None:
        return None
    pc = sif_params.pc
    return _unit(raw - np.dot(raw, pc) * pc)


@dataclass
class TripletConfig:
    margin: float = 0.4
    batch_size: int = 64
    learning_rate: float = 0.5
    epochs: int = 10
    seed: int = 0
    d_out: Optional[int] = None

    def __post_init__(self):
        if self.margin <= 0:
            raise ConfigError('Triplet margin must be positive')
        if self.batch_size < 2:
            raise ConfigError('Triplet batches need at least two pairs')
        if self.epochs < 0:
            raise ConfigError('epochs must be non-negative')


@dataclass
class TrainingTriple:
    x: np.ndarray
    y: np.ndarray
    y_c: np.ndarray


def triplet_loss(triple, margin):
    return max(0.0, margin - cosine(triple.x, triple.y) + cosine(triple.x, triple.y_c))


def hard_negative(anchor, batch_positives, own_index):
    """Index of the most similar batch positive other than the anchor's own."""
    positives = np.asarray(batch_positives, dtype=np.float64)
    if len(positives) < 2:
        raise EmbeddingError('Hard negative mining needs a batch of at least two')
    norms = np.maximum(np.linalg.norm(positives, axis=1), _EPS)
    scores = positives @ anchor / (norms * max(np.linalg.norm(anchor), _EPS))
    scores[own_index] = -np.inf
    return int(np.argmax(scores))


def _normalized_rows(Z):
    norms = np.maximum(np.linalg.norm(Z, axis=1), _EPS)
    return Z / norms[:, None], norms


def batch_triplet_loss(W, anchors, positives, margin, negatives=None):
    """Mean triplet loss of a batch under projection ``W`` and its gradient.

    Returns ``(loss, grad, negatives)``. Passing ``negatives`` holds the
    hard-negative assignment fixed. The hinge has subgradient 0 at the kink.
    """
    U, u_norms = _normalized_rows(anchors @ W.T)
    V, v_norms = _normalized_rows(positives @ W.T)
    if negatives is None:
        sims = U @ V.T
        np.fill_diagonal(sims, -np.inf)
        negatives = np.argmax(sims, axis=1)
    negatives = np.asarray(negatives)

    margins = margin - np.sum(U * V, axis=1) + np.sum(U * V[negatives], axis=1)
    active = (margins > 0).astype(np.float64)[:, None]
    batch = len(anchors)
    loss = float(np.maximum(margins, 0.0).mean())

    grad_u = active * (V[negatives] - V) / batch
    grad_v = -active * U / batch
    np.add.at(grad_v, negatives, active * U / batch)

    grad_za = (grad_u - np.sum(grad_u * U, axis=1)[:, None] * U) / u_norms[:, None]
    grad_zp = (grad_v - np.sum(grad_v * V, axis=1)[:, None] * V) / v_norms[:, None]
    grad = grad_za.T @ anchors + grad_zp.T @ positives
    return loss, grad, negatives


@dataclass
class ProjectionEncoder:
    W: np.ndarray
    table: WordVectorTable
    history: List[float] = field(default_factory=list)

    @property
    def d_in(self):
        return int(self.W.shape[1])

    @property
    def d_out(self):
        return int(self.W.shape[0])

    def encode(self, sentence):
        base = embed_avg(sentence, self.table)
        if base is None:
            return None
        return _unit(self.W @ base)

    def save(self, path):
        with open(path, 'wb') as fh:
            np.savez(fh, W=self.W, history=np.asarray(self.history, dtype=np.float64))

    @classmethod
    def load(cls, path, table):
        with np.load(path) as data:
            W = np.asarray(data['W'], dtype=np.float64)
            history = [float(x) for x in data['history']]
        if W.shape[1] != table.dim:
            raise FormatError(f'Projection expects {W.shape[1]}-d inputs, word vectors are {table.dim}-d')
        return cls(W, table, history)


def _initial_projection(d_in, d_out, rng):
    if d_out == d_in:
        return np.eye(d_in)
    return rng.normal(0.0, 1.0 / np.sqrt(d_in), size=(d_out, d_in))


def train_projection(pairs, table, cfg=TripletConfig(), progress=False):
    """Fit W by mini-batch SGD on the mean triplet loss of paraphrase pairs."""
    pairs = list(pairs)
    if not pairs:
        raise EmbeddingError('No paraphrase pairs given')
    anchors, positives = [], []
    for left, right in pairs:
        a, p = embed_avg(left, table), embed_avg(right, table)
        if a is not None and p is not None:
            anchors.append(a)
            positives.append(p)
    if not anchors:
        raise EmbeddingError('Every paraphrase pair has a null embedding')
    coverage = len(anchors) / len(pairs)
    if coverage < 0.9:
        log.warning('Only %.1f%% of paraphrase pairs embed on both sides', 100 * coverage)
    if len(anchors) < 2:
        raise EmbeddingError('Triplet training needs at least two embeddable pairs')
    A, P = np.vstack(anchors), np.vstack(positives)

    rng = np.random.default_rng(cfg.seed)
    d_out = cfg.d_out or table.dim
    W = _initial_projection(table.dim, d_out, rng)
    history = []
    epochs = tqdm(range(cfg.epochs), desc='Triplet epochs', disable=not progress)
    for epoch in epochs:
        order = rng.permutation(len(A))
        losses = []
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue
            loss, grad, _ = batch_triplet_loss(W, A[idx], P[idx], cfg.margin)
            if not np.isfinite(loss):
                raise TrainingError(f'Non-finite triplet loss in epoch {epoch}')
            W -= cfg.learning_rate * grad
            losses.append(loss)
        history.append(float(np.mean(losses)) if losses else 0.0)
        log.debug('triplet epoch %d mean loss %.6f', epoch, history[-1])
    return ProjectionEncoder(W, table, history)


def mean_pair_loss(encoder, pairs, margin, batch_size=64):
    """Mean in-batch hard-negative triplet loss of ``encoder`` on held-out pairs."""
    anchors, positives = [], []
    for left, right in pairs:
        a, p = embed_avg(left, encoder.table), embed_avg(right, encoder.table)
        if a is not None and p is not None:
            anchors.append(a)
            positives.append(p)
    A, P = np.vstack(anchors), np.vstack(positives)
    losses = []
    for start in range(0, len(A), batch_size):
        if len(A[start:start + batch_size]) >= 2:
            losses.append(batch_triplet_loss(encoder.W, A[start:start + batch_size],
                                             P[start:start + batch_size], margin)[0])
    return float(np.mean(losses))


class SentenceEncoder:
    """Dispatches sentences to one of the embedding backends."""

    def __init__(self, backend, table, sif_params=None, projection=None):
        backend = _BACKEND_ALIASES.get(backend, backend)
        if backend not in BACKENDS:
            raise ConfigError(f'Unknown embedding backend {backend!r}; choose one of {", ".join(BACKENDS)}')
        if backend == 'sif' and sif_params is None:
            raise ConfigError('The sif backend needs fitted SIF parameters')
        if backend == 'proj' and projection is None:
            raise ConfigError('The proj backend needs a trained projection model')
        self.backend = backend
        self.table = table
        self.sif_params = sif_params
        self.projection = projection

    def __repr__(self):
        return f"<SentenceEncoder(backend={self.backend}, dim={self.dim})>"

    @property
    def dim(self):
        return self.projection.d_out if self.backend == 'proj' else self.table.dim

    def encode(self, sentence):
        if self.backend == 'avg':
            return embed_avg(sentence, self.table)
        if self.backend == 'sif':
            return embed_sif(sentence, self.table, self.sif_params)
        return self.projection.encode(sentence)

    def encode_many(self, sentences, progress=False):
        sentences = tqdm(sentences, desc=f'Embedding ({self.backend})', unit=' sent', disable=not progress)
        return EmbeddingMatrix.from_rows([self.encode(s) for s in sentences], self.dim)


def encode(sentence, encoder):
    return encoder.encode(sentence)


def embed_bank(bank, encoder, progress=False):
    matrix = encoder.encode_many(bank.texts(), progress=progress)
    nulls = int(matrix.null_mask.sum())
    if nulls:
        log.warning('%d of %d bank sentences have no in-vocabulary token', nulls, matrix.count)
    return matrix


def load_pairs(path):
    """Two-column TSV of paraphrase pairs."""
    pairs = []
    with open(path, encoding='utf-8') as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip('\n')
            if not line:
                continue
            parts = line.split('\t')
            if len(parts) != 2:
                raise FormatError(f'{path}:{line_no}: expected 2 tab-separated columns')
            pairs.append((parts[0], parts[1]))
    return pairs


def build_encoder(backend, vectors_path, sif_path=None, proj_path=None):
    """Assemble a SentenceEncoder from files on disk."""
    table = load_word_vectors(vectors_path)
    sif_params = SifParams.load(sif_path) if sif_path else None
    if sif_params is not None and sif_params.unigram_prob is not None:
        if len(sif_params.unigram_prob) != len(table):
            raise FormatError(f'{sif_path}: unigram table does not match {vectors_path}')
        table.unigram_prob = sif_params.unigram_prob
    projection = ProjectionEncoder.load(proj_path, table) if proj_path else None
    return SentenceEncoder(backend, table, sif_params, projection)
