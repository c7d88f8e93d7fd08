import logging
from typing import NamedTuple

import numpy as np
from scipy import stats

from models.embedder import cosine
from models.errors import EmbeddingError, FormatError, TrainingError

log = logging.getLogger(__name__)


class StsResult(NamedTuple):
    pearson: float
    spearman: float
    pairs: int
    dropped: int


def featurize(dataset, encoder, skip_null=False):
    """Embedding rows for ``dataset`` and their labels.

    Sentences without an embedding become zero rows, or are left out when
    ``skip_null`` is set (training sets).
    """
    rows, labels, nulls = [], [], 0
    for text, label in dataset.examples:
        vector = encoder.encode(text)
        if vector is None:
            nulls += 1
            if skip_null:
                continue
            vector = np.zeros(encoder.dim)
        rows.append(vector)
        labels.append(label)
    if nulls:
        log.info('%d of %d sentences have no embedding%s', nulls, len(dataset),
                 ' and were skipped' if skip_null else '')
    X = np.vstack(rows) if rows else np.zeros((0, encoder.dim))
    return X, np.asarray(labels, dtype=np.int64)


def eval_accuracy(model, test, encoder=None):
    """Fraction of test examples whose argmax prediction is the gold label.

    ``test`` is a LabeledDataset (embedded with ``encoder``) or a
    ``(features, labels)`` pair.
    """
    if encoder is not None:
        X, y = featurize(test, encoder)
    else:
        X, y = test
    if len(y) == 0:
        raise TrainingError('Cannot evaluate on an empty test set', status=400)
    return model.accuracy(X, y)


def eval_sts(encoder, pairs_with_gold):
    """Pearson and Spearman correlation between cos(enc(s1), enc(s2)) and gold scores."""
    predicted, gold, dropped = [], [], 0
    for s1, s2, score in pairs_with_gold:
        v1, v2 = encoder.encode(s1), encoder.encode(s2)
        if v1 is None or v2 is None:
            dropped += 1
            continue
        predicted.append(cosine(v1, v2))
        gold.append(float(score))
    if not predicted:
        raise EmbeddingError('No STS pair has embeddings for both sentences')
    if dropped:
        log.warning('Dropped %d STS pairs with a null embedding', dropped)
    return sts_correlations(predicted, gold, dropped)


def sts_correlations(predicted, gold, dropped=0):
    predicted = np.asarray(predicted, dtype=np.float64)
    gold = np.asarray(gold, dtype=np.float64)
    if len(predicted) < 2:
        raise EmbeddingError('Correlations need at least two scored pairs')
    pearson = float(np.corrcoef(predicted, gold)[0, 1])
    spearman = float(stats.spearmanr(predicted, gold).correlation)
    return StsResult(pearson, spearman, len(predicted), dropped)


def load_sts_pairs(path):
    """s1<TAB>s2<TAB>gold per line."""
    pairs = []
    with open(path, encoding='utf-8') as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip('\n')
            if not line:
                continue
            parts = line.split('\t')
            if len(parts) != 3:
                raise FormatError(f'{path}:{line_no}: expected s1<TAB>s2<TAB>score')
            try:
                pairs.append((parts[0], parts[1], float(parts[2])))
            except ValueError as exc:
                raise FormatError(f'{path}:{line_no}: score is not a number') from exc
    return pairs
