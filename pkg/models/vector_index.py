"""
Exact top-k cosine retrieval over a bank's embedding matrix.

The matrix is scanned shard by shard; each shard keeps a local top-k per query
and the shard results are merged in a fixed order (score descending, id
ascending), so results do not depend on the shard size or on the number of
worker threads. In int8 mode the scan keeps ``rescore_factor * k`` candidates
which are re-scored in float32 before the final selection.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import List, NamedTuple

import numpy as np

from models.errors import ConfigError, RetrievalError
from models.sentence_bank import EmbeddingMatrix, bank_paths, read_vectors

log = logging.getLogger(__name__)

DEFAULT_SHARD_SIZE = 1 << 16
DEFAULT_RESCORE_FACTOR = 10


class Hit(NamedTuple):
    id: int
    score: float


def _select(scores, ids, k):
    """Top ``k`` of ``scores`` ordered by score desc then id asc.

    ``ids`` must be ascending so that ties at the cut keep the lowest ids.
    """
    if len(scores) > k:
        kth = np.partition(scores, len(scores) - k)[len(scores) - k]
        above = np.flatnonzero(scores > kth)
        ties = np.flatnonzero(scores == kth)[:k - len(above)]
        keep = np.concatenate([above, ties])
        scores, ids = scores[keep], ids[keep]
    order = np.lexsort((ids, -scores))
    return scores[order], ids[order]


def _dot(rows, Q):
    """Scores accumulated in float64 and rounded to float32.

    The rounding hides the last-bit differences between BLAS code paths, so a
    row scores the same whatever the shard shape or the number of queries.
    """
    return (np.asarray(rows, dtype=np.float64) @ np.asarray(Q, dtype=np.float64).T).astype(np.float32)


def _check_queries(queries, dim):
    Q = np.asarray(queries, dtype=np.float32)
    if Q.ndim == 1:
        Q = Q[None, :]
    if Q.shape[0] == 0:
        raise RetrievalError('Empty query set')
    if Q.shape[1] != dim:
        raise RetrievalError(f'Query dimension {Q.shape[1]} does not match index dimension {dim}')
    norms = np.linalg.norm(Q, axis=1)
    if not np.all(np.isfinite(norms)) or np.any(norms < 1e-6):
        raise RetrievalError('Null or zero query vector')
    return Q


class FlatIndex:
    """Brute-force scan over a (possibly memory-mapped) EmbeddingMatrix.

    For an int8 ``matrix`` the float32 ``rescore_matrix`` is used to re-score
    candidates; without one, dequantized rows are used.
    """

    def __init__(self, matrix, shard_size=DEFAULT_SHARD_SIZE, rescore_factor=DEFAULT_RESCORE_FACTOR,
                 rescore_matrix=None, workers=1):
        if shard_size < 1 or rescore_factor < 1:
            raise ConfigError('shard_size and rescore_factor must be positive')
        if rescore_matrix is not None and (rescore_matrix.count != matrix.count or rescore_matrix.dim != matrix.dim):
            raise ConfigError('Rescore matrix does not match the quantized matrix')
        self.matrix = matrix
        self.shard_size = shard_size
        self.rescore_factor = rescore_factor
        self.rescore_matrix = rescore_matrix
        self.workers = max(1, workers)

    def __repr__(self):
        return f"<FlatIndex(count={self.count}, dim={self.dim}, dtype={self.matrix.dtype})>"

    @property
    def count(self):
        return self.matrix.count

    @property
    def dim(self):
        return self.matrix.dim

    @property
    def quantized(self):
        return self.matrix.dtype == 'int8'

    @classmethod
    def from_bank(cls, prefix, quantized=False, **kwargs):
        paths = bank_paths(prefix)
        if not quantized:
            return cls(read_vectors(paths['vectors']), **kwargs)
        rescore = read_vectors(paths['vectors']) if paths['vectors'].exists() else None
        return cls(read_vectors(paths['quantized']), rescore_matrix=rescore, **kwargs)

    def shards(self):
        return [(start, min(start + self.shard_size, self.count))
                for start in range(0, self.count, self.shard_size)]

    def _scan_shard(self, Q, start, stop, keep):
        data = self.matrix.data[start:stop]
        if self.quantized:
            data = np.asarray(data, dtype=np.float64) * np.asarray(self.matrix.scales[start:stop], dtype=np.float64)[:, None]
        scores = _dot(data, Q)
        scores[self.matrix.null_mask[start:stop]] = -np.inf
        ids = np.arange(start, stop, dtype=np.int64)
        return [_select(scores[:, j], ids, keep) for j in range(Q.shape[0])]

    def _scan(self, Q, keep):
        shards = self.shards()
        if self.workers > 1 and len(shards) > 1:
            with ThreadPoolExecutor(max_workers=self.workers) as pool:
                per_shard = list(pool.map(lambda s: self._scan_shard(Q, s[0], s[1], keep), shards))
        else:
            per_shard = [self._scan_shard(Q, start, stop, keep) for start, stop in shards]
        merged = []
        for j in range(Q.shape[0]):
            if not per_shard:
                merged.append((np.zeros(0, np.float32), np.zeros(0, np.int64)))
                continue
            scores = np.concatenate([shard[j][0] for shard in per_shard])
            ids = np.concatenate([shard[j][1] for shard in per_shard])
            order = np.argsort(ids, kind='stable')
            merged.append(_select(scores[order], ids[order], keep))
        return merged

    def _rescore(self, q, ids, k):
        ids = np.sort(ids)
        if self.rescore_matrix is not None:
            rows = self.rescore_matrix.rows(ids)
        else:
            rows = self.matrix.rows(ids)
        return _select(_dot(rows, q[None, :])[:, 0], ids, k)

    def top_k_multi(self, queries, k) -> List[List[Hit]]:
        if k < 1:
            raise RetrievalError('k must be at least 1')
        Q = _check_queries(queries, self.dim)
        keep = k * self.rescore_factor if self.quantized else k
        results = []
        for j, (scores, ids) in enumerate(self._scan(Q, keep)):
            valid = np.isfinite(scores)
            scores, ids = scores[valid], ids[valid]
            if self.quantized:
                scores, ids = self._rescore(Q[j], ids, k)
            results.append([Hit(int(i), float(s)) for s, i in zip(scores[:k], ids[:k])])
        return results

    def top_k(self, query, k) -> List[Hit]:
        if query is None:
            raise RetrievalError('Null query vector')
        return self.top_k_multi(np.asarray(query)[None, :], k)[0]


def top_k(index, query, k):
    return index.top_k(query, k)


def top_k_multi(index, queries, k_per_query):
    return index.top_k_multi(queries, k_per_query)


def quantize(matrix):
    """Per-row symmetric int8 quantization: scale = max|x| / 127, q = round(x / scale)."""
    if matrix.dtype != 'float32':
        raise ConfigError('Only float32 matrices can be quantized')
    count, dim = matrix.count, matrix.dim
    data = np.zeros((count, dim), dtype=np.int8)
    scales = np.zeros(count, dtype=np.float32)
    chunk = DEFAULT_SHARD_SIZE
    for start in range(0, count, chunk):
        rows = np.asarray(matrix.data[start:start + chunk], dtype=np.float32)
        peak = np.abs(rows).max(axis=1)
        scale = (peak / 127.0).astype(np.float32)
        safe = np.where(scale > 0, scale, 1.0)[:, None]
        data[start:start + chunk] = np.clip(np.rint(rows / safe), -127, 127).astype(np.int8)
        scales[start:start + chunk] = scale
    return EmbeddingMatrix(data, matrix.null_mask.copy(), scales)


def recall_at_k(exact, approx):
    """Mean fraction of exact hit ids recovered per query."""
    fractions = []
    for truth, found in zip(exact, approx):
        truth_ids = {hit.id for hit in truth}
        if truth_ids:
            fractions.append(len(truth_ids & {hit.id for hit in found}) / len(truth_ids))
    return float(np.mean(fractions)) if fractions else 0.0


def write_hits_tsv(results, path, texts=None):
    """query_index, rank, id, score (6 decimals) and optionally the sentence text."""
    with open(path, 'w', encoding='utf-8') as fh:
        for q, hits in enumerate(results):
            for rank, hit in enumerate(hits):
                row = [str(q), str(rank), str(hit.id), f'{hit.score:.6f}']
                if texts is not None:
                    row.append(texts[hit.id])
                fh.write('\t'.join(row) + '\n')
