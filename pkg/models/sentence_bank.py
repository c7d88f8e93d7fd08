"""
Sentence bank

Turns raw documents into a deduplicated bank of sentences with dense ids,
removes sentences that overlap with a downstream test set, and stores the
bank's embedding matrix in the SABK binary vector format.

On disk a bank is a set of files sharing a prefix:

    <prefix>.txt        one escaped sentence per line, line number == id
    <prefix>.offsets    u64 little-endian byte offsets (count + 1 entries)
    <prefix>.meta.json  source description, normalization version, counts
    <prefix>.vec        float32 embedding matrix (after `embed bank`)
    <prefix>.q8.vec     int8-scaled copy of the matrix (after `index quantize`)
"""
import hashlib
import json
import logging
import os
import re
import struct
import unicodedata
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Iterator, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from models.errors import BankBuildError, FormatError

log = logging.getLogger(__name__)

NORMALIZATION_VERSION = 1

VECTOR_MAGIC = b'SABK'
VECTOR_VERSION = 1
# magic, version, dim, count, dtype code, 15 reserved bytes
VECTOR_HEADER = struct.Struct('<4sIIQB15x')
DTYPE_CODES = {'float32': 0, 'int8': 1}
DTYPE_NAMES = {code: name for name, code in DTYPE_CODES.items()}
_NUMPY_DTYPES = {'float32': np.dtype('<f4'), 'int8': np.dtype('i1')}

_SENTENCE_END = re.compile(r'(?<=[.!?])\s+')
_ESCAPED = re.compile(r'\\(\\|n|r)')
_WRITE_CHUNK = 1 << 16


@dataclass(frozen=True)
class SegmentConfig:
    min_tokens: int = 3
    max_tokens: int = 100

    def accepts(self, sentence):
        return self.min_tokens <= len(sentence.split()) <= self.max_tokens


@dataclass(frozen=True)
class SentenceRecord:
    id: int
    text: str
    fingerprint: int


@dataclass
class BuildStats:
    seen: int = 0
    too_short: int = 0
    too_long: int = 0
    duplicates: int = 0
    kept: int = 0


def segment(document, cfg=SegmentConfig()):
    """Split a document at '.', '!' or '?' followed by whitespace, keeping
    only sentences whose whitespace token count fits the configured bounds."""
    if not document or not document.strip():
        return []
    pieces = (piece.strip() for piece in _SENTENCE_END.split(document.strip()))
    return [piece for piece in pieces if piece and cfg.accepts(piece)]


def normalize(text):
    return ' '.join(unicodedata.normalize('NFC', text.lower()).split())


def fingerprint(text):
    """Stable 64-bit hash of the normalized text."""
    digest = hashlib.blake2b(normalize(text).encode('utf-8'), digest_size=8).digest()
    return int.from_bytes(digest, 'little')


def _escape(text):
    return text.replace('\\', '\\\\').replace('\n', '\\n').replace('\r', '\\r')


def _unescape(line):
    return _ESCAPED.sub(lambda m: {'\\': '\\', 'n': '\n', 'r': '\r'}[m.group(1)], line)


@dataclass
class EmbeddingMatrix:
    """Row-major embedding rows plus a null mask for unembeddable sentences.

    ``data`` is (count, dim) float32 or int8; int8 rows carry one float32 scale
    each. ``data`` may be a read-only memory map.
    """
    data: np.ndarray
    null_mask: np.ndarray
    scales: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.data.ndim != 2 or self.data.shape[1] < 1:
            raise FormatError(f'Embedding data must be 2-d with dim >= 1, got shape {self.data.shape}')
        if self.data.dtype not in (np.float32, np.int8):
            raise FormatError(f'Unsupported embedding dtype {self.data.dtype}')
        self.null_mask = np.asarray(self.null_mask, dtype=bool)
        if self.null_mask.shape != (self.count,):
            raise FormatError('Null mask length does not match row count')
        if self.dtype == 'int8':
            if self.scales is None or np.shape(self.scales) != (self.count,):
                raise FormatError('int8 matrices need one scale per row')
        elif self.scales is not None:
            raise FormatError('Only int8 matrices carry scales')
        if self.null_mask.any() and np.any(self.data[self.null_mask]):
            raise FormatError('Null rows must be all-zero')

    @property
    def dim(self):
        return int(self.data.shape[1])

    @property
    def count(self):
        return int(self.data.shape[0])

    @property
    def dtype(self):
        return 'int8' if self.data.dtype == np.int8 else 'float32'

    @classmethod
    def empty(cls, dim, dtype='float32'):
        scales = np.zeros(0, dtype=np.float32) if dtype == 'int8' else None
        return cls(np.zeros((0, dim), dtype=_NUMPY_DTYPES[dtype]), np.zeros(0, dtype=bool), scales)

    @classmethod
    def from_rows(cls, rows, dim):
        """Stack float rows; ``None`` entries become flagged all-zero rows."""
        data = np.zeros((len(rows), dim), dtype=np.float32)
        null_mask = np.zeros(len(rows), dtype=bool)
        for i, row in enumerate(rows):
            if row is None:
                null_mask[i] = True
            else:
                data[i] = row
        return cls(data, null_mask)

    def rows(self, ids):
        """Float32 copies of the selected rows (dequantized for int8)."""
        ids = np.asarray(ids, dtype=np.int64)
        rows = np.asarray(self.data[ids], dtype=np.float32)
        if self.dtype == 'int8':
            rows = rows * np.asarray(self.scales[ids], dtype=np.float32)[:, None]
        return rows

    def take(self, ids):
        ids = np.asarray(ids, dtype=np.int64)
        scales = None if self.scales is None else np.asarray(self.scales[ids], dtype=np.float32)
        return EmbeddingMatrix(np.array(self.data[ids]), self.null_mask[ids], scales)


def write_vectors(matrix, path):
    """Write ``matrix`` in the SABK format; a failed write leaves no file behind."""
    path = Path(path)
    np_dtype = _NUMPY_DTYPES[matrix.dtype]
    try:
        with open(path, 'wb') as fh:
            fh.write(VECTOR_HEADER.pack(VECTOR_MAGIC, VECTOR_VERSION, matrix.dim, matrix.count,
                                        DTYPE_CODES[matrix.dtype]))
            for start in range(0, matrix.count, _WRITE_CHUNK):
                chunk = matrix.data[start:start + _WRITE_CHUNK]
                np.ascontiguousarray(chunk, dtype=np_dtype).tofile(fh)
            if matrix.dtype == 'int8':
                np.ascontiguousarray(matrix.scales, dtype='<f4').tofile(fh)
            np.packbits(matrix.null_mask.astype(np.uint8), bitorder='little').tofile(fh)
    except OSError as exc:
        path.unlink(missing_ok=True)
        raise BankBuildError(f'Writing vectors to {path} failed: {exc}') from exc


def read_vectors(path, mmap=True, expected_dim=None):
    """Read a SABK vector file; the data section is memory-mapped by default."""
    path = Path(path)
    size = os.path.getsize(path)
    if size < VECTOR_HEADER.size:
        raise FormatError(f'{path}: truncated header')
    with open(path, 'rb') as fh:
        magic, version, dim, count, code = VECTOR_HEADER.unpack(fh.read(VECTOR_HEADER.size))
    if magic != VECTOR_MAGIC:
        raise FormatError(f'{path}: bad magic {magic!r}')
    if version != VECTOR_VERSION:
        raise FormatError(f'{path}: unsupported version {version}')
    if code not in DTYPE_NAMES:
        raise FormatError(f'{path}: unknown dtype code {code}')
    if dim < 1:
        raise FormatError(f'{path}: dimension must be positive')
    if expected_dim is not None and dim != expected_dim:
        raise FormatError(f'{path}: dimension {dim} does not match expected {expected_dim}')

    dtype = DTYPE_NAMES[code]
    np_dtype = _NUMPY_DTYPES[dtype]
    data_offset = VECTOR_HEADER.size
    scales_offset = data_offset + dim * count * np_dtype.itemsize
    mask_offset = scales_offset + (4 * count if dtype == 'int8' else 0)
    expected = mask_offset + (count + 7) // 8
    if size < expected:
        raise FormatError(f'{path}: truncated file ({size} of {expected} bytes)')
    if size > expected:
        raise FormatError(f'{path}: {size - expected} unexpected trailing bytes')

    if count == 0:
        return EmbeddingMatrix.empty(dim, dtype)
    if mmap:
        data = np.memmap(path, dtype=np_dtype, mode='r', offset=data_offset, shape=(count, dim))
    else:
        data = np.fromfile(path, dtype=np_dtype, count=count * dim, offset=data_offset).reshape(count, dim)
    scales = None
    if dtype == 'int8':
        scales = np.fromfile(path, dtype='<f4', count=count, offset=scales_offset).astype(np.float32)
    packed = np.fromfile(path, dtype=np.uint8, count=(count + 7) // 8, offset=mask_offset)
    null_mask = np.unpackbits(packed, count=count, bitorder='little').astype(bool)
    return EmbeddingMatrix(data, null_mask, scales)


class SentenceBank:
    def __init__(self, records, vectors=None, meta=None):
        self.records = list(records)
        self.meta = dict(meta or {})
        self.meta.setdefault('normalization_version', NORMALIZATION_VERSION)
        self.vectors = None
        if vectors is not None:
            self.attach_vectors(vectors)

    def __len__(self):
        return len(self.records)

    def __repr__(self):
        return f"<SentenceBank(count={self.count}, dim={self.dim})>"

    @property
    def count(self):
        return len(self.records)

    @property
    def dim(self):
        return 0 if self.vectors is None else self.vectors.dim

    def texts(self):
        return [record.text for record in self.records]

    def text(self, sentence_id):
        return self.records[sentence_id].text

    def attach_vectors(self, matrix):
        if matrix.count != self.count:
            raise FormatError(f'Vector count {matrix.count} does not match bank count {self.count}')
        self.vectors = matrix
        return self

    def save(self, prefix):
        """Write text, offsets and meta (and vectors when present) under ``prefix``.

        Files written before an I/O failure are removed again.
        """
        paths = bank_paths(prefix)
        written = []
        try:
            offsets = [0]
            written.append(paths['text'])
            with open(paths['text'], 'wb') as fh:
                for record in self.records:
                    line = (_escape(record.text) + '\n').encode('utf-8')
                    fh.write(line)
                    offsets.append(offsets[-1] + len(line))
            written.append(paths['offsets'])
            np.asarray(offsets, dtype='<u8').tofile(paths['offsets'])
            written.append(paths['meta'])
            meta = dict(self.meta, count=self.count, dim=self.dim)
            paths['meta'].write_text(json.dumps(meta, indent=2, sort_keys=True), encoding='utf-8')
            if self.vectors is not None:
                written.append(paths['vectors'])
                write_vectors(self.vectors, paths['vectors'])
        except (OSError, BankBuildError) as exc:
            for path in written:
                path.unlink(missing_ok=True)
            raise BankBuildError(f'Saving bank to {prefix} failed: {exc}') from exc
        log.info('Saved bank with %d sentences to %s', self.count, prefix)

    @classmethod
    def load(cls, prefix, mmap=True, quantized=False):
        paths = bank_paths(prefix)
        if not paths['text'].exists():
            raise FormatError(f'No bank text file at {paths["text"]}')
        meta = {}
        if paths['meta'].exists():
            meta = json.loads(paths['meta'].read_text(encoding='utf-8'))
        records = []
        with open(paths['text'], encoding='utf-8', newline='\n') as fh:
            for i, line in enumerate(fh):
                text = _unescape(line.rstrip('\n'))
                records.append(SentenceRecord(i, text, fingerprint(text)))
        vector_path = paths['quantized'] if quantized else paths['vectors']
        vectors = read_vectors(vector_path, mmap=mmap) if vector_path.exists() else None
        return cls(records, vectors, meta)


class TextLookup:
    """Random access to bank sentences through the offset table."""

    def __init__(self, prefix):
        paths = bank_paths(prefix)
        self.path = paths['text']
        if os.path.getsize(paths['offsets']) == 0:
            raise FormatError(f'{paths["offsets"]}: empty offset table')
        self._offsets = np.memmap(paths['offsets'], dtype='<u8', mode='r')

    def __len__(self):
        return len(self._offsets) - 1

    def __getitem__(self, sentence_id):
        if not 0 <= sentence_id < len(self):
            raise IndexError(sentence_id)
        start, end = int(self._offsets[sentence_id]), int(self._offsets[sentence_id + 1])
        with open(self.path, 'rb') as fh:
            fh.seek(start)
            raw = fh.read(end - start)
        return _unescape(raw.decode('utf-8').rstrip('\n'))

    def get_many(self, ids):
        return [self[int(i)] for i in ids]


def bank_paths(prefix):
    prefix = str(prefix)
    return {
        'text': Path(prefix + '.txt'),
        'offsets': Path(prefix + '.offsets'),
        'meta': Path(prefix + '.meta.json'),
        'vectors': Path(prefix + '.vec'),
        'quantized': Path(prefix + '.q8.vec'),
    }


def build_bank(sentence_stream, cfg=SegmentConfig(), out_prefix=None, source='', progress=False):
    """Keep the first occurrence of every normalized fingerprint, in stream order."""
    stats = BuildStats()
    seen = set()
    records = []
    stream = tqdm(sentence_stream, desc='Building bank', unit=' sent', disable=not progress)
    try:
        for sentence in stream:
            stats.seen += 1
            sentence = sentence.strip()
            n_tokens = len(sentence.split())
            if n_tokens < cfg.min_tokens:
                stats.too_short += 1
                continue
            if n_tokens > cfg.max_tokens:
                stats.too_long += 1
                continue
            fp = fingerprint(sentence)
            if fp in seen:
                stats.duplicates += 1
                continue
            seen.add(fp)
            records.append(SentenceRecord(len(records), sentence, fp))
    except OSError as exc:
        raise BankBuildError(f'Reading sentences failed: {exc}') from exc
    stats.kept = len(records)
    log.info('Bank built: %d kept of %d seen (%d duplicates)', stats.kept, stats.seen, stats.duplicates)

    meta = {
        'source': source,
        'min_tokens': cfg.min_tokens,
        'max_tokens': cfg.max_tokens,
        'build': asdict(stats),
    }
    bank = SentenceBank(records, meta=meta)
    if out_prefix is not None:
        bank.save(out_prefix)
    return bank


def dedup_stats(sentence_stream, cfg=SegmentConfig()):
    return BuildStats(**build_bank(sentence_stream, cfg).meta['build'])


def remove_overlap(bank, test_sentences) -> Tuple[SentenceBank, np.ndarray]:
    """Drop records whose normalized text equals a normalized test sentence.

    Returns the re-densified bank and an old->new id map (-1 for removed ids).
    """
    banned = {normalize(sentence) for sentence in test_sentences}
    id_map = np.full(bank.count, -1, dtype=np.int64)
    kept_ids = []
    records = []
    for record in bank.records:
        if normalize(record.text) in banned:
            continue
        id_map[record.id] = len(records)
        kept_ids.append(record.id)
        records.append(SentenceRecord(len(records), record.text, record.fingerprint))
    vectors = bank.vectors.take(kept_ids) if bank.vectors is not None else None
    meta = dict(bank.meta, overlap_removed=bank.count - len(records))
    log.info('Removed %d sentences overlapping the test set', bank.count - len(records))
    return SentenceBank(records, vectors, meta), id_map


def subsample_bank(bank, size, seed=0):
    """Uniform random subset of ``size`` sentences, original order kept.

    For a fixed seed, smaller subsets are contained in larger ones.
    """
    if size >= bank.count:
        return bank
    rng = np.random.default_rng(seed)
    kept_ids = np.sort(rng.permutation(bank.count)[:size])
    records = [SentenceRecord(new_id, bank.records[old_id].text, bank.records[old_id].fingerprint)
               for new_id, old_id in enumerate(kept_ids)]
    vectors = bank.vectors.take(kept_ids) if bank.vectors is not None else None
    return SentenceBank(records, vectors, dict(bank.meta, subsample_of=bank.count, subsample_seed=seed))


def iter_documents(path, cfg=SegmentConfig()) -> Iterator[str]:
    """Yield segmented sentences from a text file or a directory of ``.txt`` files.

    Each file is one document.
    """
    path = Path(path)
    files = sorted(path.rglob('*.txt')) if path.is_dir() else [path]
    for file in files:
        yield from segment(file.read_text(encoding='utf-8'), cfg)


def read_lines(path) -> List[str]:
    with open(path, encoding='utf-8') as fh:
        return [line.rstrip('\n') for line in fh if line.strip()]
