import logging

from models.embedder import embed_bank
from models.errors import ConfigError
from models.sentence_bank import SegmentConfig, SentenceBank, build_bank, remove_overlap, subsample_bank
from models.vector_index import DEFAULT_RESCORE_FACTOR, DEFAULT_SHARD_SIZE, FlatIndex, quantize

log = logging.getLogger(__name__)


class RetrievalResources:
    """An embedded sentence bank, the encoder that embedded it and a search index over it."""

    def __init__(self, bank, encoder, quantized=False, shard_size=DEFAULT_SHARD_SIZE,
                 rescore_factor=DEFAULT_RESCORE_FACTOR, workers=1):
        if bank.vectors is None:
            bank.attach_vectors(embed_bank(bank, encoder))
            bank.meta['backend'] = encoder.backend
        if bank.dim != encoder.dim:
            raise ConfigError(f'Bank vectors have dim {bank.dim}, the {encoder.backend} encoder produces {encoder.dim}')
        embedded_with = bank.meta.get('backend')
        if embedded_with and embedded_with != encoder.backend:
            raise ConfigError(f'Bank was embedded with {embedded_with!r}, queries use {encoder.backend!r}')
        if bank.vectors.dtype != 'float32':
            raise ConfigError('Pipelines need the float32 bank vectors')
        self.bank = bank
        self.encoder = encoder
        self.quantized = quantized
        self.shard_size = shard_size
        self.rescore_factor = rescore_factor
        self.workers = workers
        self._index = None

    def __repr__(self):
        return f"<RetrievalResources(count={self.count}, backend={self.encoder.backend}, quantized={self.quantized})>"

    @classmethod
    def from_texts(cls, texts, encoder, cfg=None, segment_cfg=SegmentConfig()):
        return cls.with_config(build_bank(texts, segment_cfg), encoder, cfg)

    @classmethod
    def from_prefix(cls, prefix, encoder, cfg=None):
        return cls.with_config(SentenceBank.load(prefix), encoder, cfg)

    @classmethod
    def with_config(cls, bank, encoder, cfg=None):
        if cfg is None:
            return cls(bank, encoder)
        return cls(bank, encoder, cfg.quantized, cfg.shard_size, cfg.rescore_factor, cfg.workers)

    def _derive(self, bank):
        return RetrievalResources(bank, self.encoder, self.quantized, self.shard_size,
                                  self.rescore_factor, self.workers)

    @property
    def count(self):
        return self.bank.count

    @property
    def index(self):
        if self._index is None:
            vectors = self.bank.vectors
            if self.quantized:
                self._index = FlatIndex(quantize(vectors), self.shard_size, self.rescore_factor,
                                        rescore_matrix=vectors, workers=self.workers)
            else:
                self._index = FlatIndex(vectors, self.shard_size, workers=self.workers)
        return self._index

    def texts(self, ids):
        return [self.bank.text(int(i)) for i in ids]

    def without(self, sentences):
        """Copy of these resources with every bank sentence equal (normalized) to one of ``sentences`` removed."""
        bank, _ = remove_overlap(self.bank, sentences)
        return self._derive(bank)

    def subsample(self, size, seed=0):
        if size >= self.count:
            return self
        log.info('Subsampling bank from %d to %d sentences', self.count, size)
        return self._derive(subsample_bank(self.bank, size, seed))
