import logging

import jsonschema
import numpy as np
from flask import Response, request, json

from api_views.json_schemas import search_schema
from api_views.main import error_message_helper
from models.embedder import build_encoder
from models.errors import AugbankError, ConfigError, RetrievalError
from models.sentence_bank import TextLookup, bank_paths
from models.vector_index import FlatIndex
import app

log = logging.getLogger(__name__)


class BankExplorer:
    """Read-only view of one bank on disk: texts by id and a search index."""

    def __init__(self, prefix, encoder=None):
        self.prefix = prefix
        self.paths = bank_paths(prefix)
        self.lookup = TextLookup(prefix)
        self.encoder = encoder
        self._indexes = {}

    def __repr__(self):
        return f"<BankExplorer(prefix={self.prefix}, sentences={len(self.lookup)})>"

    def index(self, quantized=False):
        if quantized not in self._indexes:
            if quantized and not self.paths['quantized'].exists():
                raise ConfigError('This bank has no quantized vectors; run "index quantize" first')
            self._indexes[quantized] = FlatIndex.from_bank(self.prefix, quantized=quantized)
        return self._indexes[quantized]

    def stats(self):
        bank_meta = {}
        if self.paths['meta'].exists():
            bank_meta = json.loads(self.paths['meta'].read_text(encoding='utf-8'))
        stats = {
            'prefix': str(self.prefix),
            'count': len(self.lookup),
            'quantized_available': self.paths['quantized'].exists(),
            'backend': self.encoder.backend if self.encoder else None,
            'meta': bank_meta,
        }
        if self.paths['vectors'].exists():
            matrix = self.index().matrix
            stats.update(dim=matrix.dim, dtype=matrix.dtype, nulls=int(matrix.null_mask.sum()))
        return stats


_explorer = {'current': None}


def configure(prefix, encoder=None):
    """Point the bank endpoints at another bank (``None`` unloads it)."""
    _explorer['current'] = BankExplorer(prefix, encoder) if prefix else None
    return _explorer['current']


def current_explorer():
    if _explorer['current'] is None and app.bank_prefix:
        encoder = None
        if app.vectors_path:
            encoder = build_encoder(app.backend, app.vectors_path, app.sif_path, app.proj_path)
        configure(app.bank_prefix, encoder)
    if _explorer['current'] is None:
        raise AugbankError('No sentence bank configured; set AUGBANK_BANK', status=503)
    return _explorer['current']


def get_bank_stats():
    return Response(json.dumps(current_explorer().stats()), 200, mimetype="application/json")


def get_sentence(sentence_id):
    explorer = current_explorer()
    try:
        text = explorer.lookup[int(sentence_id)]
    except IndexError:
        return Response(error_message_helper("Sentence not found!"), 404, mimetype="application/json")
    return Response(json.dumps({'id': int(sentence_id), 'text': text}), 200, mimetype="application/json")


def search():
    request_data = request.get_json(silent=True)
    try:
        jsonschema.validate(request_data, search_schema)
    except jsonschema.exceptions.ValidationError as exc:
        return Response(error_message_helper(exc.message), 400, mimetype="application/json")
    explorer = current_explorer()
    k = request_data.get('k', 10)
    quantized = request_data.get('quantized', False)
    if 'text' in request_data:
        if explorer.encoder is None:
            raise ConfigError('Text queries need an encoder; set AUGBANK_VECTORS')
        query = explorer.encoder.encode(request_data['text'])
        if query is None:
            raise RetrievalError('The query text has no in-vocabulary token')
    else:
        query = np.asarray(request_data['vector'], dtype=np.float32)
    hits = explorer.index(quantized).top_k(query, k)
    texts = explorer.lookup.get_many([hit.id for hit in hits])
    responseObject = {
        'status': 'success',
        'quantized': quantized,
        'hits': [{'id': hit.id, 'score': round(hit.score, 6), 'text': text} for hit, text in zip(hits, texts)]
    }
    return Response(json.dumps(responseObject), 200, mimetype="application/json")
