"""
Teacher and student classifiers: feed-forward softmax models over sentence
embeddings, trained with plain mini-batch SGD on cross-entropy (hard labels)
or KL divergence (soft labels).
"""
import logging
import struct
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np
from tqdm import tqdm

from models.augmentor import SyntheticExample
from models.errors import ConfigError, FormatError, TrainingError

log = logging.getLogger(__name__)

CROSS_ENTROPY = 'cross_entropy'
KL = 'kl'
_LOSS_ALIASES = {'ce': CROSS_ENTROPY, 'cross-entropy': CROSS_ENTROPY, 'kl': KL}

MODEL_MAGIC = b'SAMD'
MODEL_VERSION = 1
MODEL_HEADER = struct.Struct('<4sIIIIB')  # magic, version, input_dim, num_classes, n_hidden, dtype


@dataclass(frozen=True)
class ClassifierSpec:
    input_dim: int
    num_classes: int
    hidden_dims: Tuple[int, ...] = ()

    def __post_init__(self):
        if self.input_dim < 1 or self.num_classes < 2:
            raise ConfigError('Classifiers need input_dim >= 1 and at least two classes')
        object.__setattr__(self, 'hidden_dims', tuple(int(h) for h in self.hidden_dims))

    @property
    def layer_dims(self):
        return (self.input_dim,) + self.hidden_dims + (self.num_classes,)

    def parameter_count(self):
        dims = self.layer_dims
        return sum(dims[i] * dims[i + 1] + dims[i + 1] for i in range(len(dims) - 1))


@dataclass
class TrainSpec:
    loss: str = KL
    epochs: int = 50
    batch_size: int = 32
    learning_rate: float = 0.1
    seed: int = 0

    def __post_init__(self):
        self.loss = _LOSS_ALIASES.get(self.loss, self.loss)
        if self.loss not in (CROSS_ENTROPY, KL):
            raise ConfigError(f'Unknown loss {self.loss!r}')
        if self.epochs < 1:
            raise ConfigError('epochs must be at least 1')
        if self.batch_size < 1 or self.learning_rate <= 0:
            raise ConfigError('batch_size and learning_rate must be positive')


def softmax(logits):
    logits = np.asarray(logits, dtype=np.float64)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    exp = np.exp(shifted)
    return exp / exp.sum(axis=-1, keepdims=True)


def kl_div(target, predicted):
    """sum_c t_c ln(t_c / p_c) with 0 ln 0 = 0."""
    t = np.asarray(target, dtype=np.float64)
    p = np.asarray(predicted, dtype=np.float64)
    terms = np.where(t > 0, t * (np.log(np.where(t > 0, t, 1.0)) - np.log(p)), 0.0)
    return float(max(terms.sum(), 0.0))


class Classifier:
    """Dense tanh layers followed by a softmax output layer."""

    def __init__(self, spec, weights, biases, seed=None):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.seed = seed
        dims = spec.layer_dims
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (dims[i + 1], dims[i]) or b.shape != (dims[i + 1],):
                raise FormatError(f'Layer {i} has shape {w.shape}, expected {(dims[i + 1], dims[i])}')

    def __repr__(self):
        return f"<Classifier(dims={self.spec.layer_dims}, params={self.parameter_count()})>"

    @classmethod
    def initialize(cls, spec, seed=0):
        """Weights uniform in +-1/sqrt(fan_in), biases zero."""
        rng = np.random.default_rng(seed)
        dims = spec.layer_dims
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            bound = 1.0 / np.sqrt(fan_in)
            weights.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
            biases.append(np.zeros(fan_out))
        return cls(spec, weights, biases, seed)

    @classmethod
    def zeros(cls, spec):
        dims = spec.layer_dims
        return cls(spec, [np.zeros((o, i)) for i, o in zip(dims[:-1], dims[1:])],
                   [np.zeros(o) for o in dims[1:]])

    def copy(self):
        return Classifier(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases], self.seed)

    @property
    def num_classes(self):
        return self.spec.num_classes

    def parameter_count(self):
        return self.spec.parameter_count()

    def _activations(self, X):
        activations = [X]
        for w, b in zip(self.weights[:-1], self.biases[:-1]):
            activations.append(np.tanh(activations[-1] @ w.T + b))
        logits = activations[-1] @ self.weights[-1].T + self.biases[-1]
        return activations, logits

    def _features(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.spec.input_dim:
            raise TrainingError(f'Input dimension {X.shape[1]} does not match model input {self.spec.input_dim}',
                                status=400)
        return X

    def logits(self, X):
        return self._activations(self._features(X))[1]

    def predict_proba(self, X):
        return softmax(self.logits(X))

    def forward(self, x):
        return self.predict_proba(x)[0]

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)

    def accuracy(self, X, y):
        return float(np.mean(self.predict(X) == np.asarray(y)))

    def loss_and_grads(self, X, targets):
        """Mean loss over the batch and gradients for every layer.

        ``targets`` is a (n, C) probability matrix; one-hot rows give
        cross-entropy, soft rows give KL (the two differ by the target
        entropy, so the gradients coincide).
        """
        X = self._features(X)
        T = np.asarray(targets, dtype=np.float64)
        activations, logits = self._activations(X)
        P = softmax(logits)
        log_p = logits - logits.max(axis=1, keepdims=True)
        log_p = log_p - np.log(np.exp(log_p).sum(axis=1, keepdims=True))
        safe_t = np.where(T > 0, T, 1.0)
        loss = float(np.sum(np.where(T > 0, T * (np.log(safe_t) - log_p), 0.0)) / len(X))

        delta = (P - T) / len(X)
        grad_w, grad_b = [None] * len(self.weights), [None] * len(self.biases)
        for layer in range(len(self.weights) - 1, -1, -1):
            grad_w[layer] = delta.T @ activations[layer]
            grad_b[layer] = delta.sum(axis=0)
            if layer > 0:
                delta = (delta @ self.weights[layer]) * (1.0 - activations[layer] ** 2)
        return loss, grad_w, grad_b

    def save(self, path):
        with open(path, 'wb') as fh:
            fh.write(MODEL_HEADER.pack(MODEL_MAGIC, MODEL_VERSION, self.spec.input_dim,
                                       self.spec.num_classes, len(self.spec.hidden_dims), 0))
            np.asarray(self.spec.hidden_dims, dtype='<u4').tofile(fh)
            for w, b in zip(self.weights, self.biases):
                np.ascontiguousarray(w, dtype='<f4').tofile(fh)
                np.ascontiguousarray(b, dtype='<f4').tofile(fh)

    @classmethod
    def load(cls, path):
        with open(path, 'rb') as fh:
            raw = fh.read()
        if len(raw) < MODEL_HEADER.size:
            raise FormatError(f'{path}: truncated model header')
        magic, version, input_dim, num_classes, n_hidden, dtype = MODEL_HEADER.unpack_from(raw)
        if magic != MODEL_MAGIC or version != MODEL_VERSION or dtype != 0:
            raise FormatError(f'{path}: not a version {MODEL_VERSION} float32 model file')
        offset = MODEL_HEADER.size
        hidden = tuple(int(h) for h in np.frombuffer(raw, dtype='<u4', count=n_hidden, offset=offset))
        offset += 4 * n_hidden
        spec = ClassifierSpec(input_dim, num_classes, hidden)
        dims = spec.layer_dims
        expected = offset + 4 * spec.parameter_count()
        if len(raw) != expected:
            raise FormatError(f'{path}: expected {expected} bytes, found {len(raw)}')
        weights, biases = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            weights.append(np.frombuffer(raw, '<f4', fan_in * fan_out, offset).reshape(fan_out, fan_in))
            offset += 4 * fan_in * fan_out
            biases.append(np.frombuffer(raw, '<f4', fan_out, offset))
            offset += 4 * fan_out
        return cls(spec, weights, biases)


@dataclass
class TrainResult:
    model: Classifier
    final_loss: float
    history: List[float] = field(default_factory=list)


def _targets(labels, num_classes, loss):
    labels = np.asarray(labels)
    if loss == CROSS_ENTROPY:
        if labels.ndim != 1 or not np.issubdtype(labels.dtype, np.integer):
            raise TrainingError('cross_entropy training needs integer class ids', status=400)
        if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
            raise TrainingError('class id outside the model output range', status=400)
        return np.eye(num_classes)[labels]
    if labels.ndim != 2 or labels.shape[1] != num_classes:
        raise TrainingError('kl training needs one probability row per example', status=400)
    return labels.astype(np.float64)


def train(model_spec, features, labels, spec=TrainSpec(), progress=False):
    """Mini-batch SGD from a seeded initialization; deterministic given the seed."""
    X = np.asarray(features, dtype=np.float64)
    if len(X) == 0:
        raise TrainingError('No training examples', status=400)
    T = _targets(labels, model_spec.num_classes, spec.loss)
    if len(T) != len(X):
        raise TrainingError('features and labels differ in length', status=400)

    model = Classifier.initialize(model_spec, spec.seed)
    rng = np.random.default_rng(spec.seed + 1)
    history = []
    for epoch in tqdm(range(spec.epochs), desc='Epochs', disable=not progress):
        order = rng.permutation(len(X))
        epoch_loss = 0.0
        for start in range(0, len(X), spec.batch_size):
            idx = order[start:start + spec.batch_size]
            loss, grad_w, grad_b = model.loss_and_grads(X[idx], T[idx])
            if not np.isfinite(loss):
                raise TrainingError(f'Loss became {loss} in epoch {epoch} at batch offset {start} '
                                    f'(learning rate {spec.learning_rate})')
            for layer in range(len(model.weights)):
                model.weights[layer] -= spec.learning_rate * grad_w[layer]
                model.biases[layer] -= spec.learning_rate * grad_b[layer]
            epoch_loss += loss * len(idx)
        history.append(epoch_loss / len(X))
    final_loss = model.loss_and_grads(X, T)[0]
    log.debug('trained %r: final mean loss %.6f', model, final_loss)
    return TrainResult(model, final_loss, history)


def annotate(model, sentences, encoder, ids=None):
    """Teacher distributions for every embeddable sentence.

    Returns the synthetic examples and the number of sentences dropped for
    having no embedding.
    """
    ids = list(range(len(sentences))) if ids is None else list(ids)
    rows, kept = [], []
    for sentence_id, text in zip(ids, sentences):
        vector = encoder.encode(text)
        if vector is not None:
            rows.append(vector)
            kept.append((sentence_id, text))
    dropped = len(sentences) - len(kept)
    if dropped:
        log.info('Dropped %d sentences without an embedding before annotation', dropped)
    if not kept:
        return [], dropped
    probs = model.predict_proba(np.vstack(rows))
    return [SyntheticExample.from_probs(text, p, sentence_id)
            for (sentence_id, text), p in zip(kept, probs)], dropped
