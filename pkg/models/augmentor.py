"""
Confidence filtering of teacher-annotated candidates.

The synthetic training set keeps, for every class, the candidates the teacher
is most confident about, in numbers that reproduce the label ratio of the
original training set at a configured size multiplier.
"""
import json
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import jsonschema
import numpy as np

from models.errors import ConfigError, FormatError, ShortfallError
from models.sentence_bank import normalize

log = logging.getLogger(__name__)

SMALL_TASK_MULTIPLIER = 100
MEDIUM_TASK_MULTIPLIER = 10

synthetic_record_schema = {
    "type": "object",
    "properties": {
        "id": {"type": "integer"},
        "text": {"type": "string"},
        "probs": {"type": "array", "items": {"type": "number", "minimum": 0}, "minItems": 2},
        "confidence": {"type": "number", "minimum": 0, "maximum": 1}
    },
    "required": ["text", "probs"]
}


@dataclass
class AugmentConfig:
    multiplier: Optional[int] = None
    small_task_threshold: int = 5000
    allow_shortfall: bool = False

    def __post_init__(self):
        if self.multiplier is not None and self.multiplier < 1:
            raise ConfigError('multiplier must be at least 1')


@dataclass
class SyntheticExample:
    text: str
    probs: np.ndarray
    confidence: float
    assigned_class: int
    sentence_id: int = -1

    @classmethod
    def from_probs(cls, text, probs, sentence_id=-1):
        probs = np.asarray(probs, dtype=np.float64)
        assigned = int(np.argmax(probs))
        return cls(text, probs, float(probs[assigned]), assigned, int(sentence_id))

    def json(self):
        return {
            'id': self.sentence_id,
            'text': self.text,
            'probs': [float(f'{p:.8g}') for p in self.probs],
            'confidence': float(f'{self.confidence:.8g}'),
        }


@dataclass
class FilterResult:
    examples: List[SyntheticExample]
    shortfalls: Dict[int, int] = field(default_factory=dict)
    excluded_overlap: int = 0

    def summary(self):
        return {
            'selected': len(self.examples),
            'shortfalls': {str(c): n for c, n in sorted(self.shortfalls.items())},
            'excluded_overlap': self.excluded_overlap,
        }


def choose_multiplier(train_size, cfg=AugmentConfig()):
    if cfg.multiplier is not None:
        return cfg.multiplier
    return SMALL_TASK_MULTIPLIER if train_size < cfg.small_task_threshold else MEDIUM_TASK_MULTIPLIER


def class_quotas(train_counts, target_total):
    """Largest-remainder apportionment of ``target_total`` over the class counts.

    Every class with training examples gets at least one unit; remainder ties
    go to the lowest class id.
    """
    counts = [int(c) for c in train_counts]
    total = sum(counts)
    if total == 0:
        raise ConfigError('Training set has no examples')
    positive = [c for c, n in enumerate(counts) if n > 0]
    if target_total < len(positive):
        raise ConfigError(f'Target size {target_total} is smaller than the number of classes')
    for c, n in enumerate(counts):
        if n == 0:
            log.warning('Class %d has no training examples; its quota is 0', c)

    quotas = [target_total * n // total for n in counts]
    remainders = [target_total * n % total for n in counts]
    for c in positive:
        if quotas[c] == 0:
            quotas[c] = 1
            remainders[c] = -1
    left = target_total - sum(quotas)
    for c in sorted(positive, key=lambda c: (-remainders[c], c))[:max(left, 0)]:
        quotas[c] += 1
    while sum(quotas) > target_total:
        # the minimum-one rule overshot: take back from the largest quota
        donor = max(range(len(quotas)), key=lambda c: (quotas[c], c))
        quotas[donor] -= 1
    return quotas


def filter_synthetic(pool, quotas, train_texts, allow_shortfall=False):
    """Top-confidence candidates per assigned class, after dropping candidates
    whose normalized text is a training sentence."""
    banned = {normalize(text) for text in train_texts}
    by_class = {c: [] for c in range(len(quotas))}
    excluded = 0
    for example in pool:
        if normalize(example.text) in banned:
            excluded += 1
            continue
        if example.assigned_class in by_class:
            by_class[example.assigned_class].append(example)

    selected, shortfalls = [], {}
    for c, quota in enumerate(quotas):
        ranked = sorted(by_class[c], key=lambda e: (-e.confidence, e.sentence_id))
        if len(ranked) < quota:
            shortfalls[c] = quota - len(ranked)
        selected.extend(ranked[:quota])
    if shortfalls:
        if not allow_shortfall:
            raise ShortfallError(shortfalls)
        log.warning('Synthetic set shortfall per class: %s', shortfalls)
    return FilterResult(selected, shortfalls, excluded)


def write_synthetic(examples, path):
    with open(path, 'w', encoding='utf-8') as fh:
        for example in examples:
            fh.write(json.dumps(example.json(), ensure_ascii=False) + '\n')


def read_synthetic(path):
    examples = []
    with open(path, encoding='utf-8') as fh:
        for line_no, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
                jsonschema.validate(record, synthetic_record_schema)
            except (json.JSONDecodeError, jsonschema.exceptions.ValidationError) as exc:
                raise FormatError(f'{path}:{line_no}: {getattr(exc, "message", exc)}') from exc
            examples.append(SyntheticExample.from_probs(record['text'], record['probs'],
                                                        record.get('id', line_no - 1)))
    return examples
