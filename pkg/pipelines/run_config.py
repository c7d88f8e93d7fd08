"""
Experiment configuration files.

One ``key = value`` per line, ``#`` starts a comment. Keys are the CLI flag
names (dashes or underscores); CLI flags override file values. The parsed
values are checked against ``pipeline_config_schema`` and the verbatim text
is kept as the report's config snapshot.
"""
import dataclasses
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import jsonschema

from models.errors import ConfigError

pipeline_config_schema = {
    "type": "object",
    "properties": {
        "train": {"type": "string"},
        "valid": {"type": "string"},
        "test": {"type": "string"},
        "bank": {"type": "string"},
        "out": {"type": "string"},
        "registry": {"type": "boolean"},
        "backend": {"enum": ["avg", "sif", "proj"]},
        "vectors": {"type": "string"},
        "sif_params": {"type": "string"},
        "proj_model": {"type": "string"},
        "query_mode": {"enum": ["all", "label", "sent", "all-average", "label-average", "per-sentence"]},
        "quantized": {"type": "boolean"},
        "rescore_factor": {"type": "integer", "minimum": 1},
        "shard_size": {"type": "integer", "minimum": 1},
        "bank_size": {"type": "integer", "minimum": 1},
        "multiplier": {"anyOf": [{"type": "integer", "minimum": 1}, {"const": "auto"}]},
        "small_task_threshold": {"type": "integer", "minimum": 1},
        "pool_factor": {"type": "integer", "minimum": 1},
        "allow_shortfall": {"type": "boolean"},
        "labels": {"enum": ["soft", "hard"]},
        "teacher_hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "student_hidden": {"type": "array", "items": {"type": "integer", "minimum": 1}},
        "epochs": {"type": "integer", "minimum": 1},
        "student_epochs": {"type": "integer", "minimum": 1},
        "batch_size": {"type": "integer", "minimum": 1},
        "learning_rate": {"type": "number", "exclusiveMinimum": 0},
        "seeds": {"type": "array", "items": {"type": "integer", "minimum": 0}, "minItems": 1},
        "workers": {"type": "integer", "minimum": 1},
        "unlabeled_source": {"enum": ["retrieved", "random", "ground_truth_pool", "confidence_only"]},
        "ground_truth_pool": {"type": "string"},
        "augment_scale": {"type": "integer", "minimum": 1},
        "n_per_class": {"type": "integer", "minimum": 1},
        "n_train_sets": {"type": "integer", "minimum": 1},
        "n_valid": {"type": "integer", "minimum": 1},
        "n_seeds": {"type": "integer", "minimum": 1},
        "top_models": {"type": "integer", "minimum": 1},
        "augment_factor": {"type": "integer", "minimum": 1},
        "include_ground_truth": {"type": "boolean"}
    },
    "additionalProperties": False
}

_TRUE = {'true', 'yes', 'on', '1'}
_FALSE = {'false', 'no', 'off', '0'}
_LIST_KEYS = {'seeds', 'teacher_hidden', 'student_hidden'}
_BOOL_KEYS = {key for key, rule in pipeline_config_schema['properties'].items()
              if rule.get('type') == 'boolean'}


@dataclass
class PipelineConfig:
    train: Optional[str] = None
    valid: Optional[str] = None
    test: Optional[str] = None
    bank: Optional[str] = None
    out: Optional[str] = None
    registry: bool = False

    backend: str = 'avg'
    vectors: Optional[str] = None
    sif_params: Optional[str] = None
    proj_model: Optional[str] = None

    query_mode: str = 'label'
    quantized: bool = False
    rescore_factor: int = 10
    shard_size: int = 1 << 16
    bank_size: Optional[int] = None

    multiplier: Optional[int] = None
    small_task_threshold: int = 5000
    pool_factor: Optional[int] = None
    allow_shortfall: bool = False
    labels: Optional[str] = None

    teacher_hidden: Tuple[int, ...] = (256,)
    student_hidden: Optional[Tuple[int, ...]] = None
    epochs: int = 50
    student_epochs: Optional[int] = None
    batch_size: int = 32
    learning_rate: float = 0.1
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2, 3, 4])
    workers: int = 1

    unlabeled_source: str = 'retrieved'
    ground_truth_pool: Optional[str] = None
    augment_scale: int = 1

    n_per_class: int = 20
    n_train_sets: int = 5
    n_valid: int = 200
    n_seeds: int = 10
    top_models: int = 3
    augment_factor: int = 10
    include_ground_truth: bool = True

    snapshot: str = ''

    def as_dict(self):
        values = dataclasses.asdict(self)
        values.pop('snapshot')
        return values

    def override(self, **values):
        """Copy with every non-None value applied, validated like a config file."""
        merged = self.as_dict()
        merged.update({key: value for key, value in values.items() if value is not None})
        merged = {key: list(value) if isinstance(value, tuple) else value
                  for key, value in merged.items() if value is not None}
        return config_from_dict(merged, snapshot=self.snapshot)


def _coerce(key, raw):
    value = raw.strip()
    if key in _LIST_KEYS:
        return [int(part) for part in value.replace(',', ' ').split()]
    if key in _BOOL_KEYS:
        lowered = value.lower()
        if lowered in _TRUE:
            return True
        if lowered in _FALSE:
            return False
        raise ValueError(f'{value!r} is not a boolean')
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            pass
    return value


def parse_config_text(text):
    """Parse ``key = value`` lines into a plain dict (no schema check)."""
    values = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split('#', 1)[0].strip()
        if not line:
            continue
        key, sep, raw = line.partition('=')
        if not sep:
            raise ConfigError(f'config line {line_no}: expected "key = value"')
        key = key.strip().replace('-', '_')
        try:
            values[key] = _coerce(key, raw)
        except ValueError as exc:
            raise ConfigError(f'config line {line_no}: bad value for {key}: {exc}') from exc
    return values


def config_from_dict(values, snapshot=''):
    try:
        jsonschema.validate(values, pipeline_config_schema)
    except jsonschema.exceptions.ValidationError as exc:
        where = '.'.join(str(p) for p in exc.path) or 'config'
        raise ConfigError(f'{where}: {exc.message}') from exc
    values = dict(values)
    if values.get('multiplier') == 'auto':
        values['multiplier'] = None
    for key in ('teacher_hidden', 'student_hidden'):
        if key in values:
            values[key] = tuple(values[key])
    return PipelineConfig(snapshot=snapshot, **values)


def load_config(path):
    with open(path, encoding='utf-8') as fh:
        text = fh.read()
    return config_from_dict(parse_config_text(text), snapshot=text)
