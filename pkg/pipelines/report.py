"""
Experiment reports: one JSON document per run plus a fixed-width summary.
"""
import json
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from models.errors import LeakageError
from models.sentence_bank import normalize


def mean_std(values):
    """Arithmetic mean and population standard deviation."""
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        return {'mean': None, 'std': None, 'n': 0}
    return {'mean': float(values.mean()), 'std': float(values.std()), 'n': int(values.size)}


def check_leakage(synthetic_texts, test_texts):
    """Raise when a synthetic sentence normalizes to a test sentence."""
    test = {normalize(text) for text in test_texts}
    overlap = sorted({text for text in synthetic_texts if normalize(text) in test})
    if overlap:
        raise LeakageError(f'{len(overlap)} synthetic sentences appear in the test set, e.g. {overlap[0]!r}')
    return {'leakage_checked': True, 'overlap': 0}


class Timer:
    def __init__(self):
        self.timings = {}

    @contextmanager
    def stage(self, name):
        start = time.perf_counter()
        try:
            yield
        finally:
            self.timings[name] = self.timings.get(name, 0.0) + time.perf_counter() - start


@dataclass
class ExperimentReport:
    protocol: str
    config: Dict = field(default_factory=dict)
    config_snapshot: str = ''
    status: str = 'running'
    teacher: Dict = field(default_factory=dict)
    student: Dict = field(default_factory=dict)
    baseline: Dict = field(default_factory=dict)
    per_seed: List[Dict] = field(default_factory=list)
    per_train_set: List[Dict] = field(default_factory=list)
    provenance: Dict = field(default_factory=dict)
    timings: Dict = field(default_factory=dict)
    leakage: Dict = field(default_factory=dict)
    error: Optional[str] = None

    def aggregate(self, teacher_key='teacher_accuracy', student_key='student_accuracy'):
        """Fill teacher/student mean and std from the per-seed rows."""
        self.teacher = mean_std([row[teacher_key] for row in self.per_seed if teacher_key in row])
        self.student = mean_std([row[student_key] for row in self.per_seed if student_key in row])
        if self.per_seed and all(teacher_key in row and student_key in row for row in self.per_seed):
            self.student['improved_seeds'] = sum(row[student_key] > row[teacher_key] for row in self.per_seed)
        return self

    def fail(self, error):
        self.status = 'failed'
        self.error = str(getattr(error, 'detail', None) or error)
        return self

    def succeed(self):
        self.status = 'succeeded'
        return self

    def json(self):
        return {
            'protocol': self.protocol,
            'status': self.status,
            'config': self.config,
            'config_snapshot': self.config_snapshot,
            'teacher': self.teacher,
            'student': self.student,
            'baseline': self.baseline,
            'per_seed': self.per_seed,
            'per_train_set': self.per_train_set,
            'provenance': self.provenance,
            'timings': {name: round(seconds, 4) for name, seconds in self.timings.items()},
            'leakage': self.leakage,
            'error': self.error,
        }

    def to_json(self, indent=2):
        return json.dumps(self.json(), indent=indent, sort_keys=False, default=_plain)

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as fh:
            fh.write(self.to_json() + '\n')

    def summary_table(self):
        lines = [f'{"protocol":<14}{self.protocol:<20}{"status":<10}{self.status}',
                 '-' * 70,
                 f'{"model":<14}{"mean":>12}{"std":>12}{"n":>6}']
        for name, metrics in (('teacher', self.teacher), ('baseline', self.baseline), ('student', self.student)):
            if metrics and metrics.get('n'):
                lines.append(f'{name:<14}{metrics["mean"]:>12.4f}{metrics["std"]:>12.4f}{metrics["n"]:>6}')
        if self.per_seed:
            lines.append('-' * 70)
            lines.append(f'{"seed":<8}{"teacher":>10}{"student":>10}{"pool":>10}{"synthetic":>11}{"shortfall":>11}')
            for row in self.per_seed:
                lines.append(f'{row.get("seed", ""):<8}'
                             f'{_fmt(row.get("teacher_accuracy")):>10}{_fmt(row.get("student_accuracy")):>10}'
                             f'{row.get("pool_size", ""):>10}{row.get("synthetic_size", ""):>11}'
                             f'{row.get("shortfall", ""):>11}')
        if self.error:
            lines.append(f'error: {self.error}')
        return '\n'.join(lines)


def _fmt(value):
    return '' if value is None else f'{value:.4f}'


def _plain(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, tuple):
        return list(value)
    raise TypeError(f'{type(value).__name__} is not JSON serializable')
