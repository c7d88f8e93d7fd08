"""
End-to-end experiment protocols.

Every protocol trains a teacher on the labeled data, gathers unlabeled
candidates from the bank, lets the teacher annotate them and trains a student
on the annotated sentences. Seeds run as independent jobs; results are
aggregated in seed order.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from tqdm import tqdm

from models.augmentor import AugmentConfig, FilterResult, choose_multiplier, class_quotas, filter_synthetic
from models.classifier import CROSS_ENTROPY, KL, ClassifierSpec, TrainSpec, annotate, train
from models.errors import AugbankError, CapacityError, ConfigError, ShortfallError, TrainingError
from models.sentence_bank import normalize
from models.task_queries import build_queries, default_per_query_k, retrieve_pool
from pipelines.evaluation import eval_accuracy, featurize
from pipelines.report import ExperimentReport, Timer, check_leakage, mean_std
from pipelines.run_config import PipelineConfig

log = logging.getLogger(__name__)

RETRIEVED = 'retrieved'
RANDOM = 'random'
GROUND_TRUTH_POOL = 'ground_truth_pool'
CONFIDENCE_ONLY = 'confidence_only'
SOURCES = (RETRIEVED, RANDOM, GROUND_TRUTH_POOL, CONFIDENCE_ONLY)

FULL_DATA_POOL_FACTOR = 20

DISCRETE = 'discrete'
SOFT = 'soft'


@dataclass
class FewShotSpec:
    n_per_class: int = 20
    n_train_sets: int = 5
    n_valid: int = 200
    n_seeds: int = 10
    top_models: int = 3
    epochs: int = 50
    pool_factor: int = 1000
    augment_factor: int = 10
    label_kind: str = DISCRETE
    include_ground_truth: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.top_models > self.n_seeds:
            raise ConfigError(f'top_models ({self.top_models}) cannot exceed n_seeds ({self.n_seeds})')
        if self.label_kind not in (DISCRETE, SOFT):
            raise ConfigError(f'Unknown label kind {self.label_kind!r}')
        if min(self.n_per_class, self.n_train_sets, self.n_valid, self.n_seeds, self.top_models,
               self.epochs, self.pool_factor, self.augment_factor) < 1:
            raise ConfigError('Few-shot sizes must be positive')

    @classmethod
    def from_config(cls, cfg):
        return cls(n_per_class=cfg.n_per_class, n_train_sets=cfg.n_train_sets, n_valid=cfg.n_valid,
                   n_seeds=cfg.n_seeds, top_models=cfg.top_models, epochs=cfg.epochs,
                   pool_factor=cfg.pool_factor or 1000, augment_factor=cfg.augment_factor,
                   label_kind=SOFT if cfg.labels == 'soft' else DISCRETE,
                   include_ground_truth=cfg.include_ground_truth, seed=cfg.seeds[0])


def _new_report(protocol, cfg):
    return ExperimentReport(protocol, config=cfg.as_dict(), config_snapshot=cfg.snapshot)


def _train_spec(cfg, seed, loss, epochs=None):
    return TrainSpec(loss, epochs or cfg.epochs, cfg.batch_size, cfg.learning_rate, seed)


def _prepare_resources(resources, test, cfg, report):
    """Bank-size ablation and test-overlap removal, recorded in the provenance."""
    report.provenance['bank_count'] = resources.count
    if cfg.bank_size:
        resources = resources.subsample(cfg.bank_size)
        report.provenance['bank_subsample'] = resources.count
    before = resources.count
    resources = resources.without(test.texts)
    report.provenance['test_overlap_removed'] = before - resources.count
    return resources


def _synthetic_features(encoder, examples):
    return np.vstack([encoder.encode(example.text) for example in examples])


def _exclude_texts(examples, texts):
    banned = {normalize(text) for text in texts}
    kept = [example for example in examples if normalize(example.text) not in banned]
    return kept, len(examples) - len(kept)


def _map_seeds(job, seeds, workers, desc):
    seeds = list(seeds)
    if workers > 1 and len(seeds) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(job, seeds))
    else:
        rows = [job(seed) for seed in tqdm(seeds, desc=desc, leave=False, disable=None)]
    return sorted(rows, key=lambda row: row['seed'])


class _FullDataRun:
    """Shared flow of self-training and distillation."""

    def __init__(self, train_set, test, resources, cfg, teacher_spec, student_spec, source, budget,
                 ground_truth_pool=None):
        if source not in SOURCES:
            raise ConfigError(f'Unknown unlabeled source {source!r}; choose one of {", ".join(SOURCES)}')
        if source == GROUND_TRUTH_POOL and not ground_truth_pool:
            raise ConfigError('The ground_truth_pool source needs a non-empty sentence pool')
        self.train_set = train_set
        self.test = test
        self.resources = resources
        self.encoder = resources.encoder
        self.cfg = cfg
        self.teacher_spec = teacher_spec
        self.student_spec = student_spec
        self.source = source
        self.budget = budget
        self.quotas = class_quotas(train_set.counts, budget)
        self.pool_factor = cfg.pool_factor or FULL_DATA_POOL_FACTOR
        self.X_train, self.y_train = featurize(train_set, self.encoder, skip_null=True)
        if len(self.y_train) == 0:
            raise TrainingError('No training sentence has an embedding', status=400)
        self.test_features = featurize(test, self.encoder)
        self.ground_truth_pool = None
        if ground_truth_pool is not None:
            self.ground_truth_pool, removed = _exclude_texts_plain(ground_truth_pool, test.texts)
            if removed:
                log.info('Removed %d ground-truth pool sentences that appear in the test set', removed)
        self.retrieved = self._retrieve() if source == RETRIEVED else None

    def _retrieve(self):
        queries = build_queries(self.train_set, self.cfg.query_mode, self.encoder)
        per_query_k = default_per_query_k(self.budget, len(queries), self.pool_factor)
        pool = retrieve_pool(queries, self.resources.index, per_query_k)
        ids = [entry.id for entry in pool]
        log.info('Retrieved %d candidates with %d %s queries (k=%d)', len(ids), len(queries),
                 queries.mode, per_query_k)
        return ids, self.resources.texts(ids)

    def _sample_bank(self, size, seed):
        size = min(size, self.resources.count)
        rng = np.random.default_rng([seed, 7])
        ids = np.sort(rng.choice(self.resources.count, size=size, replace=False)).tolist()
        return ids, self.resources.texts(ids)

    def candidates(self, seed):
        if self.source == RETRIEVED:
            return self.retrieved
        if self.source == RANDOM:
            return self._sample_bank(self.budget, seed)
        if self.source == CONFIDENCE_ONLY:
            return self._sample_bank(self.pool_factor * self.budget, seed)
        pool = self.ground_truth_pool
        if len(pool) > self.budget:
            chosen = np.sort(np.random.default_rng([seed, 7]).choice(len(pool), size=self.budget, replace=False))
            return chosen.tolist(), [pool[i] for i in chosen]
        return list(range(len(pool))), list(pool)

    def select(self, examples):
        if self.source in (RETRIEVED, CONFIDENCE_ONLY):
            return filter_synthetic(examples, self.quotas, self.train_set.texts, self.cfg.allow_shortfall)
        # random and ground-truth candidates are used as annotated, without confidence filtering
        kept, excluded = _exclude_texts(examples, self.train_set.texts)
        kept = kept[:self.budget]
        if len(kept) < self.budget and not self.cfg.allow_shortfall:
            raise ShortfallError({'all': self.budget - len(kept)})
        return FilterResult(kept, {'all': self.budget - len(kept)} if len(kept) < self.budget else {}, excluded)

    def student_targets(self, examples):
        if (self.cfg.labels or SOFT) == SOFT:
            return np.vstack([example.probs for example in examples]), KL
        return np.array([example.assigned_class for example in examples], dtype=np.int64), CROSS_ENTROPY

    def __call__(self, seed):
        timer = Timer()
        cfg = self.cfg
        with timer.stage('teacher'):
            teacher = train(self.teacher_spec, self.X_train, self.y_train,
                            _train_spec(cfg, seed, CROSS_ENTROPY)).model
            teacher_accuracy = eval_accuracy(teacher, self.test_features)
        with timer.stage('candidates'):
            ids, texts = self.candidates(seed)
        with timer.stage('annotate'):
            examples, dropped = annotate(teacher, texts, self.encoder, ids)
        with timer.stage('filter'):
            result = self.select(examples)
        if not result.examples:
            raise TrainingError('The synthetic training set is empty')
        leakage = check_leakage([example.text for example in result.examples], self.test.texts)
        with timer.stage('student'):
            targets, loss = self.student_targets(result.examples)
            student = train(self.student_spec, _synthetic_features(self.encoder, result.examples), targets,
                            _train_spec(cfg, seed, loss, cfg.student_epochs)).model
            student_accuracy = eval_accuracy(student, self.test_features)
        shortfall = sum(result.shortfalls.values())
        row = {
            'seed': seed,
            'teacher_accuracy': teacher_accuracy,
            'student_accuracy': student_accuracy,
            'pool_size': len(texts),
            'annotated': len(examples),
            'null_dropped': dropped,
            'quota_total': self.budget,
            'shortfall': shortfall,
            'synthetic_size': len(result.examples),
            'excluded_train_overlap': result.excluded_overlap,
            'synthetic_per_class': np.bincount([e.assigned_class for e in result.examples],
                                               minlength=self.train_set.num_classes).tolist(),
            'leakage_overlap': leakage['overlap'],
            'timings': {name: round(seconds, 4) for name, seconds in timer.timings.items()},
        }
        log.info('seed %d: teacher %.4f student %.4f (%d synthetic)', seed, teacher_accuracy,
                 student_accuracy, len(result.examples))
        return row


def _exclude_texts_plain(sentences, texts):
    banned = {normalize(text) for text in texts}
    kept = [sentence for sentence in sentences if normalize(sentence) not in banned]
    return kept, len(sentences) - len(kept)


def _augment_budget(train_set, cfg, scale=1):
    multiplier = choose_multiplier(len(train_set), AugmentConfig(cfg.multiplier, cfg.small_task_threshold,
                                                                 cfg.allow_shortfall))
    return multiplier, multiplier * len(train_set) * scale


def _finish(report, timer):
    report.leakage = {'leakage_checked': True,
                      'overlap': sum(row['leakage_overlap'] for row in report.per_seed)}
    report.timings = dict(timer.timings)
    for row in report.per_seed:
        for name, seconds in row['timings'].items():
            report.timings[f'seed_{name}'] = report.timings.get(f'seed_{name}', 0.0) + seconds
    return report.succeed()


def _run_guarded(report, body):
    try:
        return body()
    except AugbankError as exc:
        report.fail(exc)
        exc.report = report
        raise


def run_self_training(train_set, test, resources, cfg=PipelineConfig(), ground_truth_pool=None):
    """Teacher and student share the architecture; the student learns the
    teacher's soft (or hard) labels on confidence-filtered bank sentences."""
    report = _new_report('self_training', cfg)

    def body():
        timer = Timer()
        with timer.stage('prepare'):
            prepared = _prepare_resources(resources, test, cfg, report)
            multiplier, budget = _augment_budget(train_set, cfg)
            teacher_spec = ClassifierSpec(prepared.encoder.dim, train_set.num_classes, cfg.teacher_hidden)
            student_spec = ClassifierSpec(prepared.encoder.dim, train_set.num_classes,
                                          cfg.teacher_hidden if cfg.student_hidden is None else cfg.student_hidden)
            run = _FullDataRun(train_set, test, prepared, cfg, teacher_spec, student_spec,
                               cfg.unlabeled_source, budget, ground_truth_pool)
        report.provenance.update(train_size=len(train_set), multiplier=multiplier, budget=budget,
                                 quotas=run.quotas, source=cfg.unlabeled_source,
                                 pool_size=len(run.retrieved[0]) if run.retrieved else None)
        with timer.stage('seeds'):
            report.per_seed = _map_seeds(run, cfg.seeds, cfg.workers, 'Self-training seeds')
        report.aggregate()
        return _finish(report, timer)

    return _run_guarded(report, body)


def run_distillation(train_set, test, resources, student_arch=(), unlabeled_source=RETRIEVED,
                     cfg=PipelineConfig(), ground_truth_pool=None):
    """Self-training flow with a strictly smaller student.

    Also trains the student architecture directly on the labeled data as a
    baseline.
    """
    report = _new_report('distillation', cfg)

    def body():
        dim = resources.encoder.dim
        teacher_spec = ClassifierSpec(dim, train_set.num_classes, cfg.teacher_hidden)
        student_spec = ClassifierSpec(dim, train_set.num_classes, tuple(student_arch))
        if student_spec.parameter_count() >= teacher_spec.parameter_count():
            raise CapacityError(f'Student has {student_spec.parameter_count()} parameters, '
                                f'teacher {teacher_spec.parameter_count()}; distillation needs a smaller student')

        timer = Timer()
        with timer.stage('prepare'):
            prepared = _prepare_resources(resources, test, cfg, report)
            multiplier, budget = _augment_budget(train_set, cfg, cfg.augment_scale)
            run = _FullDataRun(train_set, test, prepared, cfg, teacher_spec, student_spec, unlabeled_source,
                               budget, ground_truth_pool)
        report.provenance.update(train_size=len(train_set), multiplier=multiplier, budget=budget,
                                 augment_scale=cfg.augment_scale, quotas=run.quotas, source=unlabeled_source,
                                 teacher_parameters=teacher_spec.parameter_count(),
                                 student_parameters=student_spec.parameter_count(),
                                 pool_size=len(run.retrieved[0]) if run.retrieved else None)
        with timer.stage('seeds'):
            report.per_seed = _map_seeds(run, cfg.seeds, cfg.workers, 'Distillation seeds')
        with timer.stage('baseline'):
            for row in report.per_seed:
                baseline = train(student_spec, run.X_train, run.y_train,
                                 _train_spec(cfg, row['seed'], CROSS_ENTROPY, cfg.student_epochs)).model
                row['baseline_accuracy'] = eval_accuracy(baseline, run.test_features)
        report.aggregate()
        report.baseline = mean_std([row['baseline_accuracy'] for row in report.per_seed])
        return _finish(report, timer)

    return _run_guarded(report, body)


def sample_train_set(full_train, n_per_class, seed):
    """``n_per_class`` examples of every class, without replacement."""
    rng = np.random.default_rng(seed)
    labels = full_train.label_ids
    chosen = []
    for c, name in enumerate(full_train.labels):
        members = np.flatnonzero(labels == c)
        if len(members) < n_per_class:
            raise ConfigError(f'Label {name!r} has {len(members)} examples, {n_per_class} are needed per set')
        chosen.extend(rng.choice(members, size=n_per_class, replace=False).tolist())
    return full_train.subset(sorted(chosen))


def stratified_sample(dataset, size, seed):
    """Sample keeping the label distribution, class sizes by largest remainder."""
    if size >= len(dataset):
        return dataset
    rng = np.random.default_rng(seed)
    labels = dataset.label_ids
    chosen = []
    for c, quota in enumerate(class_quotas(dataset.counts, size)):
        members = np.flatnonzero(labels == c)
        chosen.extend(rng.choice(members, size=min(quota, len(members)), replace=False).tolist())
    return dataset.subset(sorted(chosen))


def top_models_score(rows, valid_key, test_key, top_models):
    """Mean test accuracy of the ``top_models`` rows with the best validation accuracy (ties: lower seed)."""
    ranked = sorted(rows, key=lambda row: (-row[valid_key], row['seed']))[:top_models]
    return float(np.mean([row[test_key] for row in ranked]))


class _FewShotSet:
    def __init__(self, index, subset, ids, texts, valid_features, test_features, test_texts, encoder, spec, cfg):
        self.index = index
        self.subset = subset
        self.pool_ids = ids
        self.pool_texts = texts
        self.valid_features = valid_features
        self.test_features = test_features
        self.test_texts = test_texts
        self.encoder = encoder
        self.spec = spec
        self.cfg = cfg
        self.X_train, self.y_train = featurize(subset, encoder, skip_null=True)
        self.model_spec = ClassifierSpec(encoder.dim, subset.num_classes, cfg.teacher_hidden)

    def _augment_sample(self, seed):
        wanted = self.spec.augment_factor * len(self.subset)
        if len(self.pool_ids) <= wanted:
            if len(self.pool_ids) < wanted:
                log.warning('Pool has %d sentences, fewer than the %d to sample; using all of them',
                            len(self.pool_ids), wanted)
            return self.pool_ids, self.pool_texts
        rng = np.random.default_rng([self.spec.seed, self.index, seed])
        picked = np.sort(rng.choice(len(self.pool_ids), size=wanted, replace=False))
        return [self.pool_ids[i] for i in picked], [self.pool_texts[i] for i in picked]

    def __call__(self, seed):
        spec, cfg = self.spec, self.cfg
        teacher = train(self.model_spec, self.X_train, self.y_train,
                        TrainSpec(CROSS_ENTROPY, spec.epochs, cfg.batch_size, cfg.learning_rate, seed)).model
        ids, texts = self._augment_sample(seed)
        examples, dropped = annotate(teacher, texts, self.encoder, ids)
        examples, excluded = _exclude_texts(examples, self.subset.texts)
        leakage = check_leakage([example.text for example in examples], self.test_texts)

        num_classes = self.subset.num_classes
        parts, targets = [], []
        if examples:
            parts.append(_synthetic_features(self.encoder, examples))
            if spec.label_kind == DISCRETE:
                targets.append(np.eye(num_classes)[[example.assigned_class for example in examples]])
            else:
                targets.append(np.vstack([example.probs for example in examples]))
        if spec.include_ground_truth:
            parts.append(self.X_train)
            targets.append(np.eye(num_classes)[self.y_train])
        if not parts:
            raise TrainingError('Neither synthetic nor ground-truth examples to train the student on')
        X = np.vstack(parts)
        T = np.vstack(targets)
        if spec.label_kind == DISCRETE:
            T, loss = T.argmax(axis=1), CROSS_ENTROPY
        else:
            loss = KL
        student = train(self.model_spec, X, T,
                        TrainSpec(loss, spec.epochs, cfg.batch_size, cfg.learning_rate, seed)).model
        return {
            'train_set': self.index,
            'seed': seed,
            'teacher_valid_accuracy': eval_accuracy(teacher, self.valid_features),
            'teacher_accuracy': eval_accuracy(teacher, self.test_features),
            'student_valid_accuracy': eval_accuracy(student, self.valid_features),
            'student_accuracy': eval_accuracy(student, self.test_features),
            'pool_size': len(self.pool_ids),
            'sampled': len(ids),
            'null_dropped': dropped,
            'excluded_train_overlap': excluded,
            'synthetic_size': len(examples),
            'student_train_size': len(X),
            'leakage_overlap': leakage['overlap'],
        }


def run_few_shot(full_train, full_valid, test, resources, spec=FewShotSpec(), cfg=PipelineConfig()):
    """Few-shot protocol: several small train sets, many seeds per set, each set
    scored by the test accuracy of its best models on a stratified validation set."""
    report = _new_report('few_shot', cfg)
    report.config['few_shot'] = dict(vars(spec))

    def body():
        timer = Timer()
        with timer.stage('prepare'):
            prepared = _prepare_resources(resources, test, cfg, report)
            encoder = prepared.encoder
            valid = stratified_sample(full_valid, spec.n_valid, [spec.seed, 1])
            valid_features = featurize(valid, encoder)
            test_features = featurize(test, encoder)
        report.provenance.update(valid_size=len(valid), valid_counts=valid.counts.tolist())

        set_rows = []
        for t in range(spec.n_train_sets):
            subset = sample_train_set(full_train, spec.n_per_class, [spec.seed, 2, t])
            with timer.stage('retrieve'):
                queries = build_queries(subset, cfg.query_mode, encoder)
                per_query_k = max(1, -(-spec.pool_factor * len(subset) // len(queries)))
                pool = retrieve_pool(queries, prepared.index, per_query_k)
                ids = [entry.id for entry in pool]
                texts = prepared.texts(ids)
            job = _FewShotSet(t, subset, ids, texts, valid_features, test_features, test.texts, encoder, spec, cfg)
            with timer.stage('seeds'):
                rows = _map_seeds(job, range(spec.seed, spec.seed + spec.n_seeds), cfg.workers,
                                  f'Train set {t + 1}/{spec.n_train_sets}')
            report.per_seed.extend(rows)
            set_rows.append({
                'train_set': t,
                'train_size': len(subset),
                'pool_size': len(ids),
                'baseline_score': top_models_score(rows, 'teacher_valid_accuracy', 'teacher_accuracy',
                                                   spec.top_models),
                'self_trained_score': top_models_score(rows, 'student_valid_accuracy', 'student_accuracy',
                                                       spec.top_models),
            })
        report.per_train_set = set_rows
        report.baseline = mean_std([row['baseline_score'] for row in set_rows])
        report.student = mean_std([row['self_trained_score'] for row in set_rows])
        report.leakage = {'leakage_checked': True,
                          'overlap': sum(row['leakage_overlap'] for row in report.per_seed)}
        report.timings = dict(timer.timings)
        return report.succeed()

    return _run_guarded(report, body)
