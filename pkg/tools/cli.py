#!/usr/bin/env python3
"""
Command line interface for augbank

Builds and embeds sentence banks, searches them, trains teachers and
students, filters synthetic data and runs the end-to-end experiment
protocols.

Usage:
    python tools/cli.py <group> <command> [options]
"""

import sys
import os
import argparse
import json
import logging

import numpy as np

# Add parent directory to path so we can import app modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from models.augmentor import (AugmentConfig, choose_multiplier, class_quotas, filter_synthetic, read_synthetic,
                              write_synthetic)
from models.classifier import (CROSS_ENTROPY, KL, Classifier, ClassifierSpec, TrainSpec, annotate, train)
from models.embedder import (SentenceEncoder, TripletConfig, build_encoder, embed_bank, estimate_unigram, fit_sif,
                             load_pairs, load_word_vectors, mean_pair_loss, sif_weighted_average,
                             train_projection)
from models.errors import AugbankError, ConfigError, EmbeddingError, ShortfallError
from models.sentence_bank import (SegmentConfig, SentenceBank, TextLookup, bank_paths, build_bank, dedup_stats,
                                  iter_documents, read_lines, read_vectors, remove_overlap, subsample_bank,
                                  write_vectors)
from models.task_queries import LabeledDataset, build_queries, read_queries, retrieve_pool, write_queries
from models.vector_index import FlatIndex, quantize, recall_at_k, write_hits_tsv
from pipelines.evaluation import eval_accuracy, eval_sts, featurize, load_sts_pairs
from pipelines.protocols import FewShotSpec, run_distillation, run_few_shot, run_self_training
from pipelines.resources import RetrievalResources
from pipelines.run_config import PipelineConfig, load_config
from pipelines.synthetic_task import generate_synthetic_task

log = logging.getLogger('augbank')


def banner(title):
    print("=" * 70)
    print(title)
    print("=" * 70)


def step(index, total, message):
    print(f"\n[{index}/{total}] {message}")


def _hidden(value):
    if value is None or value.strip() in ('', 'none'):
        return ()
    return tuple(int(part) for part in value.replace(',', ' ').split())


def _encoder(args):
    if not args.vectors:
        raise ConfigError('--vectors is required to embed sentences')
    return build_encoder(args.backend, args.vectors, args.sif_params, args.proj_model)


# ---------------------------------------------------------------- bank

def cmd_bank_build(args):
    cfg = SegmentConfig(args.min_tokens, args.max_tokens)
    banner("Building sentence bank")
    bank = build_bank(iter_documents(args.input, cfg), cfg, out_prefix=args.out, source=str(args.input),
                      progress=not args.quiet)
    stats = bank.meta['build']
    print(f"\n  - Sentences seen: {stats['seen']}")
    print(f"  - Too short / too long: {stats['too_short']} / {stats['too_long']}")
    print(f"  - Duplicates dropped: {stats['duplicates']}")
    print(f"  - Kept: {stats['kept']} -> {args.out}")


def cmd_bank_dedup_stats(args):
    cfg = SegmentConfig(args.min_tokens, args.max_tokens)
    stats = dedup_stats(iter_documents(args.input, cfg), cfg)
    print(json.dumps(vars(stats), indent=2))


def cmd_bank_remove_overlap(args):
    bank = SentenceBank.load(args.bank, mmap=False)
    test = LabeledDataset.load_tsv(args.test)
    cleaned, id_map = remove_overlap(bank, test.texts)
    cleaned.save(args.out)
    print(f"Removed {bank.count - cleaned.count} of {bank.count} sentences; wrote {args.out}")
    if args.id_map:
        id_map.astype('<i8').tofile(args.id_map)


def cmd_bank_subsample(args):
    bank = SentenceBank.load(args.bank, mmap=False)
    subsample_bank(bank, args.size, args.seed).save(args.out)
    print(f"Wrote {min(args.size, bank.count)} of {bank.count} sentences to {args.out}")


# ---------------------------------------------------------------- embed

def cmd_embed_bank(args):
    encoder = _encoder(args)
    bank = SentenceBank.load(args.bank, mmap=False)
    banner(f"Embedding {bank.count} sentences with {encoder.backend}")
    matrix = embed_bank(bank, encoder, progress=not args.quiet)
    write_vectors(matrix, bank_paths(args.bank)['vectors'])
    bank.meta['backend'] = encoder.backend
    bank_paths(args.bank)['meta'].write_text(
        json.dumps(dict(bank.meta, count=bank.count, dim=matrix.dim), indent=2, sort_keys=True), encoding='utf-8')
    print(f"\n  - dim {matrix.dim}, null rows {int(matrix.null_mask.sum())}")


def cmd_embed_train_proj(args):
    table = load_word_vectors(args.vectors)
    pairs = load_pairs(args.pairs)
    cfg = TripletConfig(args.margin, args.batch_size, args.learning_rate, args.epochs, args.seed, args.d_out)
    banner(f"Training projection on {len(pairs)} paraphrase pairs")
    encoder = train_projection(pairs, table, cfg, progress=not args.quiet)
    encoder.save(args.out)
    print(f"\n  - epoch losses: {', '.join(f'{x:.4f}' for x in encoder.history)}")
    if args.valid_pairs:
        held_out = load_pairs(args.valid_pairs)
        untrained = train_projection(held_out, table, TripletConfig(args.margin, args.batch_size, args.learning_rate,
                                                                    0, args.seed, args.d_out))
        print(f"  - held-out loss: {mean_pair_loss(encoder, held_out, args.margin, args.batch_size):.4f} "
              f"(untrained {mean_pair_loss(untrained, held_out, args.margin, args.batch_size):.4f})")


def cmd_embed_fit_sif(args):
    table = load_word_vectors(args.vectors)
    lookup = TextLookup(args.bank)
    texts = lookup.get_many(range(len(lookup)))
    estimate_unigram(table, texts)
    rng = np.random.default_rng(args.seed)
    sample_ids = rng.permutation(len(texts))[:args.sample]
    rows = [sif_weighted_average(texts[i], table, args.a) for i in sample_ids]
    params = fit_sif([row for row in rows if row is not None], a=args.a, min_sample=args.min_sample)
    params.unigram_prob = table.unigram_prob
    params.save(args.out)
    print(f"SIF component fitted on {len(rows)} sentences (eigenvalue {params.eigenvalue:.6f}) -> {args.out}")


# ---------------------------------------------------------------- index

def cmd_index_quantize(args):
    paths = bank_paths(args.bank)
    matrix = read_vectors(paths['vectors'])
    write_vectors(quantize(matrix), paths['quantized'])
    print(f"Quantized {matrix.count} rows -> {paths['quantized']}")


def _query_matrix(args):
    if args.queries:
        return read_queries(args.queries).vectors
    if not args.text:
        raise ConfigError('Give --queries or at least one --text')
    encoder = _encoder(args)
    rows = [encoder.encode(text) for text in args.text]
    if any(row is None for row in rows):
        raise ConfigError('A query text has no in-vocabulary token')
    return np.vstack(rows)


def cmd_index_search(args):
    index = FlatIndex.from_bank(args.bank, quantized=args.quantized, shard_size=args.shard_size,
                                rescore_factor=args.rescore_factor, workers=args.workers)
    results = index.top_k_multi(_query_matrix(args), args.k)
    lookup = TextLookup(args.bank)
    if args.out:
        write_hits_tsv(results, args.out, lookup)
        print(f"Wrote {sum(len(hits) for hits in results)} hits -> {args.out}")
        return
    for q, hits in enumerate(results):
        print(f"query {q}")
        for rank, hit in enumerate(hits):
            print(f"  {rank:>4} {hit.id:>10} {hit.score:.6f}  {lookup[hit.id]}")


def cmd_index_recall(args):
    exact = FlatIndex.from_bank(args.bank, workers=args.workers)
    approx = FlatIndex.from_bank(args.bank, quantized=True, rescore_factor=args.rescore_factor, workers=args.workers)
    queries = read_queries(args.queries).vectors
    recall = recall_at_k(exact.top_k_multi(queries, args.k), approx.top_k_multi(queries, args.k))
    print(f"recall@{args.k} of int8 search (rescore factor {args.rescore_factor}): {recall:.4f}")


# ---------------------------------------------------------------- queries, teacher, student, augment

def cmd_query_build(args):
    data = LabeledDataset.load_tsv(args.train)
    queries = build_queries(data, args.mode, _encoder(args))
    write_queries(queries, args.out)
    print(f"Wrote {len(queries)} {queries.mode} queries -> {args.out}")


def _train_args(args, loss, seed=None):
    return TrainSpec(loss, args.epochs, args.batch_size, args.learning_rate, args.seed if seed is None else seed)


def cmd_teacher_train(args):
    encoder = _encoder(args)
    data = LabeledDataset.load_tsv(args.train)
    X, y = featurize(data, encoder, skip_null=True)
    spec = ClassifierSpec(encoder.dim, data.num_classes, _hidden(args.hidden))
    result = train(spec, X, y, _train_args(args, CROSS_ENTROPY), progress=not args.quiet)
    result.model.save(args.out)
    print(f"Teacher {spec.layer_dims} trained on {len(y)} examples, final loss {result.final_loss:.4f} -> {args.out}")
    print(f"Labels: {', '.join(data.labels)}")


def cmd_teacher_annotate(args):
    encoder = _encoder(args)
    model = Classifier.load(args.model)
    if args.sentences:
        texts = read_lines(args.sentences)
        ids = list(range(len(texts)))
    else:
        lookup = TextLookup(args.bank)
        if args.queries:
            index = FlatIndex.from_bank(args.bank, quantized=args.quantized, workers=args.workers)
            ids = [entry.id for entry in retrieve_pool(read_queries(args.queries), index, args.k)]
        else:
            ids = list(range(len(lookup)))
        texts = lookup.get_many(ids)
    examples, dropped = annotate(model, texts, encoder, ids)
    write_synthetic(examples, args.out)
    print(f"Annotated {len(examples)} sentences ({dropped} without embedding) -> {args.out}")


def cmd_student_train(args):
    encoder = _encoder(args)
    examples = read_synthetic(args.synthetic)
    if not examples:
        raise ConfigError(f'{args.synthetic} holds no examples')
    num_classes = len(examples[0].probs)
    vectors = [encoder.encode(example.text) for example in examples]
    embedded = [example for example, vector in zip(examples, vectors) if vector is not None]
    if not embedded:
        raise EmbeddingError(f'No sentence in {args.synthetic} has an embedding under the {encoder.backend} encoder')
    if len(embedded) < len(examples):
        log.warning('Skipped %d of %d synthetic sentences without an embedding',
                    len(examples) - len(embedded), len(examples))
    examples = embedded
    X = np.vstack([vector for vector in vectors if vector is not None])
    if args.labels == 'soft':
        targets, loss = np.vstack([example.probs for example in examples]), KL
    else:
        targets, loss = np.array([example.assigned_class for example in examples]), CROSS_ENTROPY
    spec = ClassifierSpec(encoder.dim, num_classes, _hidden(args.hidden))
    result = train(spec, X, targets, _train_args(args, loss), progress=not args.quiet)
    result.model.save(args.out)
    print(f"Student {spec.layer_dims} trained on {len(examples)} synthetic examples ({loss}) -> {args.out}")


def cmd_augment_filter(args):
    pool = read_synthetic(args.pool)
    data = LabeledDataset.load_tsv(args.train)
    multiplier = None if args.multiplier == 'auto' else int(args.multiplier)
    cfg = AugmentConfig(multiplier, args.small_task_threshold, args.allow_shortfall)
    target = choose_multiplier(len(data), cfg) * len(data)
    quotas = class_quotas(data.counts, target)
    result = filter_synthetic(pool, quotas, data.texts, cfg.allow_shortfall)
    write_synthetic(result.examples, args.out)
    if result.shortfalls:
        print(json.dumps(result.summary()), file=sys.stderr)
    print(f"Kept {len(result.examples)} of {len(pool)} candidates (quotas {quotas}) -> {args.out}")


# ---------------------------------------------------------------- pipelines

PIPELINE_OVERRIDES = ('train', 'valid', 'test', 'bank', 'out', 'backend', 'vectors', 'sif_params', 'proj_model',
                      'query_mode', 'bank_size', 'pool_factor', 'labels', 'epochs', 'student_epochs', 'workers',
                      'unlabeled_source', 'ground_truth_pool', 'augment_scale', 'rescore_factor', 'shard_size',
                      'small_task_threshold', 'batch_size', 'learning_rate', 'n_per_class', 'n_train_sets',
                      'n_valid', 'n_seeds', 'top_models', 'augment_factor')
_INT_OVERRIDES = {'bank_size', 'pool_factor', 'epochs', 'student_epochs', 'workers', 'augment_scale',
                  'rescore_factor', 'shard_size', 'small_task_threshold', 'batch_size', 'n_per_class',
                  'n_train_sets', 'n_valid', 'n_seeds', 'top_models', 'augment_factor'}


def _pipeline_config(args):
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = {key: getattr(args, key) for key in PIPELINE_OVERRIDES}
    overrides['multiplier'] = None if args.multiplier in (None, 'auto') else int(args.multiplier)
    overrides['seeds'] = [int(s) for s in args.seeds.split(',')] if args.seeds else None
    overrides['teacher_hidden'] = _hidden(args.teacher_hidden) if args.teacher_hidden is not None else None
    overrides['student_hidden'] = _hidden(args.student_hidden) if args.student_hidden is not None else None
    overrides['registry'] = True if args.registry else None
    overrides['quantized'] = True if args.quantized else None
    overrides['allow_shortfall'] = True if args.allow_shortfall else None
    overrides['include_ground_truth'] = False if args.no_ground_truth else None
    cfg = cfg.override(**overrides)
    for key in ('train', 'test', 'bank', 'vectors'):
        if not getattr(cfg, key):
            raise ConfigError(f'Pipeline configuration needs "{key}"')
    return cfg


def _run_protocol(protocol, cfg):
    encoder = build_encoder(cfg.backend, cfg.vectors, cfg.sif_params, cfg.proj_model)
    train_set = LabeledDataset.load_tsv(cfg.train)
    test = LabeledDataset.load_tsv(cfg.test, labels=train_set.labels)
    resources = RetrievalResources.from_prefix(cfg.bank, encoder, cfg)
    pool = read_lines(cfg.ground_truth_pool) if cfg.ground_truth_pool else None
    if protocol == 'self-train':
        return run_self_training(train_set, test, resources, cfg, ground_truth_pool=pool)
    if protocol == 'distill':
        return run_distillation(train_set, test, resources, cfg.student_hidden or (), cfg.unlabeled_source, cfg,
                                ground_truth_pool=pool)
    if not cfg.valid:
        raise ConfigError('The few-shot protocol needs a "valid" set')
    valid = LabeledDataset.load_tsv(cfg.valid, labels=train_set.labels)
    return run_few_shot(train_set, valid, test, resources, FewShotSpec.from_config(cfg), cfg)


def _record(cfg, protocol, report, error=None):
    from config import augbank_app, db
    from models.experiment_model import ExperimentRun
    with augbank_app.app.app_context():
        db.create_all()
        run = ExperimentRun.record_run(protocol, cfg.snapshot)
        run.finish(report.json() if report is not None else None, error)
        return run.id


def cmd_pipeline(args):
    protocol = args.command
    cfg = _pipeline_config(args)
    banner(f"augbank pipeline: {protocol}")
    print(f"\n  - bank: {cfg.bank}\n  - backend: {cfg.backend}\n  - seeds: {cfg.seeds}")
    try:
        report = _run_protocol(protocol, cfg)
    except AugbankError as exc:
        report = getattr(exc, 'report', None)
        if report is not None and cfg.out:
            report.save(cfg.out)
        if cfg.registry:
            _record(cfg, protocol, report, exc.detail)
        raise
    print("\n" + report.summary_table())
    if cfg.out:
        report.save(cfg.out)
        print(f"\nReport written to {cfg.out}")
    if cfg.registry:
        print(f"Recorded as experiment run {_record(cfg, protocol, report)}")


def cmd_synth_task(args):
    banner(f"Generating synthetic task (seed {args.seed})")
    task = generate_synthetic_task(args.seed, args.vocab_size, args.classes, args.n_train, args.n_test,
                                   args.bank_size, args.distractor_ratio, n_valid=args.n_valid, dim=args.dim,
                                   overlap=args.overlap, class_share=args.class_share)
    task.save(args.out)
    step(1, 2, f"Wrote train/valid/test/bank/vectors to {args.out}")
    bank = build_bank(task.bank_text, SegmentConfig(), progress=not args.quiet)
    bank.attach_vectors(embed_bank(bank, SentenceEncoder('avg', task.table), progress=not args.quiet))
    bank.meta['backend'] = 'avg'
    prefix = os.path.join(args.out, 'bank')
    bank.save(prefix)
    step(2, 2, f"Built and embedded bank of {bank.count} sentences -> {prefix}")


# ---------------------------------------------------------------- eval

def cmd_eval_sts(args):
    result = eval_sts(_encoder(args), load_sts_pairs(args.pairs))
    print(json.dumps(result._asdict(), indent=2))


def cmd_eval_accuracy(args):
    encoder = _encoder(args)
    model = Classifier.load(args.model)
    test = LabeledDataset.load_tsv(args.test, labels=args.labels.split(',') if args.labels else None)
    print(f"accuracy: {eval_accuracy(model, test, encoder):.4f} on {len(test)} examples")


# ---------------------------------------------------------------- parser

def _encoder_options(parser):
    group = parser.add_argument_group('encoder')
    group.add_argument('--backend', default=os.getenv('AUGBANK_BACKEND', 'avg'), help='avg, sif or proj')
    group.add_argument('--vectors', default=os.getenv('AUGBANK_VECTORS'), help='Word vector text file')
    group.add_argument('--sif-params', default=os.getenv('AUGBANK_SIF'), help='Fitted SIF parameters (.npz)')
    group.add_argument('--proj-model', default=os.getenv('AUGBANK_PROJ'), help='Trained projection (.npz)')


def _training_options(parser, epochs=50):
    parser.add_argument('--hidden', default='256', help='Hidden layer sizes, comma separated ("" for linear)')
    parser.add_argument('--epochs', type=int, default=epochs)
    parser.add_argument('--batch-size', type=int, default=32)
    parser.add_argument('--learning-rate', type=float, default=0.1)
    parser.add_argument('--seed', type=int, default=0)


def _segment_options(parser):
    parser.add_argument('--min-tokens', type=int, default=3)
    parser.add_argument('--max-tokens', type=int, default=100)


def build_parser():
    parser = argparse.ArgumentParser(
        prog='augbank',
        description="Retrieval-based data augmentation over a sentence bank",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python tools/cli.py bank build --input corpus/ --out data/bank
  python tools/cli.py embed bank --bank data/bank --vectors vectors.txt
  python tools/cli.py index search --bank data/bank --vectors vectors.txt --text "great movie" --k 5
  python tools/cli.py pipeline synth-task --seed 0 --out demo/
  python tools/cli.py pipeline self-train --config demo/self_train.conf
        """
    )
    parser.add_argument('--log-level', default=os.getenv('AUGBANK_LOG_LEVEL', 'WARNING'))
    parser.add_argument('--quiet', action='store_true', help='Disable progress bars')
    groups = parser.add_subparsers(dest='group', required=True)

    bank = groups.add_parser('bank', help='Build and maintain sentence banks').add_subparsers(dest='command',
                                                                                             required=True)
    p = bank.add_parser('build', help='Segment, filter and deduplicate a corpus')
    p.add_argument('--input', required=True, help='Text file or directory of .txt files')
    p.add_argument('--out', required=True, help='Bank prefix')
    _segment_options(p)
    p.set_defaults(func=cmd_bank_build)
    p = bank.add_parser('dedup-stats', help='Report dedup counts without writing a bank')
    p.add_argument('--input', required=True)
    _segment_options(p)
    p.set_defaults(func=cmd_bank_dedup_stats)
    p = bank.add_parser('remove-overlap', help='Drop sentences that appear in a test set')
    p.add_argument('--bank', required=True)
    p.add_argument('--test', required=True, help='label<TAB>text file')
    p.add_argument('--out', required=True)
    p.add_argument('--id-map', help='Write the old->new id map (int64, -1 for removed)')
    p.set_defaults(func=cmd_bank_remove_overlap)
    p = bank.add_parser('subsample', help='Random subset of a bank')
    p.add_argument('--bank', required=True)
    p.add_argument('--size', type=int, required=True)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_bank_subsample)

    embed = groups.add_parser('embed', help='Sentence embeddings').add_subparsers(dest='command', required=True)
    p = embed.add_parser('bank', help='Embed every bank sentence')
    p.add_argument('--bank', required=True)
    _encoder_options(p)
    p.set_defaults(func=cmd_embed_bank)
    p = embed.add_parser('train-proj', help='Train the projection encoder on paraphrase pairs')
    p.add_argument('--pairs', required=True)
    p.add_argument('--vectors', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--valid-pairs')
    p.add_argument('--margin', type=float, default=0.4)
    p.add_argument('--batch-size', type=int, default=64)
    p.add_argument('--learning-rate', type=float, default=0.5)
    p.add_argument('--epochs', type=int, default=10)
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--d-out', type=int)
    p.set_defaults(func=cmd_embed_train_proj)
    p = embed.add_parser('fit-sif', help='Estimate p(w) and the common component on a bank sample')
    p.add_argument('--bank', required=True)
    p.add_argument('--vectors', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--a', type=float, default=1e-3)
    p.add_argument('--sample', type=int, default=100000)
    p.add_argument('--min-sample', type=int, default=1000)
    p.add_argument('--seed', type=int, default=0)
    p.set_defaults(func=cmd_embed_fit_sif)

    index = groups.add_parser('index', help='Nearest-neighbour search').add_subparsers(dest='command', required=True)
    p = index.add_parser('search', help='Top-k search with a query file or query texts')
    p.add_argument('--bank', required=True)
    p.add_argument('--queries', help='Query vector file written by "query build"')
    p.add_argument('--text', action='append', default=[], help='Query sentence (repeatable)')
    p.add_argument('--k', type=int, default=10)
    p.add_argument('--quantized', action='store_true')
    p.add_argument('--rescore-factor', type=int, default=10)
    p.add_argument('--shard-size', type=int, default=1 << 16)
    p.add_argument('--workers', type=int, default=1)
    p.add_argument('--out', help='Write hits as TSV')
    _encoder_options(p)
    p.set_defaults(func=cmd_index_search)
    p = index.add_parser('quantize', help='Write the int8 copy of the bank vectors')
    p.add_argument('--bank', required=True)
    p.set_defaults(func=cmd_index_quantize)
    p = index.add_parser('recall', help='recall@k of int8 search against exact search')
    p.add_argument('--bank', required=True)
    p.add_argument('--queries', required=True)
    p.add_argument('--k', type=int, default=100)
    p.add_argument('--rescore-factor', type=int, default=10)
    p.add_argument('--workers', type=int, default=1)
    p.set_defaults(func=cmd_index_recall)

    query = groups.add_parser('query', help='Task embeddings').add_subparsers(dest='command', required=True)
    p = query.add_parser('build', help='Build query vectors from a training set')
    p.add_argument('--train', required=True)
    p.add_argument('--mode', default='label', help='all, label or sent')
    p.add_argument('--out', required=True)
    _encoder_options(p)
    p.set_defaults(func=cmd_query_build)

    teacher = groups.add_parser('teacher', help='Teacher models').add_subparsers(dest='command', required=True)
    p = teacher.add_parser('train', help='Train a teacher with cross-entropy')
    p.add_argument('--train', required=True)
    p.add_argument('--out', required=True)
    _training_options(p)
    _encoder_options(p)
    p.set_defaults(func=cmd_teacher_train)
    p = teacher.add_parser('annotate', help='Write teacher distributions as JSON Lines')
    p.add_argument('--model', required=True)
    p.add_argument('--out', required=True)
    p.add_argument('--sentences', help='One sentence per line')
    p.add_argument('--bank', help='Annotate bank sentences (all, or those retrieved with --queries)')
    p.add_argument('--queries')
    p.add_argument('--k', type=int, default=1000, help='Hits per query')
    p.add_argument('--quantized', action='store_true')
    p.add_argument('--workers', type=int, default=1)
    _encoder_options(p)
    p.set_defaults(func=cmd_teacher_annotate)

    student = groups.add_parser('student', help='Student models').add_subparsers(dest='command', required=True)
    p = student.add_parser('train', help='Train a student on synthetic data')
    p.add_argument('--synthetic', required=True)
    p.add_argument('--labels', choices=('soft', 'hard'), default='soft')
    p.add_argument('--out', required=True)
    _training_options(p)
    _encoder_options(p)
    p.set_defaults(func=cmd_student_train)

    augment = groups.add_parser('augment', help='Synthetic data').add_subparsers(dest='command', required=True)
    p = augment.add_parser('filter', help='Confidence filtering with label-ratio quotas')
    p.add_argument('--pool', required=True)
    p.add_argument('--train', required=True)
    p.add_argument('--multiplier', default='auto')
    p.add_argument('--small-task-threshold', type=int, default=5000)
    p.add_argument('--allow-shortfall', action='store_true')
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_augment_filter)

    pipeline = groups.add_parser('pipeline', help='End-to-end protocols').add_subparsers(dest='command',
                                                                                         required=True)
    for name, help_text in (('self-train', 'Self-training'), ('distill', 'Knowledge distillation'),
                            ('few-shot', 'Few-shot protocol')):
        p = pipeline.add_parser(name, help=help_text)
        p.add_argument('--config', help='key = value configuration file')
        for key in PIPELINE_OVERRIDES:
            kind = int if key in _INT_OVERRIDES else float if key == 'learning_rate' else str
            p.add_argument('--' + key.replace('_', '-'), dest=key, type=kind)
        p.add_argument('--multiplier')
        p.add_argument('--seeds', help='Comma separated seeds')
        p.add_argument('--teacher-hidden')
        p.add_argument('--student-hidden')
        p.add_argument('--registry', action='store_true', help='Record the run in the experiment registry')
        p.add_argument('--quantized', action='store_true')
        p.add_argument('--allow-shortfall', action='store_true')
        p.add_argument('--no-ground-truth', action='store_true',
                       help='Few-shot: train the student on synthetic examples only')
        p.set_defaults(func=cmd_pipeline)
    p = pipeline.add_parser('synth-task', help='Generate a synthetic task with an embedded bank')
    p.add_argument('--seed', type=int, default=0)
    p.add_argument('--vocab-size', type=int, default=200)
    p.add_argument('--classes', type=int, default=2)
    p.add_argument('--n-train', type=int, default=40)
    p.add_argument('--n-valid', type=int, default=None)
    p.add_argument('--n-test', type=int, default=1000)
    p.add_argument('--bank-size', type=int, default=10000)
    p.add_argument('--distractor-ratio', type=float, default=0.8)
    p.add_argument('--dim', type=int, default=50)
    p.add_argument('--overlap', type=float, default=0.15)
    p.add_argument('--class-share', type=float, default=0.3)
    p.add_argument('--out', required=True)
    p.set_defaults(func=cmd_synth_task)

    evaluate = groups.add_parser('eval', help='Evaluation').add_subparsers(dest='command', required=True)
    p = evaluate.add_parser('sts', help='Pearson and Spearman on scored sentence pairs')
    p.add_argument('--pairs', required=True)
    _encoder_options(p)
    p.set_defaults(func=cmd_eval_sts)
    p = evaluate.add_parser('accuracy', help='Test accuracy of a saved model')
    p.add_argument('--model', required=True)
    p.add_argument('--test', required=True)
    p.add_argument('--labels', help='Label order used in training, comma separated')
    _encoder_options(p)
    p.set_defaults(func=cmd_eval_accuracy)
    return parser


def main(argv=None):
    """Main entry point"""
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=args.log_level.upper(), format='%(asctime)s %(levelname)s %(name)s: %(message)s')
    try:
        args.func(args)
    except ShortfallError as e:
        print(json.dumps({'status': 'fail', 'shortfalls': {str(c): n for c, n in e.deficits.items()}}),
              file=sys.stderr)
        print(f"[ERROR] {e.detail}", file=sys.stderr)
        return 1
    except AugbankError as e:
        print(f"[ERROR] {e.detail}", file=sys.stderr)
        return 1
    except Exception as e:
        print(f"\n[ERROR] {args.group} {args.command} failed: {e}", file=sys.stderr)
        import traceback
        traceback.print_exc()
        return 1
    return 0


if __name__ == '__main__':
    sys.exit(main())
