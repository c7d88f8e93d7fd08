#!/usr/bin/env python3
"""
Bootstrap utility for augbank

Creates a demo workspace for the API and the command line tools: a
synthetic classification task, an embedded sentence bank with its int8
copy, and a fresh experiment registry holding one self-training run.

Usage:
    python tools/bootstrap.py [--out DIR] [--bank-size N] [--seeds 0,1,2]
"""

import sys
import os
import argparse

# Add parent directory to path so we can import app modules
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from config import augbank_app, db
from models.embedder import SentenceEncoder, embed_bank
from models.experiment_model import ExperimentRun
from models.sentence_bank import bank_paths, build_bank, write_vectors
from models.vector_index import quantize
from pipelines.protocols import run_self_training
from pipelines.resources import RetrievalResources
from pipelines.run_config import PipelineConfig
from pipelines.synthetic_task import generate_synthetic_task


def bootstrap_workspace(out, seed=0, bank_size=10000, n_train=40, seeds=(0, 1, 2), run_demo=True):
    """
    Write the demo task and bank, reset the registry and optionally record a run

    Args:
        out: Workspace directory
        seed: Seed of the synthetic task
        bank_size: Sentences in the generated bank (before deduplication)
        n_train: Labeled training examples
        seeds: Seeds of the demo self-training run
        run_demo: Record a self-training run in the registry
    """
    total = 4 if run_demo else 3
    print("=" * 70)
    print("augbank Workspace Bootstrap")
    print("=" * 70)
    print(f"\nConfiguration:")
    print(f"  - Workspace: {out}")
    print(f"  - Task seed: {seed}")
    print(f"  - Bank size: {bank_size}")
    print(f"  - Training examples: {n_train}")
    print("\n" + "-" * 70)

    print(f"\n[1/{total}] Generating synthetic task...")
    task = generate_synthetic_task(seed, n_train=n_train, bank_size=bank_size)
    task.save(out)
    print(f"      train/valid/test, corpus and word vectors written to {out}")

    print(f"\n[2/{total}] Building and embedding the sentence bank...")
    encoder = SentenceEncoder('avg', task.table)
    bank = build_bank(task.bank_text)
    bank.attach_vectors(embed_bank(bank, encoder))
    bank.meta['backend'] = encoder.backend
    prefix = os.path.join(out, 'bank')
    bank.save(prefix)
    write_vectors(quantize(bank.vectors), bank_paths(prefix)['quantized'])
    stats = bank.meta['build']
    print(f"      {stats['kept']} sentences kept, {stats['duplicates']} duplicates dropped")

    with augbank_app.app.app_context():
        print(f"\n[3/{total}] Resetting experiment registry...")
        db.drop_all()
        db.create_all()
        print("      Registry tables created successfully")

        if run_demo:
            print(f"\n[4/{total}] Running a self-training demo...")
            cfg = PipelineConfig(teacher_hidden=(64,), epochs=30, seeds=list(seeds), allow_shortfall=True)
            run = ExperimentRun.record_run('self-train', 'teacher_hidden = 64\nepochs = 30\nallow_shortfall = true\n')
            report = run_self_training(task.train, task.test, RetrievalResources(bank, encoder), cfg)
            run.finish(report.json())
            print(f"      Recorded as experiment run {run.id}")
            print("\n" + report.summary_table())

    print("\n" + "=" * 70)
    print("Bootstrap Complete!")
    print("=" * 70)
    print(f"\nServe the bank with:")
    print(f"  AUGBANK_BANK={prefix} AUGBANK_VECTORS={os.path.join(out, 'vectors.txt')} python app.py")
    print("=" * 70 + "\n")


def main():
    """Main entry point"""
    parser = argparse.ArgumentParser(
        description="Bootstrap an augbank demo workspace",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  python tools/bootstrap.py                          # demo/ with a 10000 sentence bank
  python tools/bootstrap.py --out /tmp/ws --bank-size 50000
  python tools/bootstrap.py --no-run                 # task and bank only
        """
    )

    parser.add_argument('--out', default='demo', help='Workspace directory (default: demo)')
    parser.add_argument('--seed', type=int, default=0, help='Synthetic task seed (default: 0)')
    parser.add_argument('--bank-size', type=int, default=10000, help='Bank sentences (default: 10000)')
    parser.add_argument('--n-train', type=int, default=40, help='Training examples (default: 40)')
    parser.add_argument('--seeds', default='0,1,2', help='Seeds of the demo run (default: 0,1,2)')
    parser.add_argument('--no-run', action='store_true', help='Skip the self-training demo')

    args = parser.parse_args()

    if args.bank_size < 1 or args.n_train < 2:
        print("Error: --bank-size must be at least 1 and --n-train at least 2")
        sys.exit(1)

    if args.bank_size > 1000000:
        print("Warning: Embedding more than 1000000 sentences may take a while...")

    try:
        seeds = [int(s) for s in args.seeds.split(',')]
        bootstrap_workspace(args.out, args.seed, args.bank_size, args.n_train, seeds, not args.no_run)
    except Exception as e:
        print(f"\n[ERROR] Bootstrap failed: {e}")
        import traceback
        traceback.print_exc()
        sys.exit(1)


if __name__ == '__main__':
    main()
