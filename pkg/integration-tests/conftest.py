"""
Shared pytest fixtures for augbank integration tests.

These fixtures provide a seeded synthetic task, an embedded bank on disk,
a word-average encoder, small pipeline configurations and a Flask test
client bound to a throwaway experiment registry.
"""

import os
import sys
import tempfile
from pathlib import Path

import numpy as np
import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(REPO_ROOT))

# the registry database must be chosen before config is imported
os.environ.setdefault(
    "AUGBANK_DB",
    "sqlite:///" + os.path.join(tempfile.mkdtemp(prefix="augbank-tests-"), "registry.db"),
)
os.environ.pop("AUGBANK_BANK", None)

from config import augbank_app, db  # noqa: E402
from models.embedder import SentenceEncoder, WordVectorTable, embed_bank  # noqa: E402
from models.sentence_bank import bank_paths, build_bank, write_vectors  # noqa: E402
from models.vector_index import quantize  # noqa: E402
from pipelines.resources import RetrievalResources  # noqa: E402
from pipelines.run_config import PipelineConfig  # noqa: E402
from pipelines.synthetic_task import SyntheticTask, generate_synthetic_task  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    """
    Seeded random generator, fresh for every test.

    Returns:
        np.random.Generator: Generator seeded with 1234
    """
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_table() -> WordVectorTable:
    """
    Two-word vocabulary with orthogonal vectors.

    Returns:
        WordVectorTable: good -> (1, 0), movie -> (0, 1)
    """
    return WordVectorTable.from_dict({"good": (1.0, 0.0), "movie": (0.0, 1.0)})


@pytest.fixture(scope="session")
def synthetic_task() -> SyntheticTask:
    """
    Small two-class task with a 3000 sentence bank (80% distractors).

    Returns:
        SyntheticTask: Deterministic task generated from seed 7
    """
    return generate_synthetic_task(seed=7, n_train=40, n_test=300, n_valid=200, bank_size=3000)


@pytest.fixture(scope="session")
def encoder(synthetic_task: SyntheticTask) -> SentenceEncoder:
    """
    Word-average encoder over the synthetic task's word vectors.

    Returns:
        SentenceEncoder: avg backend
    """
    return SentenceEncoder("avg", synthetic_task.table)


@pytest.fixture(scope="session")
def bank_prefix(tmp_path_factory, synthetic_task: SyntheticTask, encoder: SentenceEncoder) -> str:
    """
    Embedded bank of the synthetic task saved on disk, with its int8 copy.

    Returns:
        str: Bank prefix (text, offsets, meta, .vec and .q8.vec files exist)
    """
    prefix = str(tmp_path_factory.mktemp("bank") / "bank")
    bank = build_bank(synthetic_task.bank_text)
    bank.attach_vectors(embed_bank(bank, encoder))
    bank.meta["backend"] = encoder.backend
    bank.save(prefix)
    write_vectors(quantize(bank.vectors), bank_paths(prefix)["quantized"])
    return prefix


@pytest.fixture
def resources(synthetic_task: SyntheticTask, encoder: SentenceEncoder) -> RetrievalResources:
    """
    In-memory retrieval resources over the synthetic bank.

    Returns:
        RetrievalResources: Bank embedded with the avg encoder
    """
    return RetrievalResources.from_texts(synthetic_task.bank_text, encoder)


@pytest.fixture
def small_config() -> PipelineConfig:
    """
    Pipeline configuration sized for tests: tiny models, few epochs, two seeds.

    Returns:
        PipelineConfig: 5x augmentation, hidden layer of 16, 20 epochs
    """
    return PipelineConfig(multiplier=5, teacher_hidden=(16,), epochs=20, seeds=[0, 1],
                          allow_shortfall=True)


@pytest.fixture
def app_context():
    """
    Application context with a freshly created experiment registry.

    Yields:
        The Flask application context
    """
    with augbank_app.app.app_context() as ctx:
        db.drop_all()
        db.create_all()
        yield ctx
        db.session.remove()


@pytest.fixture
def client(bank_prefix: str, encoder: SentenceEncoder, app_context):
    """
    Flask test client with the bank endpoints pointed at the test bank.

    Yields:
        FlaskClient: Client for the connexion application
    """
    from api_views import bank as bank_views

    bank_views.configure(bank_prefix, encoder)
    yield augbank_app.app.test_client()
    bank_views.configure(None)
