"""Pytest configuration and fixtures for DenseExplain-CLI tests."""

import pytest
from pathlib import Path
import sys

# Add src to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from src.corpus import Document, Qrels, Query, write_corpus, write_qrels, write_queries
from src.encoder import ReferenceEncoder, build_vocabulary
from src.index import build_index


def pytest_addoption(parser):
    parser.addoption("--run-extended", action="store_true", default=False,
                     help="Run acceptance tests against downloaded BEIR datasets")


def pytest_configure(config):
    config.addinivalue_line("markers", "extended: needs --run-extended and BEIR dataset directories")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--run-extended"):
        return
    skip = pytest.mark.skip(reason="needs --run-extended")
    for item in items:
        if "extended" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def temp_dexplain_dir(tmp_path):
    """Create temporary DenseExplain home directory."""
    home = tmp_path / ".dexplain"
    home.mkdir(parents=True, exist_ok=True)
    return home


@pytest.fixture(autouse=True)
def mock_app_paths(temp_dexplain_dir, monkeypatch):
    """Point the home directory and log file at the temporary directory."""
    def mock_get_log_path():
        return temp_dexplain_dir / "logs.log"

    def mock_ensure_app_dir():
        temp_dexplain_dir.mkdir(parents=True, exist_ok=True)
        return temp_dexplain_dir

    monkeypatch.setenv("DEXPLAIN_HOME", str(temp_dexplain_dir))
    monkeypatch.setattr("src.utils.get_log_path", mock_get_log_path)
    monkeypatch.setattr("src.utils.ensure_app_dir", mock_ensure_app_dir)
    return temp_dexplain_dir


@pytest.fixture
def documents():
    """Six documents over two topics; d3 has no title."""
    return [
        Document("d1", "Coronavirus origins", "The virus emerged in bats and spread to humans."),
        Document("d2", "Vaccine trials", "Clinical trials measured vaccine efficacy in adults."),
        Document("d3", "", "Masks reduce transmission of respiratory droplets."),
        Document("d4", "Stock markets", "Interest rates moved bond prices and stock returns."),
        Document("d5", "Mortgage advice", "Compare fixed and variable mortgage rates before buying."),
        Document("d6", "Hospital capacity", "Intensive care units filled during the virus wave."),
    ]


@pytest.fixture
def corpus_map(documents):
    return {doc.doc_id: doc for doc in documents}


@pytest.fixture
def queries():
    return [
        Query("q1", "where did the coronavirus virus come from"),
        Query("q2", "how effective are vaccine trials"),
        Query("q3", "what moves stock returns"),
    ]


@pytest.fixture
def qrels():
    return Qrels(judgments={
        ("q1", "d1"): 2,
        ("q1", "d6"): 1,
        ("q2", "d2"): 1,
        ("q3", "d4"): 1,
        ("q3", "d5"): 0,
    })


@pytest.fixture
def vocabulary(documents):
    return build_vocabulary(doc.full_text() for doc in documents)


@pytest.fixture
def encoder(vocabulary):
    """Small seeded ReferenceEncoder."""
    return ReferenceEncoder.create(vocabulary, embedding_dim=8, max_seq_len=64, seed=7)


@pytest.fixture
def other_encoder(vocabulary):
    """Same vocabulary and shape as encoder, different seed."""
    return ReferenceEncoder.create(vocabulary, embedding_dim=8, max_seq_len=64, seed=8)


@pytest.fixture
def small_index(documents, encoder):
    return build_index(documents, encoder, batch_size=4)


@pytest.fixture
def beir_dir(tmp_path, documents, queries, qrels):
    """corpus.jsonl, queries.jsonl and qrels.tsv in a temporary directory."""
    data = tmp_path / "data"
    data.mkdir()
    write_corpus(documents, data / "corpus.jsonl")
    write_queries(queries, data / "queries.jsonl")
    write_qrels(qrels, data / "qrels.tsv")
    return data


@pytest.fixture
def run_config_file(tmp_path, beir_dir):
    """Flat config pointing at beir_dir with a small encoder."""
    path = tmp_path / "run.conf"
    path.write_text(
        "# test run\n"
        f"data.corpus = {beir_dir / 'corpus.jsonl'}\n"
        f"data.queries = {beir_dir / 'queries.jsonl'}\n"
        f"data.qrels = {beir_dir / 'qrels.tsv'}\n"
        "backend.embedding_dim = 8\n"
        "backend.max_seq_len = 64\n"
        "ig.steps = 32\n"
        f"output.dir = {tmp_path / 'out'}\n",
        encoding="utf-8",
    )
    return path
