import pytest

from gramtraj.corpus import build_corpus, build_vocab, read_documents
from gramtraj.harness import load_suite
from gramtraj.synthdata import generate_corpus, generate_suite


@pytest.fixture(scope="session")
def synth_suite_path(tmp_path_factory):
    p = tmp_path_factory.mktemp("suite") / "suite.jsonl"
    generate_suite(p, pairs_per_challenge=200, seed=99)
    return p


@pytest.fixture(scope="session")
def synth_suite(synth_suite_path):
    return load_suite(synth_suite_path, format="synthetic")


@pytest.fixture(scope="session")
def small_corpus_setup(tmp_path_factory):
    """(vocab, corpus) over a small synthetic corpus; fast to build."""
    d = tmp_path_factory.mktemp("corpus")
    cp = generate_corpus(d / "corpus.txt", n_tokens=30_000, seed=77)
    docs = list(read_documents([cp]))
    vocab = build_vocab(docs[: len(docs) - max(1, len(docs) // 100)], max_size=3000)
    corpus = build_corpus([cp], vocab)
    return vocab, corpus
