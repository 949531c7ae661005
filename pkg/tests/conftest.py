import io
import os
from contextlib import redirect_stderr, redirect_stdout

import pytest

from caprank.cli import main
from caprank.corpus import join_corpus, read_beams, read_references, read_visual
from caprank.embeddings import load_vectors

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")


def path_of(name: str) -> str:
    return os.path.join(DATA_DIR, name)


@pytest.fixture(scope="session")
def data_dir() -> str:
    return DATA_DIR


@pytest.fixture(scope="session")
def beams_path() -> str:
    return path_of("fixture_beams.jsonl")


@pytest.fixture(scope="session")
def visual_path() -> str:
    return path_of("fixture_visual.jsonl")


@pytest.fixture(scope="session")
def refs_path() -> str:
    return path_of("fixture_refs.jsonl")


@pytest.fixture(scope="session")
def embeddings_path() -> str:
    return path_of("fixture_embeddings.txt")


@pytest.fixture(scope="session")
def golden_path() -> str:
    return path_of("golden_reranked.jsonl")


@pytest.fixture(scope="session")
def adapter_cmd() -> str:
    # invoked through sh so the checkout's permission bits don't matter
    return f"sh {path_of('fake_adapter.sh')}"


@pytest.fixture(scope="session")
def table(embeddings_path):
    return load_vectors(embeddings_path)


@pytest.fixture(scope="session")
def corpus_pairs(beams_path, visual_path):
    return join_corpus(read_beams(beams_path), read_visual(visual_path))


@pytest.fixture(scope="session")
def reference_sets(refs_path):
    return read_references(refs_path)


@pytest.fixture
def invoke():
    """Run the CLI in-process; returns (exit_code, stdout, stderr)."""

    def run(argv):
        out, err = io.StringIO(), io.StringIO()
        with redirect_stdout(out), redirect_stderr(err):
            try:
                code = main(list(argv))
            except SystemExit as exc:  # argparse usage failures
                code = exc.code if isinstance(exc.code, int) else 2
        return code, out.getvalue(), err.getvalue()

    return run
