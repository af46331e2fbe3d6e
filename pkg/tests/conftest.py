"""Shared fixtures."""

from __future__ import annotations

from pathlib import Path

import pytest

from metarec.corpus import Corpus, DatasetSplit, load_corpus, split_leave_one_out
from metarec.synthetic import make_synthetic_fixture


@pytest.fixture
def write_corpus(tmp_path: Path):
    """Factory writing `user item item ...` lines to a temp file."""

    def _write(lines: list[str], name: str = "corpus.txt") -> Path:
        path = tmp_path / name
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        return path

    return _write


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory: pytest.TempPathFactory) -> Corpus:
    """A small structured corpus shared by training and evaluation tests."""
    path = tmp_path_factory.mktemp("data") / "small.txt"
    make_synthetic_fixture(path, n_users=200, n_items=40, seed=7, min_len=5, max_len=20)
    return load_corpus(path, min_interactions=2)


@pytest.fixture(scope="session")
def small_split(small_corpus: Corpus) -> DatasetSplit:
    return split_leave_one_out(small_corpus)
