from __future__ import annotations

import pytest

from mooctk import ingest as ingest_mod
from mooctk import synthgen

SECRET_KEY = "0123456789abcdef0123456789abcdef"


@pytest.fixture(scope="session")
def secret_key():
    return SECRET_KEY


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    spec = synthgen.GenSpec(seed=7, users=30, weeks=2)
    return synthgen.generate(spec, tmp_path_factory.mktemp("corpus-small"))


def ingest_corpus(corpus, out_path, cap: float | None = None):
    config = ingest_mod.IngestConfig(
        adapter=corpus.adapter,
        roster_path=str(corpus.roster_path),
        secret_key=SECRET_KEY,
    )
    if cap is not None:
        config.duration_cap_seconds = cap
    structure = ingest_mod.CourseStructure.load(corpus.structure_path)
    return ingest_mod.ingest(
        [(corpus.adapter, corpus.raw_log)], structure, config, out_path=out_path
    )


@pytest.fixture(scope="session")
def small_ingested(small_corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("store-small") / "store.db"
    store, report = ingest_corpus(small_corpus, out)
    return store, report, out


@pytest.fixture(scope="session")
def small_store(small_ingested):
    return small_ingested[0]
