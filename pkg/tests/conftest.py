from __future__ import annotations

import os
import socket
import time

import pytest

from signrag.catalog import load_catalog
from signrag.config import build_backends, load_config
from signrag.evaluation import load_dataset
from signrag.fixtures import build_corpus
from signrag.indexing import index_catalog


class NetworkBlocked(RuntimeError):
    pass


def _refuse(*args, **kwargs):
    raise NetworkBlocked("network access attempted during a mock-mode test")


@pytest.fixture(scope="session", autouse=True)
def no_network():
    """Mock mode must never open a socket; live tests opt out via the env."""
    if os.environ.get("SIGNRAG_API_KEY"):
        yield
        return
    mp = pytest.MonkeyPatch()
    mp.setattr(socket.socket, "connect", _refuse)
    mp.setattr(socket.socket, "connect_ex", _refuse)
    mp.setattr(socket, "create_connection", _refuse)
    yield
    mp.undo()


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    return build_corpus(tmp_path_factory.mktemp("fixtures"))


@pytest.fixture(scope="session")
def config(corpus):
    return load_config(corpus.config, env={})


@pytest.fixture(scope="session")
def catalog(corpus, config):
    return load_catalog(corpus.catalog, dimension=config.dimension)


@pytest.fixture(scope="session")
def backends(config, catalog):
    return build_backends(config, catalog=catalog, env={})


@pytest.fixture(scope="session")
def indexed(catalog, backends):
    return index_catalog(catalog, backends.descriptor, backends.embedder)


@pytest.fixture(scope="session")
def store(indexed):
    return indexed.store


@pytest.fixture(scope="session")
def real_world(corpus):
    return load_dataset(corpus.real_world)


@pytest.fixture(scope="session")
def ideal(corpus):
    return load_dataset(corpus.ideal)


class DelayedStore:
    """Store proxy that sleeps before every query, for latency injection."""

    def __init__(self, inner, delay):
        self._inner = inner
        self.delay = delay

    def __len__(self):
        return len(self._inner)

    def __contains__(self, code):
        return code in self._inner

    def __getattr__(self, name):
        return getattr(self._inner, name)

    def query(self, vector, k=5):
        time.sleep(self.delay)
        return self._inner.query(vector, k)


@pytest.fixture
def delayed_store():
    return DelayedStore


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture
def verdict():
    """Record, print and enforce one acceptance line."""
    def record(number, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line
    return record
