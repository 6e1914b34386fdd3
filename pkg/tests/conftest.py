"""Shared fixtures: stores, clocks, deterministic ids and a wired server."""

from __future__ import annotations

import itertools
import json
import os

import pytest

from colonybroker.clock import VirtualClock
from colonybroker.config import ServerConfig
from colonybroker.crypto import generate_keypair
from colonybroker.server import ColonyServer
from colonybroker.store import Store

CONFORMANCE_DIR = os.path.join(os.path.dirname(__file__), "conformance")


def load_vectors(name: str) -> list:
    with open(os.path.join(CONFORMANCE_DIR, name), "r", encoding="utf-8") as fh:
        return json.load(fh)


def make_id_source(salt: str = ""):
    counter = itertools.count()
    return lambda: f"{salt}#{next(counter)}".encode()


@pytest.fixture
def store(tmp_path):
    s = Store(str(tmp_path / "broker.db"))
    yield s
    s.close()


@pytest.fixture
def vclock():
    return VirtualClock()


@pytest.fixture
def ids():
    return make_id_source()


class Harness:
    """One in-process server plus the keys to talk to it."""

    def __init__(self, tmp_path, clock, id_source):
        self.owner_key, self.owner_id = generate_keypair()
        config = ServerConfig(
            name="srv", host="127.0.0.1", port=0,
            db_path=str(tmp_path / "srv.db"),
            private_key=self.owner_key,
            fs_root=str(tmp_path / "fsroot"))
        self.server = ColonyServer(config, clock=clock, id_source=id_source)
        self.clock = clock

    def close(self):
        self.server.stop()


@pytest.fixture
def harness(tmp_path, vclock, ids):
    h = Harness(tmp_path, vclock, ids)
    yield h
    h.close()
