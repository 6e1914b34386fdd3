"""Deterministic simulation glue for fault testing.

Real chaos tests flake; these run the same components (store, engine,
reaper, trigger scans, election nodes) against a virtual clock, so a
"leader dies while a schedule is due" scenario is a few deterministic
lines instead of a sleep-and-hope script.
"""

from __future__ import annotations

from . import triggers
from .assignment import AssignmentEngine
from .cluster import SimCluster
from .crypto import random_id
from .failsafe import Reaper
from .model import Colony, ExecutorRecord


def seed_colony(store, name: str = "sim", executors: int = 1,
                executor_type: str = "cli", colony_id: str | None = None) -> tuple:
    """Create a colony with n approved executors (engine-level identities,
    no keys involved). Returns (colony_id, [ExecutorRecord])."""
    colony_id = colony_id or random_id()
    store.add_colony(Colony(colony_id=colony_id, name=name))
    records = []
    for i in range(executors):
        rec = ExecutorRecord(
            executor_id=random_id(), executor_name=f"{name}-exec-{i}",
            executor_type=executor_type, colony_id=colony_id, approved=True)
        store.add_executor(rec)
        records.append(rec)
    return colony_id, records


class SimColony:
    """Replica cluster + shared store + leader duties, in virtual time.

    Each replica gets its own engine over the one store (that is the
    deployment shape: stateless servers, common database). After every
    simulation quantum the current leader runs its periodic duties with
    its term, so trigger fires and reaps follow leadership exactly as
    the serving loop would run them.
    """

    def __init__(self, store, clock, names: list, seed: int = 7,
                 duty_interval_ms: int = 100, id_source=None):
        self.store = store
        self.clock = clock
        self.cluster = SimCluster(names, clock, seed=seed)
        self.engines = {name: AssignmentEngine(store, clock) for name in names}
        self.reapers = {name: Reaper(self.engines[name]) for name in names}
        self.duty_interval_ns = duty_interval_ms * 10**6
        self.id_source = id_source
        self._next_duty = clock.now_ns()
        self.fires: list = []

    def kill(self, name: str) -> None:
        self.cluster.kill(name)

    def restart(self, name: str) -> None:
        self.cluster.restart(name)

    def leader(self) -> str | None:
        return self.cluster.leader()

    def settle(self, max_ms: int = 5000) -> str:
        leader = None
        waited = 0
        while waited < max_ms:
            leader = self.cluster.leader()
            if leader is not None:
                return leader
            self.step(10)
            waited += 10
        raise AssertionError("no leader elected in simulated time")

    def step(self, ms: float) -> None:
        target = self.clock.now_ns() + int(ms * 10**6)
        while self.clock.now_ns() < target:
            remaining_ms = (target - self.clock.now_ns()) / 10**6
            self.cluster.step(min(5, remaining_ms))
            if self.clock.now_ns() >= self._next_duty:
                self._next_duty = self.clock.now_ns() + self.duty_interval_ns
                self.run_duties()

    def run_duties(self) -> None:
        leader = self.cluster.leader()
        if leader is None:
            return
        engine = self.engines[leader]
        self.reapers[leader].reap_once()
        for cron_id, workflow_id in triggers.cron_scan(engine, self.id_source):
            self.fires.append(("cron", cron_id, workflow_id, self.clock.now_ns()))
        for generator_id, pids in triggers.generator_scan(engine, self.id_source):
            self.fires.append(("generator", generator_id, pids, self.clock.now_ns()))
