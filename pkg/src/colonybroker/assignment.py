"""Assignment: executors pull work, the broker never dials out.

An executor's assign call either returns a claimed process immediately
or parks on a wake channel keyed by (colony, executor type) until a
submit, release or requeue makes new work plausible — then it re-runs
the claim. The hang-until-ready behavior is what lets executors behind
NAT or a firewall participate: all traffic is executor-initiated.

Waking is an in-process optimization only. Correctness never depends on
it: every waiter also re-polls on a fallback interval, so a replica that
missed a wake (the submit landed on a different server) still converges.
"""

from __future__ import annotations

import threading

from .clock import Clock
from .errors import InvalidTimeout, NotFound
from .model import Process

MAX_ASSIGN_TIMEOUT_S = 600
FALLBACK_RESCAN_S = 0.5


class WakeHub:
    """Generation-counting wake channels. wait() returns once the key's
    generation moves past the one the caller observed, or on timeout."""

    def __init__(self):
        self._cond = threading.Condition()
        self._gen: dict = {}

    def generation(self, key) -> int:
        with self._cond:
            return self._gen.get(key, 0)

    def wake(self, key) -> None:
        with self._cond:
            self._gen[key] = self._gen.get(key, 0) + 1
            self._cond.notify_all()

    def wait(self, key, seen: int, timeout: float) -> int:
        with self._cond:
            if self._gen.get(key, 0) == seen:
                self._cond.wait(timeout)
            return self._gen.get(key, 0)


class AssignmentEngine:
    """Claim/close/requeue operations over a store, plus the blocking
    glue. Holds no per-process state of its own — any engine instance on
    any replica can serve any call."""

    def __init__(self, store, clock: Clock, hub: WakeHub | None = None):
        self.store = store
        self.clock = clock
        self.hub = hub or WakeHub()

    # wake keys
    @staticmethod
    def _queue_key(colony_id: str, executor_type: str) -> tuple:
        return ("queue", colony_id, executor_type)

    @staticmethod
    def _proc_key(process_id: str) -> tuple:
        return ("proc", process_id)

    def _wake_for(self, process: Process) -> None:
        cond = process.spec.conditions
        self.hub.wake(self._queue_key(cond.colony_id, cond.executor_type))

    # -- submit -----------------------------------------------------------

    def submit(self, process: Process) -> Process:
        self.store.insert_process(process)
        if not process.wait_for_parents:
            self._wake_for(process)
        return process

    def submit_processes(self, processes: list) -> list:
        self.store.insert_workflow(processes)
        for p in processes:
            if not p.wait_for_parents:
                self._wake_for(p)
        return processes

    # -- assign -----------------------------------------------------------

    def assign(self, executor, timeout_s: float, term: int = 0) -> Process | None:
        """Claim the highest-priority matching process, hanging up to
        timeout_s for one to appear. timeout 0 is a non-blocking probe;
        negative timeouts are rejected."""
        if timeout_s < 0:
            raise InvalidTimeout("assign timeout must be >= 0 seconds")
        timeout_s = min(timeout_s, MAX_ASSIGN_TIMEOUT_S)
        key = self._queue_key(executor.colony_id, executor.executor_type)
        deadline = self.clock.now_ns() + int(timeout_s * 1e9)
        while True:
            seen = self.hub.generation(key)
            process = self.store.select_and_claim(
                executor.colony_id, executor, self.clock.now_ns(), term=term)
            if process is not None:
                return process
            remaining_ns = deadline - self.clock.now_ns()
            if remaining_ns <= 0:
                return None
            self.hub.wait(key, seen, min(remaining_ns / 1e9, FALLBACK_RESCAN_S))

    # -- close / requeue ----------------------------------------------------

    def close(self, process_id: str, caller: str, success: bool, output: list,
              errors: list | None = None) -> Process:
        process, released = self.store.close_process(
            process_id, caller, success, output, self.clock.now_ns(), errors=errors)
        for child_id in released:
            child = self.store.get_process(child_id)
            if child is not None:
                self._wake_for(child)
        if process.state == "waiting":
            self._wake_for(process)  # failure close put it back in the queue
        self.hub.wake(self._proc_key(process_id))
        return process

    def reset(self, process_id: str, reason: str) -> Process:
        process = self.store.reset_process(process_id, reason, self.clock.now_ns())
        if process.state == "waiting":
            self._wake_for(process)
        else:
            self.hub.wake(self._proc_key(process_id))
        return process

    def fail_waiting(self, process_id: str, reason: str) -> Process:
        process = self.store.fail_waiting_process(process_id, reason, self.clock.now_ns())
        self.hub.wake(self._proc_key(process_id))
        return process

    def add_child(self, parent_id: str, caller: str, child: Process,
                  insert_before_children: bool) -> Process:
        return self.store.add_child_process(
            parent_id, caller, child, insert_before_children, self.clock.now_ns())

    # -- subscribe ----------------------------------------------------------

    def subscribe(self, process_id: str, timeout_s: float) -> Process:
        """Block until the process reaches a terminal state or the timeout
        lapses; returns the freshest view either way."""
        if timeout_s < 0:
            raise InvalidTimeout("subscribe timeout must be >= 0 seconds")
        timeout_s = min(timeout_s, MAX_ASSIGN_TIMEOUT_S)
        key = self._proc_key(process_id)
        deadline = self.clock.now_ns() + int(timeout_s * 1e9)
        while True:
            seen = self.hub.generation(key)
            process = self.store.get_process(process_id)
            if process is None:
                raise NotFound(f"no process {process_id}")
            if process.is_terminal():
                return process
            remaining_ns = deadline - self.clock.now_ns()
            if remaining_ns <= 0:
                return process
            self.hub.wait(key, seen, min(remaining_ns / 1e9, FALLBACK_RESCAN_S))
