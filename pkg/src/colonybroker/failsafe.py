"""Deadline enforcement and audit-trail verification.

The broker assumes executors disappear without warning: pods get
rescheduled, spot nodes vanish, clusters scale down by deletion. No
executor ever reports "I died" — the reaper infers it from deadlines
recorded at claim time and sends the work back to the queue, burning one
retry. Wait-deadline expiry is different: a process nobody ever picked
up fails terminally without touching the retry budget.
"""

from __future__ import annotations

REASON_EXEC_EXPIRED = "max execution time exceeded"
REASON_WAIT_EXPIRED = "max waiting time exceeded"


class Reaper:
    """One sweep = one reap_once call; the serving layer runs it on a
    timer, only on the leader. Safe to run concurrently anyway — every
    transition is a conditional update, so a double reap is a no-op."""

    def __init__(self, engine):
        self.engine = engine

    def reap_once(self) -> dict:
        now = self.engine.clock.now_ns()
        store = self.engine.store
        reaped = {"expired": [], "wait_expired": []}
        for pid in store.expired_processes(now):
            try:
                self.engine.reset(pid, REASON_EXEC_EXPIRED)
            except Exception:
                continue  # lost the race to a concurrent close; fine
            reaped["expired"].append(pid)
        for pid in store.wait_expired_processes(now):
            try:
                self.engine.fail_waiting(pid, REASON_WAIT_EXPIRED)
            except Exception:
                continue
            reaped["wait_expired"].append(pid)
        return reaped


def exclusivity_violations(trail: list) -> list:
    """Scan an audit trail for assignment-exclusivity violations.

    Legal per-process event grammar: submit, then any number of
    (claim -> reset) cycles, then at most one of claim -> close(success)
    or a terminal fail. A claim while the process is already claimed or
    terminal is a violation. Returns [(seq, process_id, problem), ...].
    """
    state: dict = {}
    violations = []
    for event in trail:
        pid = event.get("processid", "")
        action = event.get("action")
        if not pid:
            continue
        if action == "submit":
            if pid in state:
                violations.append((event["seq"], pid, "resubmitted"))
            state[pid] = "free"
        elif action == "claim":
            prior = state.get(pid)
            if prior != "free":
                violations.append((event["seq"], pid, f"claim while {prior}"))
            state[pid] = "claimed"
        elif action == "reset":
            state[pid] = "free"
        elif action == "close":
            if event.get("success"):
                state[pid] = "terminal"
            # a failure close is followed by its own reset or fail event
        elif action == "fail":
            state[pid] = "terminal"
    return violations


def claim_order(trail: list, executor_types: dict) -> dict:
    """Claimed process ids grouped by executor type, in claim order.
    executor_types maps executor id -> type."""
    order: dict = {}
    for event in trail:
        if event.get("action") != "claim":
            continue
        etype = event.get("executortype") or executor_types.get(event.get("executorid"), "?")
        order.setdefault(etype, []).append(event["processid"])
    return order
