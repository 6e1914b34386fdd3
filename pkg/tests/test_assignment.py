"""Long-poll assignment: hanging claims, wakes, probes, subscriptions."""

from __future__ import annotations

import threading
import time

import pytest

from colonybroker.assignment import AssignmentEngine, WakeHub
from colonybroker.clock import SystemClock
from colonybroker.errors import InvalidTimeout, NotFound
from colonybroker.harness import seed_colony

from test_store import make_proc


@pytest.fixture
def engine(store):
    return AssignmentEngine(store, SystemClock())


def now_ns() -> int:
    return time.time_ns()


def test_probe_returns_immediately_when_empty(engine, store):
    colony_id, (rec,) = seed_colony(store)
    started = time.monotonic()
    assert engine.assign(rec, timeout_s=0) is None
    assert time.monotonic() - started < 0.2


def test_probe_claims_available_work(engine, store):
    colony_id, (rec,) = seed_colony(store)
    p = make_proc(colony_id, now=now_ns())
    engine.submit(p)
    got = engine.assign(rec, timeout_s=0)
    assert got.process_id == p.process_id
    assert got.state == "running"


def test_negative_timeout_rejected(engine, store):
    _, (rec,) = seed_colony(store)
    with pytest.raises(InvalidTimeout):
        engine.assign(rec, timeout_s=-1)


def test_timeout_expires_without_work(engine, store):
    _, (rec,) = seed_colony(store)
    started = time.monotonic()
    assert engine.assign(rec, timeout_s=0.3) is None
    elapsed = time.monotonic() - started
    assert 0.25 <= elapsed < 2.0


def test_parked_assign_wakes_on_submit(engine, store):
    colony_id, (rec,) = seed_colony(store)
    results: list = []

    def poller():
        results.append(engine.assign(rec, timeout_s=5))

    t = threading.Thread(target=poller)
    t.start()
    time.sleep(0.15)  # ensure the poller is parked
    submitted = time.monotonic()
    engine.submit(make_proc(colony_id, now=now_ns()))
    t.join(timeout=5)
    latency = time.monotonic() - submitted
    assert results and results[0] is not None
    assert latency < 0.4, f"wake took {latency:.3f}s, long-poll is not event-driven"


def test_fallback_rescan_finds_unannounced_work(engine, store):
    """Work inserted behind the engine's back (another replica) is still
    claimed within the fallback rescan interval."""
    colony_id, (rec,) = seed_colony(store)
    results: list = []
    t = threading.Thread(target=lambda: results.append(engine.assign(rec, timeout_s=5)))
    t.start()
    time.sleep(0.15)
    store.insert_process(make_proc(colony_id, now=now_ns()))  # no wake
    t.join(timeout=5)
    assert results and results[0] is not None


def test_two_pollers_one_process(engine, store):
    colony_id, recs = seed_colony(store, executors=2)
    results: list = []
    lock = threading.Lock()

    def poller(rec):
        got = engine.assign(rec, timeout_s=1.0)
        with lock:
            results.append(got)

    threads = [threading.Thread(target=poller, args=(r,)) for r in recs]
    for t in threads:
        t.start()
    time.sleep(0.1)
    engine.submit(make_proc(colony_id, now=now_ns()))
    for t in threads:
        t.join(timeout=5)
    claimed = [r for r in results if r is not None]
    assert len(claimed) == 1


def test_close_wakes_released_children(engine, store, ids):
    from colonybroker.model import WorkflowGraph
    from colonybroker.workflows import submit_workflow

    colony_id, (rec,) = seed_colony(store)
    graph = WorkflowGraph.from_obj([
        {"nodename": "a", "funcname": "f", "conditions": {"executortype": "cli"}},
        {"nodename": "b", "funcname": "f",
         "conditions": {"executortype": "cli", "dependencies": ["a"]}},
    ])
    procs = submit_workflow(store, colony_id, graph, now_ns(), ids)
    engine.hub.wake(("queue", colony_id, "cli"))
    first = engine.assign(rec, timeout_s=0)
    assert first.spec.node_name == "a"

    results: list = []
    t = threading.Thread(target=lambda: results.append(engine.assign(rec, timeout_s=5)))
    t.start()
    time.sleep(0.1)
    engine.close(first.process_id, rec.executor_id, True, [1])
    t.join(timeout=5)
    assert results[0].spec.node_name == "b"
    assert results[0].input == [1]


def test_subscribe_returns_on_terminal_state(engine, store):
    colony_id, (rec,) = seed_colony(store)
    p = make_proc(colony_id, now=now_ns())
    engine.submit(p)
    claimed = engine.assign(rec, timeout_s=0)
    results: list = []
    t = threading.Thread(target=lambda: results.append(
        engine.subscribe(p.process_id, timeout_s=5)))
    t.start()
    time.sleep(0.1)
    engine.close(claimed.process_id, rec.executor_id, True, ["done"])
    t.join(timeout=5)
    assert results[0].state == "successful"
    assert results[0].output == ["done"]


def test_subscribe_times_out_with_latest_snapshot(engine, store):
    colony_id, _ = seed_colony(store)
    p = make_proc(colony_id, now=now_ns())
    engine.submit(p)
    got = engine.subscribe(p.process_id, timeout_s=0.2)
    assert got.state == "waiting"


def test_subscribe_unknown_process(engine, store):
    seed_colony(store)
    with pytest.raises(NotFound):
        engine.subscribe("aa" * 32, timeout_s=0)


def test_wake_hub_generations():
    hub = WakeHub()
    gen = hub.generation("k")
    hub.wake("k")
    assert hub.generation("k") == gen + 1
    # wait returns promptly once the generation has already moved
    started = time.monotonic()
    hub.wait("k", gen, timeout=5)
    assert time.monotonic() - started < 0.2
