"""Reaper ladders in virtual time, plus the audit-trail checkers."""

from __future__ import annotations

from colonybroker.assignment import AssignmentEngine
from colonybroker.failsafe import (
    REASON_EXEC_EXPIRED,
    REASON_WAIT_EXPIRED,
    Reaper,
    claim_order,
    exclusivity_violations,
)
from colonybroker.harness import seed_colony

from test_store import make_proc


def wire(store, vclock):
    engine = AssignmentEngine(store, vclock)
    return engine, Reaper(engine)


def test_expired_running_process_is_requeued(store, vclock):
    colony_id, (rec,) = seed_colony(store)
    engine, reaper = wire(store, vclock)
    p = make_proc(colony_id, now=vclock.now_ns(), max_exec_time=2, max_retries=1)
    engine.submit(p)
    engine.assign(rec, timeout_s=0)

    vclock.advance(seconds=1)
    assert reaper.reap_once() == {"expired": [], "wait_expired": []}
    vclock.advance(seconds=1.5)
    assert reaper.reap_once()["expired"] == [p.process_id]
    got = store.get_process(p.process_id)
    assert got.state == "waiting"
    assert got.retries == 1
    assert REASON_EXEC_EXPIRED in got.errors
    # idempotent: nothing left to reap
    assert reaper.reap_once() == {"expired": [], "wait_expired": []}


def test_full_retry_ladder_completes_on_final_attempt(store, vclock):
    """Two executor disappearances, success on the third attempt."""
    colony_id, (rec,) = seed_colony(store)
    engine, reaper = wire(store, vclock)
    p = make_proc(colony_id, now=vclock.now_ns(), max_exec_time=2, max_retries=3)
    engine.submit(p)

    for attempt in (1, 2):
        got = engine.assign(rec, timeout_s=0)
        assert got.process_id == p.process_id
        vclock.advance(seconds=2.5)  # executor dies silently
        assert reaper.reap_once()["expired"] == [p.process_id]
        assert store.get_process(p.process_id).retries == attempt

    got = engine.assign(rec, timeout_s=0)
    engine.close(got.process_id, rec.executor_id, True, ["ok"])
    final = store.get_process(p.process_id)
    assert final.state == "successful"
    assert final.retries == 2
    assert final.output == ["ok"]


def test_no_budget_means_one_kill_fails_it(store, vclock):
    colony_id, (rec,) = seed_colony(store)
    engine, reaper = wire(store, vclock)
    p = make_proc(colony_id, now=vclock.now_ns(), max_exec_time=2, max_retries=0)
    engine.submit(p)
    engine.assign(rec, timeout_s=0)
    vclock.advance(seconds=3)
    reaper.reap_once()
    assert store.get_process(p.process_id).state == "failed"


def test_unbounded_exec_time_never_expires(store, vclock):
    colony_id, (rec,) = seed_colony(store)
    engine, reaper = wire(store, vclock)
    p = make_proc(colony_id, now=vclock.now_ns(), max_exec_time=-1)
    engine.submit(p)
    engine.assign(rec, timeout_s=0)
    vclock.advance(seconds=10**6)
    assert reaper.reap_once()["expired"] == []
    assert store.get_process(p.process_id).state == "running"


def test_overstayed_waiting_process_fails_terminally(store, vclock):
    colony_id, _ = seed_colony(store)
    engine, reaper = wire(store, vclock)
    p = make_proc(colony_id, now=vclock.now_ns(), max_wait_time=5, max_retries=3)
    engine.submit(p)
    vclock.advance(seconds=6)
    assert reaper.reap_once()["wait_expired"] == [p.process_id]
    got = store.get_process(p.process_id)
    assert got.state == "failed"
    assert got.retries == 0  # queue expiry never burns execution retries
    assert REASON_WAIT_EXPIRED in got.errors


def test_wait_deadline_cleared_by_claim(store, vclock):
    colony_id, (rec,) = seed_colony(store)
    engine, reaper = wire(store, vclock)
    p = make_proc(colony_id, now=vclock.now_ns(), max_wait_time=5)
    engine.submit(p)
    engine.assign(rec, timeout_s=0)
    vclock.advance(seconds=60)
    assert reaper.reap_once()["wait_expired"] == []
    assert store.get_process(p.process_id).state == "running"


def test_reaped_process_is_reassignable_to_another_executor(store, vclock):
    colony_id, recs = seed_colony(store, executors=2)
    engine, reaper = wire(store, vclock)
    p = make_proc(colony_id, now=vclock.now_ns(), max_exec_time=1, max_retries=1)
    engine.submit(p)
    first = engine.assign(recs[0], timeout_s=0)
    vclock.advance(seconds=2)
    reaper.reap_once()
    second = engine.assign(recs[1], timeout_s=0)
    assert second.process_id == first.process_id
    assert second.assigned_executor == recs[1].executor_id


# -- audit grammar checkers ------------------------------------------------------


def trail(*events):
    return [dict(seq=i, **e) for i, e in enumerate(events)]


def test_clean_lifecycle_has_no_violations(store, vclock):
    colony_id, (rec,) = seed_colony(store)
    engine, reaper = wire(store, vclock)
    p = make_proc(colony_id, now=vclock.now_ns(), max_exec_time=1, max_retries=2)
    engine.submit(p)
    engine.assign(rec, timeout_s=0)
    vclock.advance(seconds=2)
    reaper.reap_once()
    engine.assign(rec, timeout_s=0)
    engine.close(p.process_id, rec.executor_id, True, [])
    assert exclusivity_violations(store.audit_trail()) == []


def test_double_claim_is_flagged():
    t = trail(
        {"action": "submit", "processid": "p1"},
        {"action": "claim", "processid": "p1"},
        {"action": "claim", "processid": "p1"},
    )
    violations = exclusivity_violations(t)
    assert len(violations) == 1
    assert violations[0][1] == "p1"
    assert "claimed" in violations[0][2]


def test_claim_after_terminal_is_flagged():
    t = trail(
        {"action": "submit", "processid": "p1"},
        {"action": "claim", "processid": "p1"},
        {"action": "close", "processid": "p1", "success": True},
        {"action": "claim", "processid": "p1"},
    )
    assert exclusivity_violations(t) == [(3, "p1", "claim while terminal")]


def test_claim_without_submit_and_resubmit_flagged():
    t = trail(
        {"action": "claim", "processid": "p1"},
        {"action": "submit", "processid": "p1"},
        {"action": "submit", "processid": "p1"},
    )
    problems = {v[2] for v in exclusivity_violations(t)}
    assert problems == {"claim while None", "resubmitted"}


def test_claim_order_groups_by_type():
    t = trail(
        {"action": "claim", "processid": "p1", "executortype": "cpu"},
        {"action": "claim", "processid": "p2", "executortype": "gpu"},
        {"action": "claim", "processid": "p3", "executortype": "cpu"},
        {"action": "close", "processid": "p3"},
    )
    assert claim_order(t, {}) == {"cpu": ["p1", "p3"], "gpu": ["p2"]}
