"""Release gates: each test runs one end-to-end requirement at its stated
tolerance and prints a single PASS or FAIL line with the measured numbers.

These deliberately re-verify behavior the unit suites already cover, but
through the outermost interfaces (HTTP server, signed envelopes, executor
runtime, simulated replica cluster) and at full scale.
"""

from __future__ import annotations

import json
import random
import threading
import time

import pytest
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, utils

from colonybroker import failsafe
from colonybroker.assignment import AssignmentEngine
from colonybroker.client import ColonyClient, DirectTransport, HttpTransport
from colonybroker.clock import StepClock, SystemClock
from colonybroker.config import ServerConfig
from colonybroker.crypto import (
    Signature,
    generate_keypair,
    identity_of,
    random_id,
    recover,
    sign,
)
from colonybroker.errors import BrokerError
from colonybroker.executor import ExecutorRuntime
from colonybroker.failsafe import Reaper
from colonybroker.fs import FsCatalog, LocalStorageDriver
from colonybroker.harness import SimColony, seed_colony
from colonybroker.model import (
    CronDef,
    ExecutorRecord,
    GeneratorDef,
    WorkflowGraph,
    canonical_json,
    compute_priority_time,
)
from colonybroker.rpc import sign_envelope
from colonybroker.server import ColonyServer
from colonybroker.store import Store

from conftest import make_id_source
from test_store import make_proc

NS = 10**9


class gate:
    """Context manager that prints the one-line verdict for a gate."""

    def __init__(self, number: int, title: str):
        self.number = number
        self.title = title
        self.detail = ""

    def __enter__(self):
        return self

    def __exit__(self, exc_type, exc, tb):
        verdict = "PASS" if exc_type is None else "FAIL"
        tail = f" ({self.detail})" if self.detail else ""
        print(f"[gate {self.number}] {verdict} {self.title}{tail}")
        return False


# -- gate 1: four-node pipeline over HTTP ----------------------------------------


PIPELINE = [
    {"nodename": "gen", "funcname": "gen_nums",
     "conditions": {"executortype": "edge", "dependencies": []}},
    {"nodename": "left", "funcname": "square",
     "conditions": {"executortype": "cloud", "dependencies": ["gen"]}},
    {"nodename": "right", "funcname": "square",
     "conditions": {"executortype": "browser", "dependencies": ["gen"]}},
    {"nodename": "final", "funcname": "sum",
     "conditions": {"executortype": "edge", "dependencies": ["left", "right"]}},
]

PIPELINE_EDGES = [("gen", "left"), ("gen", "right"),
                  ("left", "final"), ("right", "final")]


def test_gate_1_pipeline_reproduction(tmp_path):
    """Three typed executors run the generate/square/square/sum pipeline
    through a real HTTP server: final output 13, claims in dependency
    order, and the two middle stages measurably concurrent."""
    with gate(1, "pipeline reproduction over HTTP") as g:
        started = time.monotonic()
        owner_key, _ = generate_keypair()
        server = ColonyServer(ServerConfig(
            port=0, db_path=str(tmp_path / "gate1.db"),
            private_key=owner_key, fs_root=str(tmp_path / "objects"),
            scan_interval_s=0.2))
        server.start()
        stop = threading.Event()
        threads = []
        try:
            owner = ColonyClient(HttpTransport(server.url), owner_key)
            colony_key, colony_id = generate_keypair()
            owner.add_colony(colony_id, "gate1")
            colony = ColonyClient(HttpTransport(server.url), colony_key)

            # both squares must be in flight at once or the barrier trips
            rendezvous = threading.Barrier(2, timeout=8)

            def synchronized_square(ctx):
                rendezvous.wait()
                return [v * v for v in ctx.values()]

            for etype in ("edge", "cloud", "browser"):
                key, _ = generate_keypair()
                functions = None if etype == "edge" else {"square": synchronized_square}
                runtime = ExecutorRuntime(
                    ColonyClient(HttpTransport(server.url), key),
                    colony_id, f"{etype}-0", executor_type=etype,
                    functions=functions)
                runtime.register()
                colony.approve_executor(colony_id, runtime.name)
                thread = threading.Thread(
                    target=runtime.run_forever,
                    kwargs={"poll_timeout_s": 0.5, "stop": stop}, daemon=True)
                thread.start()
                threads.append(thread)

            submitted = colony.submit_workflow(colony_id, PIPELINE)
            workflow_id = submitted["workflowid"]
            state = None
            deadline = time.monotonic() + 9
            while time.monotonic() < deadline:
                state = colony.get_workflow(colony_id, workflow_id)
                if state["state"] in ("successful", "failed"):
                    break
                time.sleep(0.05)
            assert state is not None and state["state"] == "successful", \
                f"workflow did not finish: {state and state['state']}"

            by_node = {p["spec"]["nodename"]: p for p in state["processes"]}
            assert by_node["final"]["output"] == [13]
            assert by_node["gen"]["output"] == [2, 3]
            assert sorted([by_node["left"]["output"],
                           by_node["right"]["output"]]) == [[4], [9]]

            # claim order must be a linear extension of the dependency dag
            claim_pos = {}
            for event in server.store.audit_trail(action="claim"):
                claim_pos[event["processid"]] = event["seq"]
            node_pos = {name: claim_pos[p["processid"]]
                        for name, p in by_node.items()}
            for parent, child in PIPELINE_EDGES:
                assert node_pos[parent] < node_pos[child], \
                    f"{child} claimed before {parent}"

            overlap_start = max(by_node["left"]["starttime"],
                                by_node["right"]["starttime"])
            overlap_end = min(by_node["left"]["endtime"],
                              by_node["right"]["endtime"])
            assert overlap_start < overlap_end, "middle stages never overlapped"

            elapsed = time.monotonic() - started
            assert elapsed < 10.0, f"took {elapsed:.1f}s"
            g.detail = (f"final output 13, overlap "
                        f"{(overlap_end - overlap_start) / 1e6:.1f}ms, "
                        f"{elapsed:.2f}s")
        finally:
            stop.set()
            for thread in threads:
                thread.join(timeout=5)
            server.stop()


# -- gate 2: exclusivity under contention ----------------------------------------


def test_gate_2_exclusive_claims_under_contention(store):
    """100 concurrently long-polling executors drain 1000 processes:
    every process claimed exactly once, claims per type in priority
    order."""
    with gate(2, "claim exclusivity under contention") as g:
        started = time.monotonic()
        colony_id, _ = seed_colony(store, executors=0)
        types = ["cli", "gpu", "edge", "web"]
        executors = []
        for i in range(100):
            record = ExecutorRecord(
                executor_id=random_id(), executor_name=f"e{i}",
                executor_type=types[i % len(types)], colony_id=colony_id,
                approved=True)
            store.add_executor(record)
            executors.append(record)

        engine = AssignmentEngine(store, SystemClock())
        rng = random.Random(8102)
        base = time.time_ns()
        processes = []
        for i in range(1000):
            processes.append(make_proc(
                colony_id, priority=rng.randint(0, 10), now=base + i * 1000,
                executor_type=types[rng.randrange(len(types))],
                name=f"p{i}"))

        expected = {etype: [] for etype in types}
        for p in processes:
            key = (compute_priority_time(p.submission_time, p.spec.priority),
                   p.submission_time)
            expected[p.spec.conditions.executor_type].append((key, p.process_id))
        for etype in expected:
            expected[etype] = [pid for _, pid in sorted(expected[etype])]

        def drain(record):
            while engine.assign(record, timeout_s=2.0, term=0) is not None:
                pass

        pollers = [threading.Thread(target=drain, args=(record,), daemon=True)
                   for record in executors]
        for thread in pollers:
            thread.start()
        time.sleep(0.2)  # let everyone park on the empty queue
        engine.submit_processes(processes)
        for thread in pollers:
            thread.join(timeout=55)
            assert not thread.is_alive(), "a poller is stuck"

        trail = store.audit_trail()
        assert failsafe.exclusivity_violations(trail) == []
        claims = [e for e in trail if e["action"] == "claim"]
        claimed = [e["processid"] for e in claims]
        assert len(claimed) == 1000
        assert len(set(claimed)) == 1000, "a process was claimed twice"
        observed = failsafe.claim_order(trail, {})
        for etype in types:
            assert observed.get(etype, []) == expected[etype], \
                f"{etype} claims out of priority order"

        elapsed = time.monotonic() - started
        assert elapsed < 60.0, f"took {elapsed:.1f}s"
        g.detail = f"1000 claims, 0 double, order exact, {elapsed:.2f}s"


# -- gate 3: failsafe recovery ladder --------------------------------------------


def test_gate_3_failsafe_recovery(store, vclock):
    """Two executor deaths are reaped within deadline + scan interval and
    the third attempt completes; a process without a retry budget fails
    terminally after one death."""
    with gate(3, "failsafe recovery") as g:
        colony_id, records = seed_colony(store, executors=3)
        engine = AssignmentEngine(store, vclock)
        reaper = Reaper(engine)
        scan_interval = 1.0

        process = make_proc(colony_id, now=vclock.now_ns(),
                            max_exec_time=2, max_retries=3)
        engine.submit(process)

        latencies = []
        for attempt in range(2):
            claimed = engine.assign(records[attempt], timeout_s=0)
            assert claimed is not None and claimed.process_id == process.process_id
            claim_time = claimed.start_time
            # the executor dies here: no close will ever arrive
            while store.get_process(process.process_id).state == "running":
                vclock.advance(seconds=scan_interval)
                reaper.reap_once()
            row = store.get_process(process.process_id)
            assert row.state == "waiting", f"attempt {attempt + 1}: {row.state}"
            latency = (vclock.now_ns() - claim_time) / NS
            assert latency <= 2 + scan_interval + 1, f"reassignment took {latency}s"
            latencies.append(latency)

        survivor = engine.assign(records[2], timeout_s=0)
        assert survivor is not None and survivor.process_id == process.process_id
        engine.close(process.process_id, records[2].executor_id, True, [7])
        final = store.get_process(process.process_id)
        assert final.state == "successful"
        assert final.retries == 2

        doomed = make_proc(colony_id, now=vclock.now_ns(),
                           max_exec_time=2, max_retries=0, name="doomed")
        engine.submit(doomed)
        assert engine.assign(records[0], timeout_s=0).process_id == doomed.process_id
        while store.get_process(doomed.process_id).state == "running":
            vclock.advance(seconds=scan_interval)
            reaper.reap_once()
        assert store.get_process(doomed.process_id).state == "failed"

        g.detail = (f"reassigned in {latencies[0]:.0f}s/{latencies[1]:.0f}s "
                    f"(limit 4s), 3rd attempt ok, no-retry process failed")


# -- gate 4: leader failover fires exactly once -----------------------------------


def test_gate_4_leader_failover_exactly_once(store, vclock, ids):
    """Across two leader kills, an every-second schedule fires once per
    elapsed tick (plus or minus one) and a threshold generator fed 100
    payloads fires exactly ten times."""
    with gate(4, "exactly-once firing across failover") as g:
        colony_id, _ = seed_colony(store)
        workflow = [{"nodename": "job", "funcname": "f",
                     "conditions": {"executortype": "cli"}}]

        sim = SimColony(store, vclock, ["r1", "r2", "r3"], seed=11,
                        id_source=ids)
        sim.settle()

        t0 = vclock.now_ns()
        cron = CronDef(cron_id=random_id(), colony_id=colony_id, name="tick",
                       interval=1, workflow=WorkflowGraph.from_obj(workflow),
                       next_deadline=t0 + NS)
        store.add_cron(cron)
        generator = GeneratorDef(generator_id=random_id(), colony_id=colony_id,
                                 name="batch", trigger_count=10,
                                 workflow=WorkflowGraph.from_obj(workflow))
        store.add_generator(generator)

        fed = 0
        for second in range(30):
            if second < 25:
                for _ in range(4):
                    store.add_pack(generator.generator_id, {"n": fed},
                                   vclock.now_ns())
                    fed += 1
            if second in (8, 16):
                sim.kill(sim.leader() or sim.settle())
            if second in (10, 18):
                for name in ("r1", "r2", "r3"):
                    if name not in sim.cluster.up:
                        sim.restart(name)
            sim.step(1000)
        elapsed_ticks = (vclock.now_ns() - t0) // NS
        assert fed == 100

        cron_fires = [f for f in sim.fires if f[0] == "cron"]
        gen_fires = [f for f in sim.fires if f[0] == "generator"]
        assert abs(len(cron_fires) - elapsed_ticks) <= 1, \
            f"{len(cron_fires)} cron fires over {elapsed_ticks} ticks"

        # the audit trail carries the grid deadline of every fire: a
        # duplicate would show up as a repeated deadline
        deadlines = [e["deadline"] for e in store.audit_trail(action="cron_fire")]
        assert len(deadlines) == len(cron_fires)
        assert len(set(deadlines)) == len(deadlines), "a tick fired twice"

        assert len(gen_fires) == 10, f"{len(gen_fires)} generator fires"
        consumed = []
        for _, _, pids, _ in gen_fires:
            roots = [store.get_process(pid) for pid in pids]
            consumed.extend(r.input for r in roots if not r.parents)
        flat = [item for batch in consumed for item in batch]
        assert flat == [{"n": i} for i in range(100)], "payloads lost or reordered"
        assert store.pack_stats(generator.generator_id)[0] == 0

        for term, leaders in sim.cluster.leaders_by_term.items():
            assert len(leaders) == 1, f"term {term} had leaders {leaders}"

        g.detail = (f"{len(cron_fires)} cron fires / {elapsed_ticks} ticks, "
                    f"10 generator fires, {len(sim.cluster.leaders_by_term)} "
                    f"terms all single-leader")


# -- gate 5: zero-trust request suite ----------------------------------------------


def test_gate_5_zero_trust(harness):
    """100 tampered requests all rejected, 100 valid ones all accepted,
    and signatures interoperate with an independent implementation on
    100 random vectors."""
    with gate(5, "zero-trust request filtering") as g:
        server = harness.server
        clock = harness.clock
        owner = ColonyClient(DirectTransport(server), harness.owner_key,
                             clock=clock)
        colony_key, colony_id = generate_keypair()
        owner.add_colony(colony_id, "gate5")
        other_key, other_id = generate_keypair()
        owner.add_colony(other_id, "gate5-other")
        colony = ColonyClient(DirectTransport(server), colony_key, clock=clock)

        worker_key, worker_id = generate_keypair()
        colony.add_executor(worker_id, "worker", "cli", colony_id)
        colony.approve_executor(colony_id, "worker")
        lurker_key, lurker_id = generate_keypair()
        ColonyClient(DirectTransport(server), lurker_key, clock=clock) \
            .add_executor(lurker_id, "lurker", "cli", colony_id)  # never approved

        def post(envelope):
            status, _ = server.handle_api_request(canonical_json(envelope))
            return status

        rng = random.Random(20260819)
        rejected = 0
        for case in range(100):
            kind = case % 4
            now = clock.now_ns()
            if kind == 0:
                # flip one byte of a validly signed payload
                envelope = sign_envelope(
                    "get_colony", {"colonyid": colony_id}, colony_key, now)
                payload = bytearray(envelope["payload"].encode("ascii"))
                pos = rng.randrange(len(payload))
                payload[pos] ^= 1 << rng.randrange(7)
                envelope["payload"] = payload.decode("ascii", "replace")
            elif kind == 1:
                # member of one colony calling into another
                envelope = sign_envelope(
                    "get_executors", {"colonyid": other_id}, worker_key, now)
            elif kind == 2:
                # enrolled but never approved
                envelope = sign_envelope(
                    "assign", {"colonyid": colony_id, "timeout": 0},
                    lurker_key, now)
            else:
                # correctly signed but outside the replay window
                skew = (300 + 1 + rng.randrange(3600)) * NS
                stale = now + skew if rng.random() < 0.5 else now - skew
                envelope = sign_envelope(
                    "get_colony", {"colonyid": colony_id}, colony_key, stale)
            status = post(envelope)
            assert status != 200, f"tamper case {case} (kind {kind}) accepted"
            rejected += 1

        accepted = 0
        reads = [("get_colony", {"colonyid": colony_id}, colony_key),
                 ("get_executors", {"colonyid": colony_id}, worker_key),
                 ("get_statistics", {"colonyid": colony_id}, colony_key),
                 ("assign", {"colonyid": colony_id, "timeout": 0}, worker_key),
                 ("get_processes", {"colonyid": colony_id}, colony_key)]
        for case in range(100):
            ptype, fields, key = reads[case % len(reads)]
            status = post(sign_envelope(ptype, fields, key, clock.now_ns()))
            assert status == 200, f"valid case {case} ({ptype}) rejected"
            accepted += 1

        # cross-check against OpenSSL on random keys and messages
        mismatches = 0
        for _ in range(100):
            secret = rng.randrange(1, 2**255)
            private = "%064x" % secret
            message = rng.randbytes(rng.randrange(1, 200))
            ours = sign(message, private)
            ref_key = ec.derive_private_key(secret, ec.SECP256K1())
            ref_key.public_key().verify(
                utils.encode_dss_signature(ours.r, ours.s), message,
                ec.ECDSA(hashes.SHA3_256()))
            der = ref_key.sign(message, ec.ECDSA(hashes.SHA3_256()))
            r, s = utils.decode_dss_signature(der)
            wanted = identity_of(private)
            found = set()
            for recovery in range(4):
                try:
                    found.add(recover(message, Signature(r, s, recovery)))
                except BrokerError:
                    continue
            if wanted not in found:
                mismatches += 1
        assert mismatches == 0

        g.detail = (f"{rejected}/100 tampered rejected, {accepted}/100 valid "
                    f"accepted, 0/100 interop mismatches")


# -- gate 6: statelessness differential -------------------------------------------


class RecordingTransport:
    """DirectTransport that keeps the exact bytes of every envelope."""

    def __init__(self, server, log: list):
        self.inner = DirectTransport(server)
        self.log = log

    def post(self, envelope: dict, timeout_s: float | None = None) -> tuple:
        self.log.append(canonical_json(envelope))
        return self.inner.post(envelope, timeout_s)

    def health(self) -> dict:
        return self.inner.health()


OWNER_PRIV = "%064x" % 0x1001
COLONY_PRIV = "%064x" % 0x2002
E1_PRIV = "%064x" % 0x3003
E2_PRIV = "%064x" % 0x4004


def record_trace(tmp_path) -> list:
    """Drive a scratch server through 500 calls and keep the raw signed
    envelopes. Ids come from a counter source, timestamps from a stepping
    clock, so an identical server re-derives identical state from them."""
    log: list = []
    scratch = ColonyServer(
        ServerConfig(port=0, db_path=str(tmp_path / "scratch.db"),
                     private_key=OWNER_PRIV),
        clock=StepClock(), id_source=make_id_source())
    sign_clock = StepClock()

    def client(key):
        return ColonyClient(RecordingTransport(scratch, log), key,
                            clock=sign_clock)

    owner = client(OWNER_PRIV)
    colony = client(COLONY_PRIV)
    e1 = client(E1_PRIV)
    e2 = client(E2_PRIV)
    colony_id = identity_of(COLONY_PRIV)

    workflow = [{"nodename": "job", "funcname": "echo",
                 "conditions": {"executortype": "cli"}}]
    owner.add_colony(colony_id, "replay")
    e1.add_executor(identity_of(E1_PRIV), "e1", "cli", colony_id)
    e2.add_executor(identity_of(E2_PRIV), "e2", "cli", colony_id)
    colony.approve_executor(colony_id, "e1")
    colony.approve_executor(colony_id, "e2")
    colony.add_function(colony_id, "e1", "echo")
    colony.add_function(colony_id, "e2", "echo")
    cron = colony.add_cron(colony_id, "nightly", workflow, interval=3600)
    generator = colony.add_generator(colony_id, "batch", workflow,
                                     trigger_count=1000)

    def spec(i):
        return {"funcname": "echo", "conditions": {
            "colonyid": colony_id, "executortype": "cli"}, "args": [i]}

    labels = []
    for i in range(35):
        submitted = colony.submit(spec(i))
        claimed = e1.assign(colony_id, 0)
        e1.close(claimed.process_id, True, [i])
        submitted = colony.submit(spec(1000 + i))
        claimed = e2.assign(colony_id, 0)
        e2.close(claimed.process_id, False, [], errors=["boom"])
        colony.get_process(submitted.process_id)
        colony.get_statistics(colony_id)
        e1.pack(colony_id, generator.generator_id, {"n": i})
        meta = e1.add_file(
            {"colonyid": colony_id, "label": f"/data/{i % 5}",
             "name": f"f{i}.bin", "checksum": "ab" * 32, "size": 3,
             "storageref": {"protocol": "local", "address": "/objects",
                            "key": "ab" * 32}})
        labels.append(meta.label)
        colony.get_files(colony_id, meta.label)
        colony.create_snapshot(colony_id, meta.label)
    for j in range(17):
        submitted = colony.submit(spec(2000 + j))
        claimed = e1.assign(colony_id, 0)
        e1.close(claimed.process_id, True, ["done"])
        colony.get_processes(colony_id, state="successful")
    owner.get_colonies()
    colony.get_colony(colony_id)
    colony.remove_file(colony_id, labels[0], "f0.bin")
    assert cron.interval == 3600
    assert len(log) == 500, f"trace has {len(log)} calls, wanted 500"
    scratch.stop()
    return log


def replay(trace: list, tmp_path, tag: str, alternate: bool) -> str:
    """Replay raw envelopes against two fresh servers over one store,
    either all to the first or alternating, and dump the store."""
    shared = Store(str(tmp_path / f"{tag}.db"))
    clock = StepClock()
    id_source = make_id_source()
    servers = [
        ColonyServer(ServerConfig(name=f"{tag}{n}", port=0,
                                  private_key=OWNER_PRIV),
                     clock=clock, id_source=id_source, store=shared)
        for n in range(2)
    ]
    for i, raw in enumerate(trace):
        target = servers[i % 2] if alternate else servers[0]
        status, body = target.handle_api_request(raw)
        assert status == 200, f"{tag} request {i} -> {status}: {body}"
    dumped = shared.dump()
    shared.close()
    return dumped


def test_gate_6_statelessness_differential(tmp_path):
    """A 500-request signed trace replayed against one server and against
    two alternating servers over the same store ends in byte-identical
    stores."""
    with gate(6, "statelessness differential") as g:
        trace = record_trace(tmp_path)
        single = replay(trace, tmp_path, "single", alternate=False)
        paired = replay(trace, tmp_path, "paired", alternate=True)
        assert single == paired, "store dumps diverged"
        g.detail = (f"500 requests, dumps identical "
                    f"({len(single)} bytes)")


# -- gate 7: filesystem immutability and snapshot isolation -------------------------


def test_gate_7_snapshot_isolation(store, vclock, tmp_path):
    """A snapshot materializes byte-identically after 50 superseding
    revisions, and 1000 random catalog calls never alter an existing
    revision row."""
    with gate(7, "snapshot isolation and immutability") as g:
        colony_id, _ = seed_colony(store)
        catalog = FsCatalog(store, vclock,
                            LocalStorageDriver(str(tmp_path / "objects")))
        catalog.upload(colony_id, "/data", "a.txt", b"first draft")
        catalog.upload(colony_id, "/data", "b.txt", b"sidecar")
        snap = catalog.create_snapshot(colony_id, "/data")

        def materialize(snapshot_id) -> bytes:
            listing = []
            for meta in catalog.snapshot_files(snapshot_id):
                listing.append([meta.label, meta.name, meta.revision,
                                meta.checksum,
                                catalog.download(meta).decode("latin-1")])
            listing.sort()
            return json.dumps(listing).encode()

        before = materialize(snap.snapshot_id)
        for i in range(50):
            vclock.advance(seconds=1)
            catalog.upload(colony_id, "/data", "a.txt", b"revision %d" % i)
        assert materialize(snap.snapshot_id) == before, \
            "snapshot content drifted under new revisions"

        def revision_rows() -> dict:
            tables = json.loads(store.dump())["tables"]
            frozen = {}
            for row in tables["files"]:
                row = dict(row)
                row.pop("deleted")  # lifecycle flag, not content
                frozen[row["file_id"]] = row
            return frozen

        rng = random.Random(20260819)
        names = ["a.txt", "b.txt", "c.txt", "d.txt"]
        disposable = []  # never includes the snapshot under test
        frozen = revision_rows()
        calls = 0
        for step in range(1000):
            vclock.advance(seconds=1)
            roll = rng.random()
            name = rng.choice(names)
            if roll < 0.5:
                catalog.upload(colony_id, "/data", name,
                               b"step %d" % step)
            elif roll < 0.7:
                try:
                    catalog.remove_file(colony_id, "/data", name)
                except BrokerError:
                    pass
            elif roll < 0.85:
                disposable.append(
                    catalog.create_snapshot(colony_id, "/data").snapshot_id)
            elif disposable:
                try:
                    catalog.remove_snapshot(rng.choice(disposable))
                except BrokerError:
                    pass
            calls += 1
            if step % 100 == 99:
                current = revision_rows()
                for file_id, row in frozen.items():
                    assert current[file_id] == row, \
                        f"revision row {file_id} changed"
                frozen = current
        assert calls == 1000
        assert materialize(snap.snapshot_id) == before

        g.detail = ("snapshot stable across 50 revisions and a "
                    "1000-call fuzz")


# -- gate 8: priority arithmetic ---------------------------------------------------


def test_gate_8_priority_formula(store, vclock):
    """Ten thousand random inputs match an independently written formula
    and the queue pops in exactly the offline sort order."""
    with gate(8, "priority arithmetic and pop order") as g:
        rng = random.Random(4093)
        day_ns = 86400 * NS
        for _ in range(10_000):
            submission = rng.randrange(0, 2**62)
            priority = rng.randint(0, 10)
            independent = submission - priority * day_ns
            if independent < 0:
                independent = 0
            assert compute_priority_time(submission, priority) == independent

        colony_id, (record,) = seed_colony(store)
        engine = AssignmentEngine(store, vclock)
        base = vclock.now_ns()
        processes = []
        for i in range(300):
            processes.append(make_proc(
                colony_id, priority=rng.randint(0, 10),
                now=base + i * 1_000_001, name=f"p{i}"))
        engine.submit_processes(processes)

        offline = sorted(
            processes,
            key=lambda p: (compute_priority_time(p.submission_time,
                                                 p.spec.priority),
                           p.submission_time))
        popped = []
        while True:
            claimed = engine.assign(record, timeout_s=0)
            if claimed is None:
                break
            popped.append(claimed.process_id)
            engine.close(claimed.process_id, record.executor_id, True, [])
        assert popped == [p.process_id for p in offline], \
            "pop order diverged from the offline sort"

        g.detail = "10000 formula checks, 300-process pop order exact"
