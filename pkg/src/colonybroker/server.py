"""The broker server.

One class, two layers. handle_envelope is the whole API as a pure
request-in/response-out call over the store — transport-free, so tests
can drive a server (or two servers sharing a store) deterministically.
The HTTP layer is a thin shell: POST /api carries signed envelopes,
POST /cluster carries election messages, GET /health answers unsigned.

Authorization falls out of signature recovery: the recovered identity
either is the server owner, is a colony id (the colony owner signed), or
resolves to a registered executor. Every mismatch gets the same flat
denial — an attacker learns nothing about what exists.
"""

from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

from . import failsafe, triggers, workflows
from .assignment import AssignmentEngine
from .clock import Clock, SystemClock
from .cluster import RaftNode
from .config import ServerConfig
from .crypto import identity_of, random_id
from .errors import (
    BrokerError,
    Deny,
    InvalidSpec,
    LeaderUnknown,
    NotFound,
)
from .fs import FsCatalog, LocalStorageDriver, MemoryObjectDriver, normalize_label
from .model import (
    Colony,
    CronDef,
    ExecutorRecord,
    FileMeta,
    FunctionSpec,
    GeneratorDef,
    Process,
    WorkflowGraph,
    canonical_json,
)
from .rpc import verify_envelope
from .store import Store

_MAX_PACK_BYTES = 1 << 20
_MAX_LIST_COUNT = 1000
_STORE_FAILURES_BEFORE_STEPDOWN = 3


def _fields(payload: dict, required: dict, optional: dict | None = None) -> dict:
    """Strict payload parsing: typed required/optional fields, nothing else."""
    optional = optional or {}
    allowed = {"msgtype", "ts"} | set(required) | set(optional)
    unknown = set(payload) - allowed
    if unknown:
        raise InvalidSpec(f"unknown payload field(s): {', '.join(sorted(unknown))}")
    out = {}
    for name, kind in required.items():
        if name not in payload:
            raise InvalidSpec(f"missing payload field: {name}")
        out[name] = _typed(payload[name], kind, name)
    for name, kind in optional.items():
        if name in payload:
            out[name] = _typed(payload[name], kind, name)
    return out


def _typed(value, kind: str, name: str):
    ok = {
        "str": lambda v: isinstance(v, str),
        "int": lambda v: isinstance(v, int) and not isinstance(v, bool),
        "num": lambda v: isinstance(v, (int, float)) and not isinstance(v, bool),
        "bool": lambda v: isinstance(v, bool),
        "obj": lambda v: isinstance(v, dict),
        "list": lambda v: isinstance(v, list),
        "any": lambda v: True,
    }[kind](value)
    if not ok:
        raise InvalidSpec(f"payload field {name} must be a {kind}")
    return value


class ColonyServer:
    def __init__(self, config: ServerConfig, clock: Clock | None = None,
                 id_source=None, store: Store | None = None):
        self.config = config
        self.clock = clock or SystemClock()
        self.id_source = id_source
        self.store = store or Store(config.db_path)
        if config.private_key:
            self.owner_key = config.private_key
        elif config.keyfile:
            from .crypto import read_key_file
            self.owner_key = read_key_file(config.keyfile)
        else:
            from .crypto import generate_private_key
            self.owner_key = generate_private_key()
        self.owner_id = identity_of(self.owner_key)
        self.engine = AssignmentEngine(self.store, self.clock)
        self.reaper = failsafe.Reaper(self.engine)
        driver = LocalStorageDriver(config.fs_root) if config.fs_root else MemoryObjectDriver()
        self.catalog = FsCatalog(self.store, self.clock, driver)
        self.node = RaftNode(config.name, config.peer_names())
        if not config.peers:
            # standalone: no campaign, lead immediately
            self.node.start(self.clock.now_ns())
        self._store_failures = 0
        self._httpd = None
        self._threads: list = []
        self._stopping = threading.Event()
        self._handlers = {
            "add_colony": self._h_add_colony,
            "get_colonies": self._h_get_colonies,
            "get_colony": self._h_get_colony,
            "add_executor": self._h_add_executor,
            "approve_executor": self._h_approve_executor,
            "remove_executor": self._h_remove_executor,
            "get_executors": self._h_get_executors,
            "add_function": self._h_add_function,
            "submit_funcspec": self._h_submit_funcspec,
            "submit_workflow": self._h_submit_workflow,
            "get_workflow": self._h_get_workflow,
            "assign": self._h_assign,
            "close": self._h_close,
            "get_process": self._h_get_process,
            "get_processes": self._h_get_processes,
            "add_child": self._h_add_child,
            "subscribe": self._h_subscribe,
            "get_statistics": self._h_get_statistics,
            "add_cron": self._h_add_cron,
            "get_crons": self._h_get_crons,
            "add_generator": self._h_add_generator,
            "get_generators": self._h_get_generators,
            "pack": self._h_pack,
            "add_file": self._h_add_file,
            "get_file": self._h_get_file,
            "get_files": self._h_get_files,
            "remove_file": self._h_remove_file,
            "create_snapshot": self._h_create_snapshot,
            "get_snapshot": self._h_get_snapshot,
            "get_snapshots": self._h_get_snapshots,
            "remove_snapshot": self._h_remove_snapshot,
        }

    def _next_id(self) -> str:
        return random_id(None if self.id_source is None else self.id_source())

    # -- authorization -------------------------------------------------------

    def _require_owner(self, identity: str) -> None:
        if identity != self.owner_id:
            raise Deny()

    def _require_colony_owner(self, colony_id: str, identity: str) -> None:
        if identity != colony_id or self.store.get_colony(colony_id) is None:
            raise Deny()

    def _require_member(self, colony_id: str, identity: str) -> ExecutorRecord | None:
        """Colony owner or an approved executor; returns the executor
        record when the caller is one (None for the owner)."""
        if self.store.get_colony(colony_id) is None:
            raise Deny()
        if identity == colony_id:
            return None
        executor = self.store.get_executor(identity)
        if executor is None or executor.colony_id != colony_id or not executor.approved:
            raise Deny()
        return executor

    def _require_executor(self, colony_id: str, identity: str) -> ExecutorRecord:
        executor = self._require_member(colony_id, identity)
        if executor is None:
            raise Deny()
        return executor

    # -- entry points -----------------------------------------------------------

    def handle_envelope(self, raw) -> tuple:
        """(http_status, response_obj) for one signed envelope."""
        try:
            payload_type, payload, identity = verify_envelope(
                raw, self.clock.now_ns(),
                window_ns=self.config.replay_window_s * 10**9)
            handler = self._handlers.get(payload_type)
            if handler is None:
                raise NotFound(f"unknown payloadtype {payload_type!r}")
            return 200, handler(payload, identity)
        except BrokerError as exc:
            return exc.http_status, exc.to_obj()

    def tick(self) -> dict:
        """One round of leader duties. The serving loop calls this on a
        timer; virtual-time tests call it directly. Only a leader acts.
        Persistent store trouble makes the leader resign."""
        if not self.node.is_leader():
            return {}
        try:
            report = {
                "reaped": self.reaper.reap_once(),
                "crons": triggers.cron_scan(self.engine, self.id_source),
                "generators": triggers.generator_scan(self.engine, self.id_source),
            }
            self._store_failures = 0
            return report
        except BrokerError:
            self._store_failures += 1
            if self._store_failures >= _STORE_FAILURES_BEFORE_STEPDOWN:
                self.node.relinquish(self.clock.now_ns())
                self._store_failures = 0
            return {}

    # -- colony / executor handlers ------------------------------------------

    def _h_add_colony(self, payload, identity):
        self._require_owner(identity)
        body = _fields(payload, {"colony": "obj"})
        colony = Colony.from_obj(body["colony"])
        from .crypto import is_identity
        if not is_identity(colony.colony_id):
            raise InvalidSpec("colonyid must be a 64-hex identity")
        return self.store.add_colony(colony).to_obj()

    def _h_get_colonies(self, payload, identity):
        self._require_owner(identity)
        _fields(payload, {})
        return [c.to_obj() for c in self.store.list_colonies()]

    def _h_get_colony(self, payload, identity):
        body = _fields(payload, {}, {"colonyid": "str", "colonyname": "str"})
        colony_id, name = body.get("colonyid"), body.get("colonyname")
        if bool(colony_id) == bool(name):
            raise InvalidSpec("pass exactly one of colonyid, colonyname")
        colony = (self.store.get_colony(colony_id) if colony_id
                  else self.store.get_colony_by_name(name))
        # missing colony and unauthorized caller look identical to a stranger
        if colony is None:
            raise Deny()
        if identity != self.owner_id:
            self._require_member(colony.colony_id, identity)
        return colony.to_obj()

    def _h_add_executor(self, payload, identity):
        body = _fields(payload, {"executor": "obj"})
        rec = ExecutorRecord.from_obj(body["executor"])
        # the executor enrolls itself, or the colony owner enrolls it
        if identity not in (rec.executor_id, rec.colony_id):
            raise Deny()
        if self.store.get_colony(rec.colony_id) is None:
            raise Deny()
        from .crypto import is_identity
        if not is_identity(rec.executor_id):
            raise InvalidSpec("executorid must be a 64-hex identity")
        rec.approved = identity == rec.colony_id  # owner enrollment pre-approves
        rec.last_seen = self.clock.now_ns()
        return self.store.add_executor(rec).to_obj()

    def _h_approve_executor(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "executorname": "str"})
        self._require_colony_owner(body["colonyid"], identity)
        rec = self.store.get_executor_by_name(body["colonyid"], body["executorname"])
        if rec is None:
            raise NotFound(f"no executor named {body['executorname']}")
        self.store.approve_executor(rec.executor_id)
        return {"ok": True}

    def _h_remove_executor(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "executorname": "str"})
        self._require_colony_owner(body["colonyid"], identity)
        rec = self.store.get_executor_by_name(body["colonyid"], body["executorname"])
        if rec is None:
            raise NotFound(f"no executor named {body['executorname']}")
        self.store.remove_executor(rec.executor_id)
        return {"ok": True}

    def _h_get_executors(self, payload, identity):
        body = _fields(payload, {"colonyid": "str"})
        self._require_member(body["colonyid"], identity)
        return [e.to_obj() for e in self.store.list_executors(body["colonyid"])]

    def _h_add_function(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "executorname": "str", "funcname": "str"})
        rec = self.store.get_executor_by_name(body["colonyid"], body["executorname"])
        if rec is None:
            raise Deny()
        if identity not in (rec.executor_id, body["colonyid"]):
            raise Deny()
        self.store.add_function(rec.executor_id, body["funcname"])
        return {"ok": True}

    # -- process handlers ---------------------------------------------------

    def _h_submit_funcspec(self, payload, identity):
        body = _fields(payload, {"spec": "obj"})
        spec = FunctionSpec.from_obj(body["spec"])
        self._require_member(spec.conditions.colony_id, identity)
        spec.validate()
        process = Process(
            process_id=self._next_id(), spec=spec, state="waiting",
            submission_time=self.clock.now_ns(),
        )
        return self.engine.submit(process).to_obj()

    def _h_submit_workflow(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "workflow": "list"})
        self._require_member(body["colonyid"], identity)
        graph = WorkflowGraph.from_obj(body["workflow"])
        processes = workflows.materialize(
            body["colonyid"], graph, self.clock.now_ns(), self.id_source)
        self.engine.submit_processes(processes)
        return {"workflowid": processes[0].workflow_id,
                "processes": [p.to_obj() for p in processes]}

    def _h_get_workflow(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "workflowid": "str"})
        self._require_member(body["colonyid"], identity)
        processes = self.store.list_processes(
            body["colonyid"], workflow_id=body["workflowid"], count=_MAX_LIST_COUNT)
        if not processes:
            raise NotFound(f"no workflow {body['workflowid']}")
        return {"workflowid": body["workflowid"],
                "state": workflows.workflow_state(processes),
                "processes": [p.to_obj() for p in processes]}

    def _h_assign(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "timeout": "num"})
        executor = self._require_executor(body["colonyid"], identity)
        self.store.touch_executor(executor.executor_id, self.clock.now_ns())
        process = self.engine.assign(executor, body["timeout"], term=self.node.term)
        return {"process": None if process is None else process.to_obj()}

    def _h_close(self, payload, identity):
        body = _fields(payload, {"processid": "str", "successful": "bool"},
                       {"output": "list", "errors": "list"})
        process = self.store.get_process(body["processid"])
        if process is None:
            raise NotFound(f"no process {body['processid']}")
        self._require_member(process.spec.conditions.colony_id, identity)
        return self.engine.close(
            body["processid"], identity, body["successful"],
            body.get("output", []), errors=body.get("errors")).to_obj()

    def _h_get_process(self, payload, identity):
        body = _fields(payload, {"processid": "str"})
        process = self.store.get_process(body["processid"])
        if process is None:
            raise NotFound(f"no process {body['processid']}")
        self._require_member(process.spec.conditions.colony_id, identity)
        return process.to_obj()

    def _h_get_processes(self, payload, identity):
        body = _fields(payload, {"colonyid": "str"}, {"state": "str", "count": "int"})
        self._require_member(body["colonyid"], identity)
        state = body.get("state")
        if state is not None and state not in ("waiting", "running", "successful", "failed"):
            raise InvalidSpec(f"unknown state {state!r}")
        count = min(body.get("count", _MAX_LIST_COUNT), _MAX_LIST_COUNT)
        return [p.to_obj() for p in
                self.store.list_processes(body["colonyid"], state=state, count=count)]

    def _h_add_child(self, payload, identity):
        body = _fields(payload, {"processid": "str", "spec": "obj"},
                       {"insertbefore": "bool"})
        parent = self.store.get_process(body["processid"])
        if parent is None:
            raise NotFound(f"no process {body['processid']}")
        colony_id = parent.spec.conditions.colony_id
        self._require_member(colony_id, identity)
        spec = FunctionSpec.from_obj(body["spec"])
        child = workflows.make_child(colony_id, spec, self.clock.now_ns(), self.id_source)
        return self.engine.add_child(
            body["processid"], identity, child, body.get("insertbefore", False)).to_obj()

    def _h_subscribe(self, payload, identity):
        body = _fields(payload, {"processid": "str", "timeout": "num"})
        process = self.store.get_process(body["processid"])
        if process is None:
            raise NotFound(f"no process {body['processid']}")
        self._require_member(process.spec.conditions.colony_id, identity)
        return self.engine.subscribe(body["processid"], body["timeout"]).to_obj()

    def _h_get_statistics(self, payload, identity):
        body = _fields(payload, {"colonyid": "str"})
        self._require_member(body["colonyid"], identity)
        counts = self.store.count_processes(body["colonyid"])
        return {
            "colonyid": body["colonyid"],
            "waiting": counts.get("waiting", 0),
            "running": counts.get("running", 0),
            "successful": counts.get("successful", 0),
            "failed": counts.get("failed", 0),
            "executors": len(self.store.list_executors(body["colonyid"])),
        }

    # -- trigger handlers ------------------------------------------------------

    def _h_add_cron(self, payload, identity):
        body = _fields(payload, {"cron": "obj"})
        cron = CronDef.from_obj(body["cron"])
        self._require_member(cron.colony_id, identity)
        cron.cron_id = self._next_id()
        triggers.validate_cron(cron)
        now = self.clock.now_ns()
        if cron.cron_expr:
            cron.next_deadline = triggers.CronSchedule(cron.cron_expr).next_after(now)
        else:
            cron.next_deadline = now + cron.interval * 10**9
        return self.store.add_cron(cron).to_obj()

    def _h_get_crons(self, payload, identity):
        body = _fields(payload, {"colonyid": "str"})
        self._require_member(body["colonyid"], identity)
        return [c.to_obj() for c in self.store.list_crons(body["colonyid"])]

    def _h_add_generator(self, payload, identity):
        body = _fields(payload, {"generator": "obj"})
        gen = GeneratorDef.from_obj(body["generator"])
        self._require_member(gen.colony_id, identity)
        gen.generator_id = self._next_id()
        triggers.validate_generator(gen)
        return self.store.add_generator(gen).to_obj()

    def _h_get_generators(self, payload, identity):
        body = _fields(payload, {"colonyid": "str"})
        self._require_member(body["colonyid"], identity)
        return [g.to_obj() for g in self.store.list_generators(body["colonyid"])]

    def _h_pack(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "generatorid": "str", "payload": "any"})
        self._require_member(body["colonyid"], identity)
        gen = self.store.get_generator(body["generatorid"])
        if gen is None or gen.colony_id != body["colonyid"]:
            from .errors import UnknownGenerator
            raise UnknownGenerator(f"no generator {body['generatorid']}")
        if len(canonical_json(body["payload"])) > _MAX_PACK_BYTES:
            raise InvalidSpec("pack payload exceeds 1 MiB")
        self.store.add_pack(body["generatorid"], body["payload"], self.clock.now_ns())
        count, _, _ = self.store.pack_stats(body["generatorid"])
        return {"ok": True, "pending": count}

    # -- fs handlers -------------------------------------------------------------

    def _h_add_file(self, payload, identity):
        body = _fields(payload, {"file": "obj"})
        meta = FileMeta.from_obj(body["file"])
        self._require_member(meta.colony_id, identity)
        meta.file_id = self._next_id()
        return self.catalog.add_file(meta).to_obj()

    def _h_get_file(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "fileid": "str"})
        self._require_member(body["colonyid"], identity)
        meta = self.store.get_file(body["fileid"])
        if meta is None or meta.colony_id != body["colonyid"]:
            raise NotFound(f"no file {body['fileid']}")
        return meta.to_obj()

    def _h_get_files(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "label": "str"}, {"name": "str"})
        self._require_member(body["colonyid"], identity)
        if "name" in body:
            metas = self.catalog.revisions(body["colonyid"], body["label"], body["name"])
        else:
            metas = self.catalog.list_files(body["colonyid"], body["label"])
        return [m.to_obj() for m in metas]

    def _h_remove_file(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "label": "str", "name": "str"})
        self._require_member(body["colonyid"], identity)
        revisions = self.catalog.remove_file(body["colonyid"], body["label"], body["name"])
        return {"ok": True, "revisions": revisions}

    def _h_create_snapshot(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "label": "str"})
        self._require_member(body["colonyid"], identity)
        snap = self.store.create_snapshot(
            self._next_id(), body["colonyid"], normalize_label(body["label"]),
            self.clock.now_ns())
        return snap.to_obj()

    def _h_get_snapshot(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "snapshotid": "str"})
        self._require_member(body["colonyid"], identity)
        snap = self.store.get_snapshot(body["snapshotid"])
        if snap is None or snap.colony_id != body["colonyid"]:
            raise NotFound(f"no snapshot {body['snapshotid']}")
        return snap.to_obj()

    def _h_get_snapshots(self, payload, identity):
        body = _fields(payload, {"colonyid": "str"})
        self._require_member(body["colonyid"], identity)
        return [s.to_obj() for s in self.store.list_snapshots(body["colonyid"])]

    def _h_remove_snapshot(self, payload, identity):
        body = _fields(payload, {"colonyid": "str", "snapshotid": "str"})
        self._require_member(body["colonyid"], identity)
        snap = self.store.get_snapshot(body["snapshotid"])
        if snap is None or snap.colony_id != body["colonyid"]:
            raise NotFound(f"no snapshot {body['snapshotid']}")
        self.store.remove_snapshot(body["snapshotid"])
        return {"ok": True}

    # -- HTTP layer -----------------------------------------------------------

    def _forward_to_leader(self, raw: bytes, timeout_s: float) -> tuple:
        leader = self.node.leader_hint
        url = self.config.peer_url(leader) if leader else None
        if url is None:
            raise LeaderUnknown("no elected leader to forward to")
        import requests

        try:
            resp = requests.post(url.rstrip("/") + "/api", data=raw,
                                 headers={"Content-Type": "application/json"},
                                 timeout=timeout_s + 10)
        except requests.RequestException as exc:
            raise LeaderUnknown(f"leader unreachable: {exc}") from None
        try:
            return resp.status_code, resp.json()
        except ValueError:
            raise LeaderUnknown("leader returned a non-JSON response") from None

    def handle_api_request(self, raw: bytes) -> tuple:
        """HTTP-facing entry: assigns on a follower are forwarded to the
        leader so claims stay serialized through one node per term."""
        if self.config.peers and not self.node.is_leader():
            try:
                probe = json.loads(raw.decode("utf-8"))
            except Exception:
                probe = None
            if isinstance(probe, dict) and probe.get("payloadtype") == "assign":
                try:
                    return self._forward_to_leader(raw, timeout_s=60)
                except BrokerError as exc:
                    return exc.http_status, exc.to_obj()
        return self.handle_envelope(raw)

    def _send_cluster_messages(self, outgoing: list) -> None:
        import requests

        for dest, msg in outgoing:
            url = self.config.peer_url(dest)
            if url is None:
                continue

            def post(u=url, m=msg):
                try:
                    requests.post(u.rstrip("/") + "/cluster", json=m, timeout=2)
                except requests.RequestException:
                    pass

            threading.Thread(target=post, daemon=True).start()

    def handle_cluster_message(self, msg: dict) -> dict:
        outgoing = self.node.on_message(self.clock.now_ns(), msg)
        self._send_cluster_messages(outgoing)
        return self.node.status()

    def health(self) -> dict:
        status = self.node.status()
        status["status"] = "ok"
        return status

    def start(self) -> None:
        """Serve HTTP and run the background loops until stop()."""
        server = self

        class Handler(BaseHTTPRequestHandler):
            protocol_version = "HTTP/1.1"

            def _reply(self, status: int, obj) -> None:
                body = canonical_json(obj)
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def do_GET(self):
                if self.path == "/health":
                    self._reply(200, server.health())
                else:
                    self._reply(404, {"error": {"code": "not-found",
                                                "message": "unknown path"}})

            def do_POST(self):
                length = int(self.headers.get("Content-Length", "0"))
                raw = self.rfile.read(length)
                if self.path == "/api":
                    status, obj = server.handle_api_request(raw)
                    self._reply(status, obj)
                elif self.path == "/cluster":
                    try:
                        msg = json.loads(raw.decode("utf-8"))
                    except Exception:
                        self._reply(400, {"error": {"code": "malformed-envelope",
                                                    "message": "not JSON"}})
                        return
                    self._reply(200, server.handle_cluster_message(msg))
                else:
                    self._reply(404, {"error": {"code": "not-found",
                                                "message": "unknown path"}})

            def log_message(self, fmt, *args):
                pass  # quiet; the audit table is the log that matters

        self._httpd = ThreadingHTTPServer((self.config.host, self.config.port), Handler)
        self._httpd.daemon_threads = True
        self.config.port = self._httpd.server_address[1]  # resolves port 0

        if self.config.peers:
            self._send_cluster_messages(self.node.start(self.clock.now_ns()))

        def serve():
            self._httpd.serve_forever(poll_interval=0.05)

        def pump():
            last_duties = 0.0
            import time
            while not self._stopping.wait(0.025):
                now = self.clock.now_ns()
                self._send_cluster_messages(self.node.on_tick(now))
                if time.monotonic() - last_duties >= self.config.scan_interval_s:
                    last_duties = time.monotonic()
                    self.tick()

        for target in (serve, pump):
            t = threading.Thread(target=target, daemon=True)
            t.start()
            self._threads.append(t)

    def stop(self) -> None:
        self._stopping.set()
        if self._httpd is not None:
            self._httpd.shutdown()
            self._httpd.server_close()
        for t in self._threads:
            t.join(timeout=5)
        self.store.close()

    @property
    def url(self) -> str:
        return f"http://{self.config.host}:{self.config.port}"
