"""Client bindings over the signed-envelope API.

Two transports share one surface: HttpTransport speaks to a running
server over HTTP; DirectTransport calls a server object in-process,
which keeps protocol-level tests free of sockets. Server-side errors
come back as the matching typed exception either way.
"""

from __future__ import annotations

import time

from .clock import Clock, SystemClock
from .errors import BrokerError, from_code
from .model import (
    Colony,
    CronDef,
    ExecutorRecord,
    FileMeta,
    GeneratorDef,
    Process,
    Snapshot,
    canonical_json,
)
from .rpc import sign_envelope


class HttpTransport:
    def __init__(self, url: str, timeout_s: float = 30.0):
        self.url = url.rstrip("/")
        self.timeout_s = timeout_s

    def post(self, envelope: dict, timeout_s: float | None = None) -> tuple:
        import requests

        resp = requests.post(
            self.url + "/api", data=canonical_json(envelope),
            headers={"Content-Type": "application/json"},
            timeout=(timeout_s or self.timeout_s) + 10,
        )
        return resp.status_code, resp.json()

    def health(self) -> dict:
        import requests

        return requests.get(self.url + "/health", timeout=5).json()


class DirectTransport:
    """In-process: drives a ColonyServer without a socket."""

    def __init__(self, server):
        self.server = server

    def post(self, envelope: dict, timeout_s: float | None = None) -> tuple:
        return self.server.handle_api_request(canonical_json(envelope))

    def health(self) -> dict:
        return self.server.health()


class ColonyClient:
    def __init__(self, target, private_key: str, clock: Clock | None = None,
                 retries: int = 0):
        """target: a server URL string or an object with handle_api_request."""
        if isinstance(target, str):
            self.transport = HttpTransport(target)
        elif hasattr(target, "post"):
            self.transport = target
        else:
            self.transport = DirectTransport(target)
        self.private_key = private_key
        self.clock = clock or SystemClock()
        self.retries = retries

    def call(self, payload_type: str, fields: dict, timeout_s: float | None = None):
        envelope = sign_envelope(payload_type, fields, self.private_key,
                                 self.clock.now_ns())
        attempt = 0
        while True:
            try:
                status, body = self.transport.post(envelope, timeout_s=timeout_s)
            except Exception:
                if attempt >= self.retries:
                    raise
                attempt += 1
                time.sleep(min(0.2 * attempt, 2.0))
                continue
            if status == 200:
                return body
            error = (body or {}).get("error", {}) if isinstance(body, dict) else {}
            exc = from_code(error.get("code", "storage-failure"),
                            error.get("message", f"HTTP {status}"))
            if isinstance(exc, BrokerError) and status == 503 and attempt < self.retries:
                attempt += 1  # no leader yet; retry
                time.sleep(min(0.2 * attempt, 2.0))
                continue
            raise exc

    # -- colonies / executors -------------------------------------------------

    def add_colony(self, colony_id: str, name: str) -> Colony:
        return Colony.from_obj(self.call(
            "add_colony", {"colony": {"colonyid": colony_id, "name": name}}))

    def get_colonies(self) -> list:
        return [Colony.from_obj(c) for c in self.call("get_colonies", {})]

    def get_colony(self, colony_id: str = "", name: str = "") -> Colony:
        body = {"colonyid": colony_id} if colony_id else {"colonyname": name}
        return Colony.from_obj(self.call("get_colony", body))

    def resolve_colony(self, ref: str) -> str:
        """Colony id for a name, or the id itself when given one."""
        from .crypto import is_identity

        if is_identity(ref):
            return ref
        return self.get_colony(name=ref).colony_id

    def add_executor(self, executor_id: str, name: str, executor_type: str,
                     colony_id: str) -> ExecutorRecord:
        return ExecutorRecord.from_obj(self.call("add_executor", {"executor": {
            "executorid": executor_id, "executorname": name,
            "executortype": executor_type, "colonyid": colony_id}}))

    def approve_executor(self, colony_id: str, name: str) -> None:
        self.call("approve_executor", {"colonyid": colony_id, "executorname": name})

    def remove_executor(self, colony_id: str, name: str) -> None:
        self.call("remove_executor", {"colonyid": colony_id, "executorname": name})

    def get_executors(self, colony_id: str) -> list:
        return [ExecutorRecord.from_obj(e)
                for e in self.call("get_executors", {"colonyid": colony_id})]

    def add_function(self, colony_id: str, executor_name: str, func_name: str) -> None:
        self.call("add_function", {"colonyid": colony_id,
                                   "executorname": executor_name,
                                   "funcname": func_name})

    # -- processes ---------------------------------------------------------------

    def submit(self, spec_obj: dict) -> Process:
        return Process.from_obj(self.call("submit_funcspec", {"spec": spec_obj}))

    def submit_workflow(self, colony_id: str, workflow_obj: list) -> dict:
        return self.call("submit_workflow",
                         {"colonyid": colony_id, "workflow": workflow_obj})

    def get_workflow(self, colony_id: str, workflow_id: str) -> dict:
        return self.call("get_workflow",
                         {"colonyid": colony_id, "workflowid": workflow_id})

    def assign(self, colony_id: str, timeout_s: float) -> Process | None:
        body = self.call("assign", {"colonyid": colony_id, "timeout": timeout_s},
                         timeout_s=timeout_s)
        return None if body["process"] is None else Process.from_obj(body["process"])

    def close(self, process_id: str, successful: bool, output: list | None = None,
              errors: list | None = None) -> Process:
        fields = {"processid": process_id, "successful": successful}
        if output is not None:
            fields["output"] = output
        if errors is not None:
            fields["errors"] = errors
        return Process.from_obj(self.call("close", fields))

    def get_process(self, process_id: str) -> Process:
        return Process.from_obj(self.call("get_process", {"processid": process_id}))

    def get_processes(self, colony_id: str, state: str | None = None,
                      count: int | None = None) -> list:
        fields: dict = {"colonyid": colony_id}
        if state is not None:
            fields["state"] = state
        if count is not None:
            fields["count"] = count
        return [Process.from_obj(p) for p in self.call("get_processes", fields)]

    def add_child(self, process_id: str, spec_obj: dict,
                  insert_before: bool = False) -> Process:
        return Process.from_obj(self.call("add_child", {
            "processid": process_id, "spec": spec_obj, "insertbefore": insert_before}))

    def subscribe(self, process_id: str, timeout_s: float) -> Process:
        return Process.from_obj(self.call(
            "subscribe", {"processid": process_id, "timeout": timeout_s},
            timeout_s=timeout_s))

    def get_statistics(self, colony_id: str) -> dict:
        return self.call("get_statistics", {"colonyid": colony_id})

    # -- triggers -------------------------------------------------------------

    def add_cron(self, colony_id: str, name: str, workflow_obj: list,
                 interval: int = 0, cron_expr: str = "") -> CronDef:
        return CronDef.from_obj(self.call("add_cron", {"cron": {
            "colonyid": colony_id, "name": name, "interval": interval,
            "cronexpr": cron_expr, "workflow": workflow_obj}}))

    def get_crons(self, colony_id: str) -> list:
        return [CronDef.from_obj(c) for c in self.call("get_crons", {"colonyid": colony_id})]

    def add_generator(self, colony_id: str, name: str, workflow_obj: list,
                      trigger_count: int, timeout: int = 0) -> GeneratorDef:
        return GeneratorDef.from_obj(self.call("add_generator", {"generator": {
            "colonyid": colony_id, "name": name, "triggercount": trigger_count,
            "timeout": timeout, "workflow": workflow_obj}}))

    def get_generators(self, colony_id: str) -> list:
        return [GeneratorDef.from_obj(g)
                for g in self.call("get_generators", {"colonyid": colony_id})]

    def pack(self, colony_id: str, generator_id: str, payload) -> dict:
        return self.call("pack", {"colonyid": colony_id,
                                  "generatorid": generator_id, "payload": payload})

    # -- fs ------------------------------------------------------------------------

    def add_file(self, file_obj: dict) -> FileMeta:
        return FileMeta.from_obj(self.call("add_file", {"file": file_obj}))

    def get_file(self, colony_id: str, file_id: str) -> FileMeta:
        return FileMeta.from_obj(self.call(
            "get_file", {"colonyid": colony_id, "fileid": file_id}))

    def get_files(self, colony_id: str, label: str, name: str | None = None) -> list:
        fields = {"colonyid": colony_id, "label": label}
        if name is not None:
            fields["name"] = name
        return [FileMeta.from_obj(f) for f in self.call("get_files", fields)]

    def remove_file(self, colony_id: str, label: str, name: str) -> dict:
        return self.call("remove_file",
                         {"colonyid": colony_id, "label": label, "name": name})

    def create_snapshot(self, colony_id: str, label: str) -> Snapshot:
        return Snapshot.from_obj(self.call(
            "create_snapshot", {"colonyid": colony_id, "label": label}))

    def get_snapshot(self, colony_id: str, snapshot_id: str) -> Snapshot:
        return Snapshot.from_obj(self.call(
            "get_snapshot", {"colonyid": colony_id, "snapshotid": snapshot_id}))

    def get_snapshots(self, colony_id: str) -> list:
        return [Snapshot.from_obj(s)
                for s in self.call("get_snapshots", {"colonyid": colony_id})]

    def remove_snapshot(self, colony_id: str, snapshot_id: str) -> None:
        self.call("remove_snapshot",
                  {"colonyid": colony_id, "snapshotid": snapshot_id})

    def health(self) -> dict:
        return self.transport.health()
