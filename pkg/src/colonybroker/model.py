"""Shared domain vocabulary: function specs, processes, workflows,
colonies, executors, triggers, and file metadata.

Types are plain immutable-ish values; all mutation happens through the
store's transactions. Wire serialization is canonical JSON (sorted keys,
no insignificant whitespace, UTF-8) with the exact field names clients
send: "funcname", "maxexectime", "maxretries", "maxwaittime",
"conditions", "executortype", "nodename", "dependencies", "fs", "mount",
"snapshots". Parsing is strict — unknown fields are rejected so client
drift surfaces immediately.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

from .errors import (
    CycleDetected,
    DuplicateNodeName,
    InvalidSpec,
    UnknownDependency,
)

# Process states
WAITING = "waiting"
RUNNING = "running"
SUCCESSFUL = "successful"
FAILED = "failed"
STATES = (WAITING, RUNNING, SUCCESSFUL, FAILED)

# Legal state transitions; the reaper reset is the only way back to the queue.
ALLOWED_TRANSITIONS = {
    (WAITING, RUNNING),
    (RUNNING, SUCCESSFUL),
    (RUNNING, FAILED),
    (RUNNING, WAITING),
    (WAITING, FAILED),  # max_wait_time expiry / upstream failure
}

NS_PER_DAY = 10**9 * 60 * 60 * 24


def canonical_json(obj) -> bytes:
    """Byte-stable JSON: sorted keys, no spaces, raw UTF-8."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False).encode("utf-8")


def compute_priority_time(submission_time: int, priority: int) -> int:
    """Queue sort key: one day of nanoseconds of head start per priority level.

    Clamped at zero for pathologically large priorities.
    """
    if submission_time <= 0:
        raise InvalidSpec("submission_time must be positive")
    if priority < 0:
        raise InvalidSpec("priority must be >= 0")
    value = submission_time - priority * NS_PER_DAY
    return value if value > 0 else 0


def _expect_keys(obj: dict, allowed: set, required: set, what: str) -> None:
    if not isinstance(obj, dict):
        raise InvalidSpec(f"{what} must be an object")
    unknown = set(obj) - allowed
    if unknown:
        raise InvalidSpec(f"unknown field(s) in {what}: {', '.join(sorted(unknown))}")
    missing = required - set(obj)
    if missing:
        raise InvalidSpec(f"missing field(s) in {what}: {', '.join(sorted(missing))}")


def _check_str(value, what: str, allow_empty: bool = False) -> str:
    if not isinstance(value, str) or (not allow_empty and not value):
        raise InvalidSpec(f"{what} must be a non-empty string")
    return value


def _check_int(value, what: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise InvalidSpec(f"{what} must be an integer")
    return value


# Resource hints are opaque pass-through data; the broker stores and
# returns them but never interprets them.
_RESOURCE_HINT_KEYS = {"nodes", "processes-per-node", "mem", "cpu", "walltime", "gpu"}


@dataclass
class Conditions:
    colony_id: str = ""
    executor_type: str = ""
    executor_names: list = field(default_factory=list)
    dependencies: list = field(default_factory=list)
    resources: dict = field(default_factory=dict)

    def to_obj(self) -> dict:
        obj = {
            "colonyid": self.colony_id,
            "executortype": self.executor_type,
            "executornames": list(self.executor_names),
            "dependencies": list(self.dependencies),
        }
        obj.update(self.resources)
        return obj

    @classmethod
    def from_obj(cls, obj) -> "Conditions":
        allowed = {"colonyid", "executortype", "executornames", "dependencies"} | _RESOURCE_HINT_KEYS
        _expect_keys(obj, allowed, {"executortype"}, "conditions")
        names = obj.get("executornames", [])
        deps = obj.get("dependencies", [])
        if not isinstance(names, list) or not all(isinstance(x, str) for x in names):
            raise InvalidSpec("executornames must be a list of strings")
        if not isinstance(deps, list) or not all(isinstance(x, str) for x in deps):
            raise InvalidSpec("dependencies must be a list of strings")
        return cls(
            colony_id=_check_str(obj.get("colonyid", ""), "colonyid", allow_empty=True),
            executor_type=_check_str(obj["executortype"], "executortype"),
            executor_names=list(names),
            dependencies=list(deps),
            resources={k: obj[k] for k in _RESOURCE_HINT_KEYS if k in obj},
        )


@dataclass
class SnapshotMount:
    snapshot_id: str
    label: str
    dir: str
    keep_files: bool = True
    keep_snapshot: bool = True

    def to_obj(self) -> dict:
        return {
            "snapshotid": self.snapshot_id,
            "label": self.label,
            "dir": self.dir,
            "keepfiles": self.keep_files,
            # sic: the established wire spelling
            "keepsnaphot": self.keep_snapshot,
        }

    @classmethod
    def from_obj(cls, obj) -> "SnapshotMount":
        _expect_keys(
            obj,
            {"snapshotid", "label", "dir", "keepfiles", "keepsnaphot"},
            {"snapshotid", "label", "dir"},
            "fs.snapshots entry",
        )
        return cls(
            snapshot_id=_check_str(obj["snapshotid"], "snapshotid"),
            label=_check_str(obj["label"], "label"),
            dir=_check_str(obj["dir"], "dir"),
            keep_files=bool(obj.get("keepfiles", True)),
            keep_snapshot=bool(obj.get("keepsnaphot", True)),
        )


@dataclass
class FsDirectives:
    mount: str
    snapshots: list = field(default_factory=list)  # list[SnapshotMount]
    sync_dirs: list = field(default_factory=list)  # dirs uploaded on close

    def to_obj(self) -> dict:
        return {
            "mount": self.mount,
            "snapshots": [s.to_obj() for s in self.snapshots],
            "syncdirs": list(self.sync_dirs),
        }

    @classmethod
    def from_obj(cls, obj) -> "FsDirectives":
        _expect_keys(obj, {"mount", "snapshots", "syncdirs"}, {"mount"}, "fs")
        snaps = obj.get("snapshots", [])
        if not isinstance(snaps, list):
            raise InvalidSpec("fs.snapshots must be a list")
        dirs = obj.get("syncdirs", [])
        if not isinstance(dirs, list) or not all(isinstance(x, str) for x in dirs):
            raise InvalidSpec("fs.syncdirs must be a list of strings")
        return cls(
            mount=_check_str(obj["mount"], "fs.mount"),
            snapshots=[SnapshotMount.from_obj(s) for s in snaps],
            sync_dirs=list(dirs),
        )


@dataclass
class FunctionSpec:
    func_name: str
    conditions: Conditions
    args: list = field(default_factory=list)
    kwargs: dict = field(default_factory=dict)
    priority: int = 0
    max_wait_time: int = -1  # seconds; -1 = unbounded
    max_exec_time: int = -1  # seconds; -1 = unbounded
    max_retries: int = 0
    node_name: str = ""
    fs: FsDirectives | None = None

    def validate(self) -> None:
        if not self.func_name:
            raise InvalidSpec("funcname must be set")
        if not self.conditions.executor_type:
            raise InvalidSpec("conditions.executortype must be set")
        if self.priority < 0:
            raise InvalidSpec("priority must be >= 0")
        if self.priority > 10:
            raise InvalidSpec("priority is capped at 10")
        if self.max_retries < 0:
            raise InvalidSpec("maxretries must be >= 0")

    def to_obj(self) -> dict:
        obj = {
            "nodename": self.node_name,
            "funcname": self.func_name,
            "args": list(self.args),
            "kwargs": dict(self.kwargs),
            "priority": self.priority,
            "maxwaittime": self.max_wait_time,
            "maxexectime": self.max_exec_time,
            "maxretries": self.max_retries,
            "conditions": self.conditions.to_obj(),
        }
        if self.fs is not None:
            obj["fs"] = self.fs.to_obj()
        return obj

    @classmethod
    def from_obj(cls, obj) -> "FunctionSpec":
        allowed = {
            "nodename", "funcname", "args", "kwargs", "priority",
            "maxwaittime", "maxexectime", "maxretries", "conditions", "fs",
        }
        _expect_keys(obj, allowed, {"funcname", "conditions"}, "function spec")
        args = obj.get("args", [])
        kwargs = obj.get("kwargs", {})
        if not isinstance(args, list):
            raise InvalidSpec("args must be a list")
        if not isinstance(kwargs, dict):
            raise InvalidSpec("kwargs must be an object")
        spec = cls(
            func_name=_check_str(obj["funcname"], "funcname"),
            conditions=Conditions.from_obj(obj["conditions"]),
            args=list(args),
            kwargs=dict(kwargs),
            priority=_check_int(obj.get("priority", 0), "priority"),
            max_wait_time=_check_int(obj.get("maxwaittime", -1), "maxwaittime"),
            max_exec_time=_check_int(obj.get("maxexectime", -1), "maxexectime"),
            max_retries=_check_int(obj.get("maxretries", 0), "maxretries"),
            node_name=_check_str(obj.get("nodename", ""), "nodename", allow_empty=True),
            fs=FsDirectives.from_obj(obj["fs"]) if "fs" in obj else None,
        )
        spec.validate()
        return spec


@dataclass
class Process:
    process_id: str
    spec: FunctionSpec
    state: str = WAITING
    wait_for_parents: bool = False
    assigned_executor: str = ""
    submission_time: int = 0
    priority_time: int = 0
    start_time: int = 0
    end_time: int = 0
    deadline: int = 0  # ns; 0 = none
    wait_deadline: int = 0  # ns; 0 = none
    retries: int = 0
    input: list = field(default_factory=list)
    output: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    parents: list = field(default_factory=list)
    children: list = field(default_factory=list)
    workflow_id: str = ""

    def is_terminal(self) -> bool:
        return self.state in (SUCCESSFUL, FAILED)

    def to_obj(self) -> dict:
        return {
            "processid": self.process_id,
            "spec": self.spec.to_obj(),
            "state": self.state,
            "waitforparents": self.wait_for_parents,
            "assignedexecutorid": self.assigned_executor,
            "submissiontime": self.submission_time,
            "prioritytime": self.priority_time,
            "starttime": self.start_time,
            "endtime": self.end_time,
            "deadline": self.deadline,
            "waitdeadline": self.wait_deadline,
            "retries": self.retries,
            "input": list(self.input),
            "output": list(self.output),
            "errors": list(self.errors),
            "parents": list(self.parents),
            "children": list(self.children),
            "workflowid": self.workflow_id,
        }

    @classmethod
    def from_obj(cls, obj) -> "Process":
        return cls(
            process_id=obj["processid"],
            spec=FunctionSpec.from_obj(obj["spec"]),
            state=obj["state"],
            wait_for_parents=obj["waitforparents"],
            assigned_executor=obj.get("assignedexecutorid", ""),
            submission_time=obj.get("submissiontime", 0),
            priority_time=obj.get("prioritytime", 0),
            start_time=obj.get("starttime", 0),
            end_time=obj.get("endtime", 0),
            deadline=obj.get("deadline", 0),
            wait_deadline=obj.get("waitdeadline", 0),
            retries=obj.get("retries", 0),
            input=list(obj.get("input", [])),
            output=list(obj.get("output", [])),
            errors=list(obj.get("errors", [])),
            parents=list(obj.get("parents", [])),
            children=list(obj.get("children", [])),
            workflow_id=obj.get("workflowid", ""),
        )


@dataclass
class WorkflowGraph:
    """A DAG of named node specs; edges come from conditions.dependencies."""

    nodes: list  # list[FunctionSpec], each with node_name set

    def to_obj(self) -> list:
        return [spec.to_obj() for spec in self.nodes]

    @classmethod
    def from_obj(cls, obj) -> "WorkflowGraph":
        if not isinstance(obj, list):
            raise InvalidSpec("a workflow is a JSON list of node specs")
        graph = cls(nodes=[FunctionSpec.from_obj(entry) for entry in obj])
        for spec in graph.nodes:
            if not spec.node_name:
                raise InvalidSpec("every workflow node needs a nodename")
        return graph

    def node_names(self) -> list:
        return [spec.node_name for spec in self.nodes]


def validate_workflow(graph: WorkflowGraph) -> None:
    """Accepts iff node names are unique, every dependency resolves, and
    the graph is acyclic (Kahn's algorithm). Raises a typed error naming
    the offending node or one cycle otherwise.
    """
    if not graph.nodes:
        raise InvalidSpec("workflow has no nodes")
    names = graph.node_names()
    seen = set()
    for name in names:
        if name in seen:
            raise DuplicateNodeName(f"duplicate node name: {name}")
        seen.add(name)
    deps = {spec.node_name: list(spec.conditions.dependencies) for spec in graph.nodes}
    for name, wanted in deps.items():
        for dep in wanted:
            if dep not in seen:
                raise UnknownDependency(f"node {name} depends on unknown node {dep}")
            if dep == name:
                raise CycleDetected(f"cycle detected: {name} -> {name}")
    # Kahn's algorithm
    indegree = {name: len(wanted) for name, wanted in deps.items()}
    children: dict[str, list] = {name: [] for name in names}
    for name, wanted in deps.items():
        for dep in wanted:
            children[dep].append(name)
    frontier = [name for name, deg in indegree.items() if deg == 0]
    visited = 0
    while frontier:
        node = frontier.pop()
        visited += 1
        for child in children[node]:
            indegree[child] -= 1
            if indegree[child] == 0:
                frontier.append(child)
    if visited != len(names):
        cycle = _find_cycle(deps, {n for n, d in indegree.items() if d > 0})
        raise CycleDetected("cycle detected: " + " -> ".join(cycle))


def _find_cycle(deps: dict, suspects: set) -> list:
    start = sorted(suspects)[0]
    path = [start]
    seen_at = {start: 0}
    node = start
    while True:
        node = next(d for d in deps[node] if d in suspects)
        if node in seen_at:
            return path[seen_at[node]:] + [node]
        seen_at[node] = len(path)
        path.append(node)


@dataclass
class Colony:
    colony_id: str  # identity of the colony owner's key
    name: str

    def to_obj(self) -> dict:
        return {"colonyid": self.colony_id, "name": self.name}

    @classmethod
    def from_obj(cls, obj) -> "Colony":
        _expect_keys(obj, {"colonyid", "name"}, {"colonyid", "name"}, "colony")
        return cls(colony_id=_check_str(obj["colonyid"], "colonyid"),
                   name=_check_str(obj["name"], "name"))


@dataclass
class ExecutorRecord:
    executor_id: str
    executor_name: str
    executor_type: str
    colony_id: str
    approved: bool = False
    functions: list = field(default_factory=list)
    last_seen: int = 0

    def to_obj(self) -> dict:
        return {
            "executorid": self.executor_id,
            "executorname": self.executor_name,
            "executortype": self.executor_type,
            "colonyid": self.colony_id,
            "approved": self.approved,
            "functions": list(self.functions),
            "lastseen": self.last_seen,
        }

    @classmethod
    def from_obj(cls, obj) -> "ExecutorRecord":
        _expect_keys(
            obj,
            {"executorid", "executorname", "executortype", "colonyid",
             "approved", "functions", "lastseen"},
            {"executorid", "executorname", "executortype", "colonyid"},
            "executor",
        )
        functions = obj.get("functions", [])
        if not isinstance(functions, list) or not all(isinstance(f, str) for f in functions):
            raise InvalidSpec("executor functions must be a list of strings")
        return cls(
            executor_id=_check_str(obj["executorid"], "executorid"),
            executor_name=_check_str(obj["executorname"], "executorname"),
            executor_type=_check_str(obj["executortype"], "executortype"),
            colony_id=_check_str(obj["colonyid"], "colonyid"),
            approved=bool(obj.get("approved", False)),
            functions=list(functions),
            last_seen=_check_int(obj.get("lastseen", 0), "lastseen"),
        )


@dataclass
class CronDef:
    cron_id: str
    colony_id: str
    name: str
    interval: int = 0  # seconds; 0 = use cron_expr
    cron_expr: str = ""
    workflow: WorkflowGraph | None = None
    next_deadline: int = 0
    last_run: int = 0

    def to_obj(self) -> dict:
        return {
            "cronid": self.cron_id,
            "colonyid": self.colony_id,
            "name": self.name,
            "interval": self.interval,
            "cronexpr": self.cron_expr,
            "workflow": self.workflow.to_obj() if self.workflow else [],
            "nextdeadline": self.next_deadline,
            "lastrun": self.last_run,
        }

    @classmethod
    def from_obj(cls, obj) -> "CronDef":
        _expect_keys(
            obj,
            {"cronid", "colonyid", "name", "interval", "cronexpr", "workflow",
             "nextdeadline", "lastrun"},
            {"colonyid", "name", "workflow"},
            "cron",
        )
        return cls(
            cron_id=_check_str(obj.get("cronid", ""), "cronid", allow_empty=True),
            colony_id=_check_str(obj["colonyid"], "colonyid"),
            name=_check_str(obj["name"], "name"),
            interval=_check_int(obj.get("interval", 0), "interval"),
            cron_expr=_check_str(obj.get("cronexpr", ""), "cronexpr", allow_empty=True),
            workflow=WorkflowGraph.from_obj(obj["workflow"]),
            next_deadline=_check_int(obj.get("nextdeadline", 0), "nextdeadline"),
            last_run=_check_int(obj.get("lastrun", 0), "lastrun"),
        )


@dataclass
class GeneratorDef:
    generator_id: str
    colony_id: str
    name: str
    trigger_count: int
    timeout: int = 0  # seconds; 0 = disabled
    workflow: WorkflowGraph | None = None

    def to_obj(self) -> dict:
        return {
            "generatorid": self.generator_id,
            "colonyid": self.colony_id,
            "name": self.name,
            "triggercount": self.trigger_count,
            "timeout": self.timeout,
            "workflow": self.workflow.to_obj() if self.workflow else [],
        }

    @classmethod
    def from_obj(cls, obj) -> "GeneratorDef":
        _expect_keys(
            obj,
            {"generatorid", "colonyid", "name", "triggercount", "timeout", "workflow"},
            {"colonyid", "name", "triggercount", "workflow"},
            "generator",
        )
        return cls(
            generator_id=_check_str(obj.get("generatorid", ""), "generatorid", allow_empty=True),
            colony_id=_check_str(obj["colonyid"], "colonyid"),
            name=_check_str(obj["name"], "name"),
            trigger_count=_check_int(obj["triggercount"], "triggercount"),
            timeout=_check_int(obj.get("timeout", 0), "timeout"),
            workflow=WorkflowGraph.from_obj(obj["workflow"]),
        )


@dataclass
class FileMeta:
    file_id: str
    colony_id: str
    label: str  # logical directory path, absolute, slash-separated
    name: str
    checksum: str  # SHA3-256 of content
    size: int
    storage_ref: dict  # {"protocol", "address", "key"}
    credentials_ref: str = ""
    added: int = 0
    revision: int = 1
    deleted: bool = False

    def to_obj(self) -> dict:
        return {
            "fileid": self.file_id,
            "colonyid": self.colony_id,
            "label": self.label,
            "name": self.name,
            "checksum": self.checksum,
            "size": self.size,
            "storageref": dict(self.storage_ref),
            "credentialsref": self.credentials_ref,
            "added": self.added,
            "revision": self.revision,
        }

    @classmethod
    def from_obj(cls, obj) -> "FileMeta":
        _expect_keys(
            obj,
            {"fileid", "colonyid", "label", "name", "checksum", "size",
             "storageref", "credentialsref", "added", "revision"},
            {"colonyid", "label", "name", "checksum", "size", "storageref"},
            "file",
        )
        storage_ref = obj["storageref"]
        if not isinstance(storage_ref, dict):
            raise InvalidSpec("storageref must be an object")
        return cls(
            file_id=_check_str(obj.get("fileid", ""), "fileid", allow_empty=True),
            colony_id=_check_str(obj["colonyid"], "colonyid"),
            label=_check_str(obj["label"], "label"),
            name=_check_str(obj["name"], "name"),
            checksum=_check_str(obj["checksum"], "checksum"),
            size=_check_int(obj["size"], "size"),
            storage_ref=dict(storage_ref),
            credentials_ref=_check_str(obj.get("credentialsref", ""), "credentialsref",
                                       allow_empty=True),
            added=_check_int(obj.get("added", 0), "added"),
            revision=_check_int(obj.get("revision", 1), "revision"),
        )


@dataclass
class Snapshot:
    snapshot_id: str
    colony_id: str
    label: str
    created: int
    files: list = field(default_factory=list)  # [(file_id, revision)]

    def to_obj(self) -> dict:
        return {
            "snapshotid": self.snapshot_id,
            "colonyid": self.colony_id,
            "label": self.label,
            "created": self.created,
            "files": [{"fileid": f, "revision": r} for f, r in self.files],
        }

    @classmethod
    def from_obj(cls, obj) -> "Snapshot":
        _expect_keys(
            obj,
            {"snapshotid", "colonyid", "label", "created", "files"},
            {"snapshotid", "colonyid", "label", "created", "files"},
            "snapshot",
        )
        files = obj["files"]
        if not isinstance(files, list):
            raise InvalidSpec("snapshot files must be a list")
        return cls(
            snapshot_id=_check_str(obj["snapshotid"], "snapshotid"),
            colony_id=_check_str(obj["colonyid"], "colonyid"),
            label=_check_str(obj["label"], "label"),
            created=_check_int(obj["created"], "created"),
            files=[(f["fileid"], f["revision"]) for f in files],
        )
