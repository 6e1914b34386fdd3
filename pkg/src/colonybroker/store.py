"""The transactional store: simultaneously the queue, the process table,
and every auxiliary table. The single source of truth that lets server
replicas stay stateless — no information survives a request in server
memory, so any replica can serve any request against this store.

Backed by embedded SQLite (WAL journal). Every mutation commits before
the caller sees a response. The claim path is a single atomic
compare-and-set transaction and additionally honors term fencing: claims
stamped with an election term older than the highest observed are
rejected, which neutralizes deposed leaders racing a new one.
"""

from __future__ import annotations

import json
import sqlite3
import threading

from . import workflows
from .errors import (
    DuplicateId,
    NotAssignee,
    NotFound,
    NotRunning,
    StaleLeader,
    StorageFailure,
)
from .model import (
    FAILED,
    RUNNING,
    SUCCESSFUL,
    WAITING,
    Colony,
    CronDef,
    ExecutorRecord,
    FileMeta,
    FunctionSpec,
    GeneratorDef,
    Process,
    Snapshot,
    WorkflowGraph,
    canonical_json,
    compute_priority_time,
)

_SCHEMA_VERSION = 1

# Forward-only migrations; index = source schema version.
_MIGRATIONS = [
    """
    CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value TEXT NOT NULL);
    CREATE TABLE IF NOT EXISTS fence (id INTEGER PRIMARY KEY CHECK (id = 0), max_term INTEGER NOT NULL);
    INSERT OR IGNORE INTO fence (id, max_term) VALUES (0, 0);
    CREATE TABLE IF NOT EXISTS colonies (
        colony_id TEXT PRIMARY KEY,
        name TEXT NOT NULL UNIQUE
    );
    CREATE TABLE IF NOT EXISTS executors (
        executor_id TEXT PRIMARY KEY,
        colony_id TEXT NOT NULL,
        executor_name TEXT NOT NULL,
        executor_type TEXT NOT NULL,
        approved INTEGER NOT NULL DEFAULT 0,
        functions TEXT NOT NULL DEFAULT '[]',
        last_seen INTEGER NOT NULL DEFAULT 0,
        UNIQUE (colony_id, executor_name)
    );
    CREATE TABLE IF NOT EXISTS processes (
        process_id TEXT PRIMARY KEY,
        colony_id TEXT NOT NULL,
        executor_type TEXT NOT NULL,
        executor_names TEXT NOT NULL DEFAULT '[]',
        state TEXT NOT NULL,
        wait_for_parents INTEGER NOT NULL DEFAULT 0,
        assigned_executor TEXT NOT NULL DEFAULT '',
        submission_time INTEGER NOT NULL,
        priority_time INTEGER NOT NULL,
        start_time INTEGER NOT NULL DEFAULT 0,
        end_time INTEGER NOT NULL DEFAULT 0,
        deadline INTEGER NOT NULL DEFAULT 0,
        wait_deadline INTEGER NOT NULL DEFAULT 0,
        retries INTEGER NOT NULL DEFAULT 0,
        max_retries INTEGER NOT NULL DEFAULT 0,
        max_exec_time INTEGER NOT NULL DEFAULT -1,
        max_wait_time INTEGER NOT NULL DEFAULT -1,
        spec TEXT NOT NULL,
        errors TEXT NOT NULL DEFAULT '[]',
        parents TEXT NOT NULL DEFAULT '[]',
        children TEXT NOT NULL DEFAULT '[]',
        workflow_id TEXT NOT NULL DEFAULT '',
        node_name TEXT NOT NULL DEFAULT ''
    );
    CREATE INDEX IF NOT EXISTS idx_queue ON processes (colony_id, executor_type, state, wait_for_parents, priority_time);
    CREATE INDEX IF NOT EXISTS idx_deadlines ON processes (state, deadline);
    CREATE INDEX IF NOT EXISTS idx_workflow ON processes (workflow_id);
    CREATE TABLE IF NOT EXISTS dependencies (
        process_id TEXT PRIMARY KEY,
        workflow_id TEXT NOT NULL,
        node_name TEXT NOT NULL,
        depends_on TEXT NOT NULL DEFAULT '[]'
    );
    CREATE TABLE IF NOT EXISTS io (
        process_id TEXT PRIMARY KEY,
        input TEXT NOT NULL DEFAULT '[]',
        output TEXT NOT NULL DEFAULT '[]'
    );
    CREATE TABLE IF NOT EXISTS crons (
        cron_id TEXT PRIMARY KEY,
        colony_id TEXT NOT NULL,
        name TEXT NOT NULL,
        interval INTEGER NOT NULL DEFAULT 0,
        cron_expr TEXT NOT NULL DEFAULT '',
        workflow TEXT NOT NULL,
        next_deadline INTEGER NOT NULL,
        last_run INTEGER NOT NULL DEFAULT 0
    );
    CREATE TABLE IF NOT EXISTS generators (
        generator_id TEXT PRIMARY KEY,
        colony_id TEXT NOT NULL,
        name TEXT NOT NULL,
        trigger_count INTEGER NOT NULL,
        timeout INTEGER NOT NULL DEFAULT 0,
        workflow TEXT NOT NULL
    );
    CREATE TABLE IF NOT EXISTS packs (
        seq INTEGER PRIMARY KEY AUTOINCREMENT,
        generator_id TEXT NOT NULL,
        payload TEXT NOT NULL,
        arrival INTEGER NOT NULL,
        consumed INTEGER NOT NULL DEFAULT 0
    );
    CREATE INDEX IF NOT EXISTS idx_packs ON packs (generator_id, consumed, seq);
    CREATE TABLE IF NOT EXISTS files (
        file_id TEXT PRIMARY KEY,
        colony_id TEXT NOT NULL,
        label TEXT NOT NULL,
        name TEXT NOT NULL,
        checksum TEXT NOT NULL,
        size INTEGER NOT NULL,
        storage_ref TEXT NOT NULL,
        credentials_ref TEXT NOT NULL DEFAULT '',
        added INTEGER NOT NULL,
        revision INTEGER NOT NULL,
        deleted INTEGER NOT NULL DEFAULT 0,
        UNIQUE (colony_id, label, name, revision)
    );
    CREATE TRIGGER IF NOT EXISTS files_immutable BEFORE UPDATE OF
        file_id, colony_id, label, name, checksum, size, storage_ref,
        credentials_ref, added, revision
    ON files BEGIN
        SELECT RAISE(ABORT, 'file revisions are immutable');
    END;
    CREATE TABLE IF NOT EXISTS snapshots (
        snapshot_id TEXT PRIMARY KEY,
        colony_id TEXT NOT NULL,
        label TEXT NOT NULL,
        created INTEGER NOT NULL
    );
    CREATE TRIGGER IF NOT EXISTS snapshots_immutable BEFORE UPDATE ON snapshots BEGIN
        SELECT RAISE(ABORT, 'snapshots are immutable');
    END;
    CREATE TABLE IF NOT EXISTS snapshot_files (
        snapshot_id TEXT NOT NULL,
        file_id TEXT NOT NULL,
        revision INTEGER NOT NULL,
        label TEXT NOT NULL,
        name TEXT NOT NULL,
        PRIMARY KEY (snapshot_id, file_id)
    );
    CREATE TRIGGER IF NOT EXISTS snapshot_files_immutable BEFORE UPDATE ON snapshot_files BEGIN
        SELECT RAISE(ABORT, 'snapshot membership is immutable');
    END;
    CREATE TABLE IF NOT EXISTS audit (
        seq INTEGER PRIMARY KEY AUTOINCREMENT,
        time INTEGER NOT NULL,
        process_id TEXT NOT NULL DEFAULT '',
        action TEXT NOT NULL,
        details TEXT NOT NULL DEFAULT '{}'
    );
    """,
]

_TABLES = [
    "meta", "fence", "colonies", "executors", "processes", "dependencies",
    "io", "crons", "generators", "packs", "files", "snapshots",
    "snapshot_files", "audit",
]


def _loads(text):
    return json.loads(text)


def _text(obj) -> str:
    return canonical_json(obj).decode("utf-8")


class Store:
    """Shared-access, internally synchronized. All operations are safe for
    concurrent callers; select_and_claim additionally relies on the
    cluster-level single-assigner contract to avoid wasted cross-replica
    contention (it stays correct without it — SQLite serializes writers
    and the conditional update admits one winner).
    """

    def __init__(self, path: str):
        self._path = str(path)
        self._memory = self._path == ":memory:"
        self._lock = threading.RLock()
        self._local = threading.local()
        self._fault: Exception | None = None
        if self._memory:
            self._shared_conn = self._connect()
        self._migrate()

    # -- connections ------------------------------------------------------

    def _connect(self) -> sqlite3.Connection:
        conn = sqlite3.connect(self._path, timeout=30.0, isolation_level=None,
                               check_same_thread=False)
        conn.execute("PRAGMA busy_timeout=30000")
        if not self._memory:
            conn.execute("PRAGMA journal_mode=WAL")
            conn.execute("PRAGMA synchronous=NORMAL")
        conn.execute("PRAGMA foreign_keys=ON")
        return conn

    def _conn(self) -> sqlite3.Connection:
        if self._memory:
            return self._shared_conn
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = self._connect()
            self._local.conn = conn
        return conn

    class _Tx:
        def __init__(self, store: "Store", write: bool):
            self.store = store
            self.write = write

        def __enter__(self):
            if self.store._fault is not None:
                raise StorageFailure(str(self.store._fault))
            if self.store._memory:
                self.store._lock.acquire()
            self.conn = self.store._conn()
            try:
                self.conn.execute("BEGIN IMMEDIATE" if self.write else "BEGIN")
            except sqlite3.Error as exc:
                if self.store._memory:
                    self.store._lock.release()
                raise StorageFailure(str(exc)) from exc
            return self.conn.cursor()

        def __exit__(self, exc_type, exc, tb):
            try:
                if exc_type is None:
                    self.conn.execute("COMMIT")
                else:
                    self.conn.execute("ROLLBACK")
            except sqlite3.Error:
                if exc_type is None:
                    raise StorageFailure("commit failed")
            finally:
                if self.store._memory:
                    self.store._lock.release()
            return False

    def _tx(self, write: bool = True) -> "Store._Tx":
        return Store._Tx(self, write)

    def _migrate(self) -> None:
        # Runs in autocommit (executescript would sabotage an open
        # transaction); the DDL is idempotent so racing initializers are safe.
        cur = self._conn().cursor()
        cur.execute("SELECT name FROM sqlite_master WHERE type='table' AND name='meta'")
        version = 0
        if cur.fetchone():
            cur.execute("SELECT value FROM meta WHERE key='schema_version'")
            row = cur.fetchone()
            version = int(row[0]) if row else 0
        for step in range(version, _SCHEMA_VERSION):
            cur.executescript(_MIGRATIONS[step])
        cur.execute(
            "INSERT INTO meta (key, value) VALUES ('schema_version', ?) "
            "ON CONFLICT(key) DO UPDATE SET value=excluded.value",
            (str(_SCHEMA_VERSION),),
        )

    def close(self) -> None:
        if self._memory:
            self._shared_conn.close()
        else:
            conn = getattr(self._local, "conn", None)
            if conn is not None:
                conn.close()
                self._local.conn = None

    def set_fault(self, exc: Exception | None) -> None:
        """Test hook: make every subsequent operation fail (storage outage)."""
        self._fault = exc

    # -- audit ------------------------------------------------------------

    def _audit(self, cur, now: int, action: str, process_id: str = "", **details) -> None:
        cur.execute(
            "INSERT INTO audit (time, process_id, action, details) VALUES (?,?,?,?)",
            (now, process_id, action, _text(details)),
        )

    def audit(self, now: int, action: str, process_id: str = "", **details) -> None:
        with self._tx() as cur:
            self._audit(cur, now, action, process_id, **details)

    def audit_trail(self, action: str | None = None) -> list:
        with self._tx(write=False) as cur:
            if action is None:
                cur.execute("SELECT seq, time, process_id, action, details FROM audit ORDER BY seq")
            else:
                cur.execute(
                    "SELECT seq, time, process_id, action, details FROM audit WHERE action=? ORDER BY seq",
                    (action,),
                )
            return [
                {"seq": seq, "time": t, "processid": pid, "action": act, **_loads(details)}
                for seq, t, pid, act, details in cur.fetchall()
            ]

    def audit_jsonl(self) -> str:
        """The audit trail as JSON lines (one event per line)."""
        return "\n".join(_text(e) for e in self.audit_trail())

    # -- colonies ---------------------------------------------------------

    def add_colony(self, colony: Colony) -> Colony:
        with self._tx() as cur:
            try:
                cur.execute("INSERT INTO colonies (colony_id, name) VALUES (?,?)",
                            (colony.colony_id, colony.name))
            except sqlite3.IntegrityError:
                raise DuplicateId(
                    f"colony id {colony.colony_id} or name {colony.name!r} already exists"
                ) from None
        return colony

    def get_colony(self, colony_id: str) -> Colony | None:
        with self._tx(write=False) as cur:
            cur.execute("SELECT colony_id, name FROM colonies WHERE colony_id=?", (colony_id,))
            row = cur.fetchone()
        return Colony(*row) if row else None

    def get_colony_by_name(self, name: str) -> Colony | None:
        with self._tx(write=False) as cur:
            cur.execute("SELECT colony_id, name FROM colonies WHERE name=?", (name,))
            row = cur.fetchone()
        return Colony(*row) if row else None

    def list_colonies(self) -> list:
        with self._tx(write=False) as cur:
            cur.execute("SELECT colony_id, name FROM colonies ORDER BY colony_id")
            return [Colony(*row) for row in cur.fetchall()]

    # -- executors --------------------------------------------------------

    def _executor_from_row(self, row) -> ExecutorRecord:
        return ExecutorRecord(
            executor_id=row[0], colony_id=row[1], executor_name=row[2],
            executor_type=row[3], approved=bool(row[4]),
            functions=_loads(row[5]), last_seen=row[6],
        )

    _EXEC_COLS = "executor_id, colony_id, executor_name, executor_type, approved, functions, last_seen"

    def add_executor(self, rec: ExecutorRecord) -> ExecutorRecord:
        with self._tx() as cur:
            try:
                cur.execute(
                    f"INSERT INTO executors ({self._EXEC_COLS}) VALUES (?,?,?,?,?,?,?)",
                    (rec.executor_id, rec.colony_id, rec.executor_name,
                     rec.executor_type, int(rec.approved), _text(rec.functions), rec.last_seen),
                )
            except sqlite3.IntegrityError:
                raise DuplicateId(
                    f"executor id or name already registered in colony {rec.colony_id}"
                ) from None
        return rec

    def get_executor(self, executor_id: str) -> ExecutorRecord | None:
        with self._tx(write=False) as cur:
            cur.execute(f"SELECT {self._EXEC_COLS} FROM executors WHERE executor_id=?", (executor_id,))
            row = cur.fetchone()
        return self._executor_from_row(row) if row else None

    def get_executor_by_name(self, colony_id: str, name: str) -> ExecutorRecord | None:
        with self._tx(write=False) as cur:
            cur.execute(
                f"SELECT {self._EXEC_COLS} FROM executors WHERE colony_id=? AND executor_name=?",
                (colony_id, name),
            )
            row = cur.fetchone()
        return self._executor_from_row(row) if row else None

    def list_executors(self, colony_id: str) -> list:
        with self._tx(write=False) as cur:
            cur.execute(
                f"SELECT {self._EXEC_COLS} FROM executors WHERE colony_id=? ORDER BY executor_name",
                (colony_id,),
            )
            return [self._executor_from_row(row) for row in cur.fetchall()]

    def approve_executor(self, executor_id: str) -> None:
        with self._tx() as cur:
            cur.execute("UPDATE executors SET approved=1 WHERE executor_id=?", (executor_id,))
            if cur.rowcount == 0:
                raise NotFound(f"no executor {executor_id}")

    def remove_executor(self, executor_id: str) -> None:
        with self._tx() as cur:
            cur.execute("DELETE FROM executors WHERE executor_id=?", (executor_id,))
            if cur.rowcount == 0:
                raise NotFound(f"no executor {executor_id}")

    def add_function(self, executor_id: str, func_name: str) -> None:
        with self._tx() as cur:
            cur.execute("SELECT functions FROM executors WHERE executor_id=?", (executor_id,))
            row = cur.fetchone()
            if row is None:
                raise NotFound(f"no executor {executor_id}")
            funcs = _loads(row[0])
            if func_name not in funcs:
                funcs.append(func_name)
                cur.execute("UPDATE executors SET functions=? WHERE executor_id=?",
                            (_text(funcs), executor_id))

    def touch_executor(self, executor_id: str, now: int) -> None:
        with self._tx() as cur:
            cur.execute("UPDATE executors SET last_seen=? WHERE executor_id=?", (now, executor_id))

    # -- processes --------------------------------------------------------

    _PROC_COLS = (
        "process_id, state, wait_for_parents, assigned_executor, submission_time, "
        "priority_time, start_time, end_time, deadline, wait_deadline, retries, "
        "spec, errors, parents, children, workflow_id"
    )

    def _process_from_row(self, cur, row) -> Process:
        pid = row[0]
        cur.execute("SELECT input, output FROM io WHERE process_id=?", (pid,))
        io_row = cur.fetchone() or ("[]", "[]")
        return Process(
            process_id=pid,
            spec=FunctionSpec.from_obj(_loads(row[11])),
            state=row[1],
            wait_for_parents=bool(row[2]),
            assigned_executor=row[3],
            submission_time=row[4],
            priority_time=row[5],
            start_time=row[6],
            end_time=row[7],
            deadline=row[8],
            wait_deadline=row[9],
            retries=row[10],
            errors=_loads(row[12]),
            parents=_loads(row[13]),
            children=_loads(row[14]),
            workflow_id=row[15],
            input=_loads(io_row[0]),
            output=_loads(io_row[1]),
        )

    def _insert_process_tx(self, cur, p: Process) -> None:
        spec = p.spec
        if p.priority_time == 0:
            p.priority_time = compute_priority_time(p.submission_time, spec.priority)
        if spec.max_wait_time > 0 and p.wait_deadline == 0:
            p.wait_deadline = p.submission_time + spec.max_wait_time * 10**9
        try:
            cur.execute(
                "INSERT INTO processes (process_id, colony_id, executor_type, executor_names,"
                " state, wait_for_parents, assigned_executor, submission_time, priority_time,"
                " start_time, end_time, deadline, wait_deadline, retries, max_retries,"
                " max_exec_time, max_wait_time, spec, errors, parents, children, workflow_id, node_name)"
                " VALUES (?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?,?)",
                (
                    p.process_id, spec.conditions.colony_id, spec.conditions.executor_type,
                    _text(spec.conditions.executor_names), p.state, int(p.wait_for_parents),
                    p.assigned_executor, p.submission_time, p.priority_time, p.start_time,
                    p.end_time, p.deadline, p.wait_deadline, p.retries, spec.max_retries,
                    spec.max_exec_time, spec.max_wait_time, _text(spec.to_obj()),
                    _text(p.errors), _text(p.parents), _text(p.children), p.workflow_id,
                    spec.node_name,
                ),
            )
        except sqlite3.IntegrityError:
            raise DuplicateId(f"process {p.process_id} already exists") from None
        cur.execute("INSERT INTO io (process_id, input, output) VALUES (?,?,?)",
                    (p.process_id, _text(p.input), _text(p.output)))
        if p.workflow_id:
            cur.execute(
                "INSERT INTO dependencies (process_id, workflow_id, node_name, depends_on)"
                " VALUES (?,?,?,?)",
                (p.process_id, p.workflow_id, spec.node_name,
                 _text(list(spec.conditions.dependencies))),
            )
        self._audit(cur, p.submission_time, "submit", p.process_id,
                    prioritytime=p.priority_time, workflowid=p.workflow_id)

    def insert_process(self, p: Process) -> str:
        if p.state != WAITING:
            raise StorageFailure("new processes must be in the waiting state")
        with self._tx() as cur:
            self._insert_process_tx(cur, p)
        return p.process_id

    def insert_workflow(self, processes: list) -> list:
        """Insert every process of a workflow in one transaction."""
        with self._tx() as cur:
            for p in processes:
                self._insert_process_tx(cur, p)
        return [p.process_id for p in processes]

    def get_process(self, process_id: str) -> Process | None:
        with self._tx(write=False) as cur:
            cur.execute(f"SELECT {self._PROC_COLS} FROM processes WHERE process_id=?", (process_id,))
            row = cur.fetchone()
            return self._process_from_row(cur, row) if row else None

    def list_processes(self, colony_id: str, state: str | None = None,
                       workflow_id: str | None = None, count: int = 1000) -> list:
        query = f"SELECT {self._PROC_COLS} FROM processes WHERE colony_id=?"
        params: list = [colony_id]
        if state is not None:
            query += " AND state=?"
            params.append(state)
        if workflow_id is not None:
            query += " AND workflow_id=?"
            params.append(workflow_id)
        query += " ORDER BY submission_time, process_id LIMIT ?"
        params.append(count)
        with self._tx(write=False) as cur:
            cur.execute(query, params)
            rows = cur.fetchall()
            return [self._process_from_row(cur, row) for row in rows]

    def count_processes(self, colony_id: str | None = None) -> dict:
        with self._tx(write=False) as cur:
            if colony_id is None:
                cur.execute("SELECT state, COUNT(*) FROM processes GROUP BY state")
            else:
                cur.execute("SELECT state, COUNT(*) FROM processes WHERE colony_id=? GROUP BY state",
                            (colony_id,))
            return dict(cur.fetchall())

    def select_and_claim(self, colony_id: str, executor: ExecutorRecord, now: int,
                         term: int = 0) -> Process | None:
        """Atomically claim the matching WAITING process with the smallest
        priority time, or return None.

        The whole step is one compare-and-set transaction: candidate
        selection, the fencing check, and the WAITING->RUNNING flip all
        commit together, so concurrent claimants can never share a process.
        """
        with self._tx() as cur:
            cur.execute("SELECT max_term FROM fence WHERE id=0")
            max_term = cur.fetchone()[0]
            if term < max_term:
                raise StaleLeader(f"claim term {term} < fenced term {max_term}")
            if term > max_term:
                cur.execute("UPDATE fence SET max_term=? WHERE id=0", (term,))
            candidate = None
            offset = 0
            while candidate is None:
                cur.execute(
                    "SELECT process_id, executor_names, max_exec_time FROM processes"
                    " WHERE colony_id=? AND executor_type=? AND state=? AND wait_for_parents=0"
                    " ORDER BY priority_time, submission_time, rowid LIMIT 50 OFFSET ?",
                    (colony_id, executor.executor_type, WAITING, offset),
                )
                rows = cur.fetchall()
                if not rows:
                    return None
                for pid, names_text, max_exec_time in rows:
                    names = _loads(names_text)
                    if not names or executor.executor_name in names:
                        candidate = (pid, max_exec_time)
                        break
                offset += 50
            pid, max_exec_time = candidate
            deadline = now + max_exec_time * 10**9 if max_exec_time > 0 else 0
            cur.execute(
                "UPDATE processes SET state=?, assigned_executor=?, start_time=?, deadline=?,"
                " wait_deadline=0 WHERE process_id=? AND state=? AND wait_for_parents=0",
                (RUNNING, executor.executor_id, now, deadline, pid, WAITING),
            )
            if cur.rowcount != 1:
                raise StorageFailure("claim lost a race inside its own transaction")
            self._audit(cur, now, "claim", pid, executorid=executor.executor_id,
                        executortype=executor.executor_type, term=term)
            cur.execute(f"SELECT {self._PROC_COLS} FROM processes WHERE process_id=?", (pid,))
            return self._process_from_row(cur, cur.fetchone())

    def reset_process(self, process_id: str, reason: str, now: int) -> Process:
        """Send a RUNNING process back to the queue, consuming one retry;
        exhausting the budget fails it terminally instead."""
        with self._tx() as cur:
            process = self._reset_tx(cur, process_id, reason, now)
            return process

    def _reset_tx(self, cur, process_id: str, reason: str, now: int,
                  record_reason: bool = True) -> Process:
        cur.execute(
            "SELECT state, retries, max_retries, max_wait_time, errors FROM processes"
            " WHERE process_id=?",
            (process_id,),
        )
        row = cur.fetchone()
        if row is None:
            raise NotFound(f"no process {process_id}")
        state, retries, max_retries, max_wait_time, errors_text = row
        if state != RUNNING:
            raise NotRunning(f"process {process_id} is {state}, not running")
        retries += 1
        errors = _loads(errors_text)
        if record_reason:
            errors.append(reason)
        if retries <= max_retries:
            wait_deadline = now + max_wait_time * 10**9 if max_wait_time > 0 else 0
            # priority_time untouched: a reset process keeps its queue position
            cur.execute(
                "UPDATE processes SET state=?, assigned_executor='', deadline=0,"
                " start_time=0, wait_deadline=?, retries=?, errors=? WHERE process_id=?",
                (WAITING, wait_deadline, retries, _text(errors), process_id),
            )
            self._audit(cur, now, "reset", process_id, reason=reason, retries=retries)
        else:
            cur.execute(
                "UPDATE processes SET state=?, assigned_executor='', deadline=0,"
                " end_time=?, retries=?, errors=? WHERE process_id=?",
                (FAILED, now, retries, _text(errors), process_id),
            )
            self._audit(cur, now, "fail", process_id, reason=reason, retries=retries)
            self._fail_cascade_tx(cur, process_id, now)
        cur.execute(f"SELECT {self._PROC_COLS} FROM processes WHERE process_id=?", (process_id,))
        return self._process_from_row(cur, cur.fetchone())

    def close_process(self, process_id: str, caller: str, success: bool,
                      output: list, now: int, errors: list | None = None) -> tuple:
        """Close a RUNNING process. Only the assigned executor has write
        access. Success stores the output and releases any children whose
        gates are now satisfied — all inside this one transaction, so the
        diamond double-release race serializes at the store. A failure
        close consumes one retry and re-queues until the budget is gone.

        Returns (process, released_child_ids).
        """
        with self._tx() as cur:
            cur.execute(
                "SELECT state, assigned_executor, errors FROM processes WHERE process_id=?",
                (process_id,),
            )
            row = cur.fetchone()
            if row is None:
                raise NotFound(f"no process {process_id}")
            state, assignee, errors_text = row
            if state != RUNNING:
                raise NotRunning(f"process {process_id} is {state}, not running")
            if assignee != caller:
                raise NotAssignee("only the assigned executor may close a process")
            if success:
                cur.execute(
                    "UPDATE processes SET state=?, end_time=? WHERE process_id=?",
                    (SUCCESSFUL, now, process_id),
                )
                cur.execute("UPDATE io SET output=? WHERE process_id=?",
                            (_text(list(output)), process_id))
                self._audit(cur, now, "close", process_id, success=True)
                released = self._release_children_tx(cur, process_id, now)
            else:
                merged = _loads(errors_text) + list(errors or [])
                cur.execute("UPDATE io SET output=? WHERE process_id=?",
                            (_text(list(output)), process_id))
                cur.execute("UPDATE processes SET errors=? WHERE process_id=?",
                            (_text(merged), process_id))
                self._audit(cur, now, "close", process_id, success=False)
                # explicit errors are already on the row; only record the
                # generic reason when the executor gave none
                self._reset_tx(cur, process_id,
                               (errors or ["executor reported failure"])[-1], now,
                               record_reason=not errors)
                released = []
            cur.execute(f"SELECT {self._PROC_COLS} FROM processes WHERE process_id=?", (process_id,))
            return self._process_from_row(cur, cur.fetchone()), released

    def _release_children_tx(self, cur, closed_id: str, now: int) -> list:
        """Release children of a just-successful parent whose parents have
        all completed: clear the gate flag and assemble their input from
        parent outputs. Conditional update => released exactly once."""
        cur.execute("SELECT children FROM processes WHERE process_id=?", (closed_id,))
        children = _loads(cur.fetchone()[0])
        released = []
        for child_id in children:
            cur.execute(
                "SELECT wait_for_parents, parents, state FROM processes WHERE process_id=?",
                (child_id,),
            )
            row = cur.fetchone()
            if row is None or not row[0] or row[2] != WAITING:
                continue
            parent_ids = _loads(row[1])
            parents = []
            all_done = True
            for pid in parent_ids:
                cur.execute(
                    "SELECT state, children FROM processes WHERE process_id=?", (pid,))
                p_row = cur.fetchone()
                if p_row is None or p_row[0] != SUCCESSFUL:
                    all_done = False
                    break
                cur.execute("SELECT output FROM io WHERE process_id=?", (pid,))
                parents.append((_loads(p_row[1]), _loads(cur.fetchone()[0])))
            if not all_done:
                continue
            contributions = []
            for (siblings, output), pid in zip(parents, parent_ids):
                contributions.extend(
                    workflows.parent_contribution(output, siblings.index(child_id), len(siblings))
                )
            cur.execute(
                "UPDATE processes SET wait_for_parents=0 WHERE process_id=? AND wait_for_parents=1",
                (child_id,),
            )
            if cur.rowcount != 1:
                continue
            cur.execute("UPDATE io SET input=? WHERE process_id=?",
                        (_text(contributions), child_id))
            self._audit(cur, now, "release", child_id, input=contributions)
            released.append(child_id)
        return released

    def _fail_cascade_tx(self, cur, failed_id: str, now: int) -> list:
        """Fail every transitive descendant still waiting: nothing
        downstream of a terminal failure can ever run."""
        cascaded = []
        frontier = [failed_id]
        seen = {failed_id}
        while frontier:
            cur.execute("SELECT children FROM processes WHERE process_id=?", (frontier.pop(),))
            row = cur.fetchone()
            if row is None:
                continue
            for child_id in _loads(row[0]):
                if child_id in seen:
                    continue
                seen.add(child_id)
                cur.execute("SELECT state, errors FROM processes WHERE process_id=?", (child_id,))
                child = cur.fetchone()
                if child is None:
                    continue
                if child[0] == WAITING:
                    errors = _loads(child[1])
                    errors.append("upstream failure")
                    cur.execute(
                        "UPDATE processes SET state=?, end_time=?, errors=?,"
                        " assigned_executor='' WHERE process_id=? AND state=?",
                        (FAILED, now, _text(errors), child_id, WAITING),
                    )
                    if cur.rowcount == 1:
                        self._audit(cur, now, "fail", child_id, reason="upstream failure")
                        cascaded.append(child_id)
                frontier.append(child_id)
        return cascaded

    def fail_cascade(self, failed_id: str, now: int) -> list:
        """Standalone cascade for an already-terminal failure."""
        with self._tx() as cur:
            cur.execute("SELECT state FROM processes WHERE process_id=?", (failed_id,))
            row = cur.fetchone()
            if row is None:
                raise NotFound(f"no process {failed_id}")
            if row[0] != FAILED:
                return []
            return self._fail_cascade_tx(cur, failed_id, now)

    def fail_waiting_process(self, process_id: str, reason: str, now: int) -> Process:
        """Terminal failure of a WAITING process (max_wait_time expiry).
        Does not consume the retry budget — wait expiry is terminal."""
        with self._tx() as cur:
            cur.execute("SELECT state, errors FROM processes WHERE process_id=?", (process_id,))
            row = cur.fetchone()
            if row is None:
                raise NotFound(f"no process {process_id}")
            if row[0] != WAITING:
                raise NotRunning(f"process {process_id} is {row[0]}, not waiting")
            errors = _loads(row[1])
            errors.append(reason)
            cur.execute(
                "UPDATE processes SET state=?, end_time=?, errors=? WHERE process_id=?",
                (FAILED, now, _text(errors), process_id),
            )
            self._audit(cur, now, "fail", process_id, reason=reason)
            self._fail_cascade_tx(cur, process_id, now)
            cur.execute(f"SELECT {self._PROC_COLS} FROM processes WHERE process_id=?", (process_id,))
            return self._process_from_row(cur, cur.fetchone())

    def expired_processes(self, now: int) -> list:
        """RUNNING processes past their execution deadline."""
        with self._tx(write=False) as cur:
            cur.execute(
                "SELECT process_id FROM processes WHERE state=? AND deadline>0 AND deadline<?"
                " ORDER BY deadline",
                (RUNNING, now),
            )
            return [row[0] for row in cur.fetchall()]

    def wait_expired_processes(self, now: int) -> list:
        """WAITING processes that outstayed their max queue time."""
        with self._tx(write=False) as cur:
            cur.execute(
                "SELECT process_id FROM processes WHERE state=? AND wait_deadline>0"
                " AND wait_deadline<? ORDER BY wait_deadline",
                (WAITING, now),
            )
            return [row[0] for row in cur.fetchall()]

    def add_child_process(self, parent_id: str, caller: str, child: Process,
                          insert_before_children: bool, now: int) -> Process:
        """Append a node to a running workflow: the caller must hold the
        parent (assignment grants exclusive rights to grow the DAG there).
        With insert_before_children, existing children additionally gate
        on the new node."""
        from .errors import ParentTerminal

        with self._tx() as cur:
            cur.execute(
                "SELECT state, assigned_executor, children, workflow_id FROM processes"
                " WHERE process_id=?",
                (parent_id,),
            )
            row = cur.fetchone()
            if row is None:
                raise NotFound(f"no process {parent_id}")
            state, assignee, children_text, workflow_id = row
            if state in (SUCCESSFUL, FAILED):
                raise ParentTerminal(f"process {parent_id} is already {state}")
            if state != RUNNING or assignee != caller:
                raise NotAssignee("only the currently assigned executor may add children")
            child.workflow_id = workflow_id or child.workflow_id
            child.parents = [parent_id]
            child.wait_for_parents = True
            self._insert_process_tx(cur, child)
            children = _loads(children_text)
            prior_children = list(children)
            children.append(child.process_id)
            cur.execute("UPDATE processes SET children=? WHERE process_id=?",
                        (_text(children), parent_id))
            if insert_before_children:
                for sibling_id in prior_children:
                    cur.execute("SELECT parents, state FROM processes WHERE process_id=?",
                                (sibling_id,))
                    s_row = cur.fetchone()
                    if s_row is None or s_row[1] != WAITING:
                        continue
                    parents = _loads(s_row[0])
                    parents.append(child.process_id)
                    cur.execute(
                        "UPDATE processes SET parents=?, wait_for_parents=1 WHERE process_id=?",
                        (_text(parents), sibling_id),
                    )
                    cur.execute("SELECT children FROM processes WHERE process_id=?",
                                (child.process_id,))
                    grand = _loads(cur.fetchone()[0])
                    grand.append(sibling_id)
                    cur.execute("UPDATE processes SET children=? WHERE process_id=?",
                                (_text(grand), child.process_id))
            return child

    # -- crons --------------------------------------------------------------

    _CRON_COLS = "cron_id, colony_id, name, interval, cron_expr, workflow, next_deadline, last_run"

    def _cron_from_row(self, row) -> CronDef:
        return CronDef(
            cron_id=row[0], colony_id=row[1], name=row[2], interval=row[3],
            cron_expr=row[4], workflow=WorkflowGraph.from_obj(_loads(row[5])),
            next_deadline=row[6], last_run=row[7],
        )

    def add_cron(self, cron: CronDef) -> CronDef:
        with self._tx() as cur:
            try:
                cur.execute(
                    f"INSERT INTO crons ({self._CRON_COLS}) VALUES (?,?,?,?,?,?,?,?)",
                    (cron.cron_id, cron.colony_id, cron.name, cron.interval, cron.cron_expr,
                     _text(cron.workflow.to_obj()), cron.next_deadline, cron.last_run),
                )
            except sqlite3.IntegrityError:
                raise DuplicateId(f"cron {cron.cron_id} already exists") from None
        return cron

    def get_cron(self, cron_id: str) -> CronDef | None:
        with self._tx(write=False) as cur:
            cur.execute(f"SELECT {self._CRON_COLS} FROM crons WHERE cron_id=?", (cron_id,))
            row = cur.fetchone()
        return self._cron_from_row(row) if row else None

    def list_crons(self, colony_id: str) -> list:
        with self._tx(write=False) as cur:
            cur.execute(f"SELECT {self._CRON_COLS} FROM crons WHERE colony_id=? ORDER BY name",
                        (colony_id,))
            return [self._cron_from_row(row) for row in cur.fetchall()]

    def due_crons(self, now: int) -> list:
        with self._tx(write=False) as cur:
            cur.execute(
                f"SELECT {self._CRON_COLS} FROM crons WHERE next_deadline<=? ORDER BY cron_id",
                (now,),
            )
            return [self._cron_from_row(row) for row in cur.fetchall()]

    def fire_cron(self, cron_id: str, expected_deadline: int, next_deadline: int,
                  now: int, processes: list) -> bool:
        """Advance the deadline and submit the workflow in one transaction.
        The compare-and-advance on next_deadline makes double-firing
        impossible even with overlapping leaders: only the transaction
        that observes the expected deadline wins."""
        with self._tx() as cur:
            cur.execute(
                "UPDATE crons SET next_deadline=?, last_run=? WHERE cron_id=? AND next_deadline=?",
                (next_deadline, now, cron_id, expected_deadline),
            )
            if cur.rowcount != 1:
                return False
            for p in processes:
                self._insert_process_tx(cur, p)
            self._audit(cur, now, "cron_fire", "", cronid=cron_id,
                        deadline=expected_deadline,
                        workflowid=processes[0].workflow_id if processes else "")
            return True

    # -- generators -----------------------------------------------------------

    _GEN_COLS = "generator_id, colony_id, name, trigger_count, timeout, workflow"

    def _generator_from_row(self, row) -> GeneratorDef:
        return GeneratorDef(
            generator_id=row[0], colony_id=row[1], name=row[2], trigger_count=row[3],
            timeout=row[4], workflow=WorkflowGraph.from_obj(_loads(row[5])),
        )

    def add_generator(self, gen: GeneratorDef) -> GeneratorDef:
        with self._tx() as cur:
            try:
                cur.execute(
                    f"INSERT INTO generators ({self._GEN_COLS}) VALUES (?,?,?,?,?,?)",
                    (gen.generator_id, gen.colony_id, gen.name, gen.trigger_count,
                     gen.timeout, _text(gen.workflow.to_obj())),
                )
            except sqlite3.IntegrityError:
                raise DuplicateId(f"generator {gen.generator_id} already exists") from None
        return gen

    def get_generator(self, generator_id: str) -> GeneratorDef | None:
        with self._tx(write=False) as cur:
            cur.execute(f"SELECT {self._GEN_COLS} FROM generators WHERE generator_id=?",
                        (generator_id,))
            row = cur.fetchone()
        return self._generator_from_row(row) if row else None

    def list_generators(self, colony_id: str) -> list:
        with self._tx(write=False) as cur:
            cur.execute(f"SELECT {self._GEN_COLS} FROM generators WHERE colony_id=? ORDER BY name",
                        (colony_id,))
            return [self._generator_from_row(row) for row in cur.fetchall()]

    def list_all_generators(self) -> list:
        with self._tx(write=False) as cur:
            cur.execute(f"SELECT {self._GEN_COLS} FROM generators ORDER BY generator_id")
            return [self._generator_from_row(row) for row in cur.fetchall()]

    def add_pack(self, generator_id: str, payload, now: int) -> None:
        """Fire-and-forget: appends one durable row, touches no other
        state, and is safe on any replica without synchronization."""
        with self._tx() as cur:
            cur.execute("SELECT 1 FROM generators WHERE generator_id=?", (generator_id,))
            if cur.fetchone() is None:
                from .errors import UnknownGenerator
                raise UnknownGenerator(f"no generator {generator_id}")
            cur.execute(
                "INSERT INTO packs (generator_id, payload, arrival, consumed) VALUES (?,?,?,0)",
                (generator_id, _text(payload), now),
            )

    def pack_stats(self, generator_id: str) -> tuple:
        """(unconsumed count, oldest arrival, newest arrival)."""
        with self._tx(write=False) as cur:
            cur.execute(
                "SELECT COUNT(*), MIN(arrival), MAX(arrival) FROM packs"
                " WHERE generator_id=? AND consumed=0",
                (generator_id,),
            )
            count, oldest, newest = cur.fetchone()
            return count, oldest or 0, newest or 0

    def consume_packs_and_submit(self, generator_id: str, min_count: int, take: int,
                                 now: int, build) -> list | None:
        """Consume the ``take`` oldest unconsumed packs and submit the
        workflow built from their payloads — one transaction, so a crash
        between consume and submit never loses or duplicates a batch.
        Returns the new process ids, or None if fewer than ``min_count``
        packs remain (another scanner won the batch)."""
        with self._tx() as cur:
            cur.execute(
                "SELECT seq, payload FROM packs WHERE generator_id=? AND consumed=0"
                " ORDER BY seq LIMIT ?",
                (generator_id, take),
            )
            rows = cur.fetchall()
            if len(rows) < min_count or not rows:
                return None
            payloads = [_loads(payload) for _, payload in rows]
            seqs = [seq for seq, _ in rows]
            cur.execute(
                f"UPDATE packs SET consumed=1 WHERE seq IN ({','.join('?' * len(seqs))})"
                " AND consumed=0",
                seqs,
            )
            if cur.rowcount != len(seqs):
                raise StorageFailure("pack consumption lost a race inside its own transaction")
            processes = build(payloads)
            for p in processes:
                self._insert_process_tx(cur, p)
            self._audit(cur, now, "generator_fire", "", generatorid=generator_id,
                        packs=len(seqs),
                        workflowid=processes[0].workflow_id if processes else "")
            return [p.process_id for p in processes]

    # -- files / snapshots -----------------------------------------------------

    _FILE_COLS = ("file_id, colony_id, label, name, checksum, size, storage_ref,"
                  " credentials_ref, added, revision, deleted")

    def _file_from_row(self, row) -> FileMeta:
        return FileMeta(
            file_id=row[0], colony_id=row[1], label=row[2], name=row[3], checksum=row[4],
            size=row[5], storage_ref=_loads(row[6]), credentials_ref=row[7], added=row[8],
            revision=row[9], deleted=bool(row[10]),
        )

    def register_file(self, meta: FileMeta) -> FileMeta:
        """New revision row; prior revisions are never touched."""
        with self._tx() as cur:
            cur.execute(
                "SELECT COALESCE(MAX(revision), 0) FROM files WHERE colony_id=? AND label=? AND name=?",
                (meta.colony_id, meta.label, meta.name),
            )
            meta.revision = cur.fetchone()[0] + 1
            meta.deleted = False
            cur.execute(
                f"INSERT INTO files ({self._FILE_COLS}) VALUES (?,?,?,?,?,?,?,?,?,?,0)",
                (meta.file_id, meta.colony_id, meta.label, meta.name, meta.checksum,
                 meta.size, _text(meta.storage_ref), meta.credentials_ref, meta.added,
                 meta.revision),
            )
        return meta

    def get_file(self, file_id: str) -> FileMeta | None:
        with self._tx(write=False) as cur:
            cur.execute(f"SELECT {self._FILE_COLS} FROM files WHERE file_id=?", (file_id,))
            row = cur.fetchone()
        return self._file_from_row(row) if row else None

    def label_exists(self, colony_id: str, label: str) -> bool:
        if label == "/":
            return True
        with self._tx(write=False) as cur:
            cur.execute(
                "SELECT 1 FROM files WHERE colony_id=? AND (label=? OR label LIKE ?) LIMIT 1",
                (colony_id, label, label.rstrip("/") + "/%"),
            )
            return cur.fetchone() is not None

    def latest_files(self, colony_id: str, label: str, recursive: bool = False) -> list:
        """Highest revision per (label, name), tombstones hidden."""
        with self._tx(write=False) as cur:
            if recursive:
                cur.execute(
                    f"SELECT {self._FILE_COLS} FROM files WHERE colony_id=? AND"
                    " (label=? OR label LIKE ?) ORDER BY label, name, revision",
                    (colony_id, label, label.rstrip("/") + "/%"),
                )
            else:
                cur.execute(
                    f"SELECT {self._FILE_COLS} FROM files WHERE colony_id=? AND label=?"
                    " ORDER BY label, name, revision",
                    (colony_id, label),
                )
            latest: dict = {}
            for row in cur.fetchall():
                meta = self._file_from_row(row)
                latest[(meta.label, meta.name)] = meta
            return [m for m in latest.values() if not m.deleted]

    def file_revisions(self, colony_id: str, label: str, name: str) -> list:
        with self._tx(write=False) as cur:
            cur.execute(
                f"SELECT {self._FILE_COLS} FROM files WHERE colony_id=? AND label=? AND name=?"
                " ORDER BY revision",
                (colony_id, label, name),
            )
            return [self._file_from_row(row) for row in cur.fetchall()]

    def tombstone_file(self, colony_id: str, label: str, name: str) -> int:
        """Hide every revision of (label, name) from latest-lookups while
        preserving snapshot pins. Returns the number of rows marked."""
        with self._tx() as cur:
            cur.execute(
                "UPDATE files SET deleted=1 WHERE colony_id=? AND label=? AND name=?",
                (colony_id, label, name),
            )
            if cur.rowcount == 0:
                raise NotFound(f"no file {label}/{name}")
            return cur.rowcount

    def create_snapshot(self, snapshot_id: str, colony_id: str, label: str, now: int) -> Snapshot:
        """Pin the current latest revision of every file under the label,
        recursively. Later registrations never alter the snapshot."""
        from .errors import UnknownLabel

        with self._tx() as cur:
            if label != "/":
                cur.execute(
                    "SELECT 1 FROM files WHERE colony_id=? AND (label=? OR label LIKE ?) LIMIT 1",
                    (colony_id, label, label.rstrip("/") + "/%"),
                )
                if cur.fetchone() is None:
                    raise UnknownLabel(f"no files were ever registered under {label}")
            cur.execute(
                f"SELECT {self._FILE_COLS} FROM files WHERE colony_id=? AND (label=? OR label LIKE ?)"
                " ORDER BY label, name, revision",
                (colony_id, label, label.rstrip("/") + "/%"),
            )
            latest: dict = {}
            for row in cur.fetchall():
                meta = self._file_from_row(row)
                latest[(meta.label, meta.name)] = meta
            pinned = [m for m in latest.values() if not m.deleted]
            cur.execute(
                "INSERT INTO snapshots (snapshot_id, colony_id, label, created) VALUES (?,?,?,?)",
                (snapshot_id, colony_id, label, now),
            )
            for meta in pinned:
                cur.execute(
                    "INSERT INTO snapshot_files (snapshot_id, file_id, revision, label, name)"
                    " VALUES (?,?,?,?,?)",
                    (snapshot_id, meta.file_id, meta.revision, meta.label, meta.name),
                )
            return Snapshot(
                snapshot_id=snapshot_id, colony_id=colony_id, label=label, created=now,
                files=[(m.file_id, m.revision) for m in pinned],
            )

    def get_snapshot(self, snapshot_id: str) -> Snapshot | None:
        with self._tx(write=False) as cur:
            cur.execute(
                "SELECT snapshot_id, colony_id, label, created FROM snapshots WHERE snapshot_id=?",
                (snapshot_id,),
            )
            row = cur.fetchone()
            if row is None:
                return None
            cur.execute(
                "SELECT file_id, revision FROM snapshot_files WHERE snapshot_id=?"
                " ORDER BY label, name",
                (snapshot_id,),
            )
            files = [(f, r) for f, r in cur.fetchall()]
        return Snapshot(snapshot_id=row[0], colony_id=row[1], label=row[2], created=row[3],
                        files=files)

    def list_snapshots(self, colony_id: str) -> list:
        with self._tx(write=False) as cur:
            cur.execute(
                "SELECT snapshot_id FROM snapshots WHERE colony_id=? ORDER BY created, snapshot_id",
                (colony_id,),
            )
            ids = [row[0] for row in cur.fetchall()]
        return [self.get_snapshot(sid) for sid in ids]

    def remove_snapshot(self, snapshot_id: str) -> None:
        with self._tx() as cur:
            cur.execute("DELETE FROM snapshots WHERE snapshot_id=?", (snapshot_id,))
            if cur.rowcount == 0:
                raise NotFound(f"no snapshot {snapshot_id}")
            cur.execute("DELETE FROM snapshot_files WHERE snapshot_id=?", (snapshot_id,))

    # -- dump / load -----------------------------------------------------------

    def dump(self) -> str:
        """Whole-store JSON export (canonical bytes) for fixtures and
        differential tests."""
        out = {"schema": _SCHEMA_VERSION, "tables": {}}
        with self._tx(write=False) as cur:
            for table in _TABLES:
                cur.execute(f"SELECT * FROM {table}")
                cols = [d[0] for d in cur.description]
                rows = [dict(zip(cols, row)) for row in cur.fetchall()]
                key_col = cols[0]
                rows.sort(key=lambda r: str(r[key_col]))
                out["tables"][table] = rows
        return canonical_json(out).decode("utf-8")

    def load(self, dump_text: str) -> None:
        data = json.loads(dump_text)
        if data.get("schema") != _SCHEMA_VERSION:
            raise StorageFailure(f"dump schema {data.get('schema')} != {_SCHEMA_VERSION}")
        with self._tx() as cur:
            for table in _TABLES:
                cur.execute(f"DELETE FROM {table}")
                for row in data["tables"].get(table, []):
                    cols = list(row.keys())
                    cur.execute(
                        f"INSERT INTO {table} ({','.join(cols)}) VALUES"
                        f" ({','.join('?' * len(cols))})",
                        [row[c] for c in cols],
                    )
