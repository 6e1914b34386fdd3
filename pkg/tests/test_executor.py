"""Reference executor: built-in functions, the pull loop, fs-backed runs."""

import threading

import pytest

from colonybroker.client import ColonyClient
from colonybroker.crypto import generate_keypair
from colonybroker.executor import (
    BUILTINS,
    ApiFsFacade,
    ExecutorRuntime,
    FuncContext,
)
from colonybroker.fs import LocalStorageDriver
from colonybroker.model import Conditions, FunctionSpec, Process


def make_ctx(args=None, kwargs=None, input=None, runtime=None):
    spec = FunctionSpec(func_name="f",
                        conditions=Conditions(colony_id="c" * 64, executor_type="cli"),
                        args=args or [], kwargs=kwargs or {})
    process = Process(process_id="p1", spec=spec, input=input or [])
    return FuncContext(process, runtime=runtime)


# -- built-in functions ----------------------------------------------------------


def test_values_prefers_input_over_args():
    assert make_ctx(args=[1, 2]).values() == [1, 2]
    assert make_ctx(args=[1, 2], input=[9]).values() == [9]


def test_builtin_helloworld():
    assert BUILTINS["helloworld"](make_ctx()) == ["hello world"]


def test_builtin_echo():
    assert BUILTINS["echo"](make_ctx(args=["a", 1])) == ["a", 1]
    assert BUILTINS["echo"](make_ctx(args=["a"], input=[5])) == [5]


def test_builtin_gen_nums_defaults():
    assert BUILTINS["gen_nums"](make_ctx()) == [2, 3]
    assert BUILTINS["gen_nums"](make_ctx(args=[7])) == [7]


def test_builtin_square_and_sum():
    assert BUILTINS["square"](make_ctx(input=[2, 3])) == [4, 9]
    assert BUILTINS["sum"](make_ctx(input=[4, 9])) == [13]


def test_builtin_fail_raises():
    with pytest.raises(RuntimeError, match="boom"):
        BUILTINS["fail"](make_ctx(args=["boom"]))
    with pytest.raises(RuntimeError, match="deliberate"):
        BUILTINS["fail"](make_ctx())


def test_builtin_sleep_returns_duration():
    assert BUILTINS["sleep"](make_ctx(args=[0])) == [0.0]


def test_builtin_execute_is_gated():
    with pytest.raises(PermissionError):
        BUILTINS["execute"](make_ctx(args=["echo hi"]))


class FakeRuntime:
    allow_exec = True


def test_builtin_execute_runs_when_allowed():
    ctx = make_ctx(args=["echo hi"], runtime=FakeRuntime())
    assert BUILTINS["execute"](ctx) == ["hi"]


def test_builtin_execute_reports_failures():
    ctx = make_ctx(args=["false"], runtime=FakeRuntime())
    with pytest.raises(RuntimeError, match="exit 1"):
        BUILTINS["execute"](ctx)


# -- runtime against an in-process server -------------------------------------------


@pytest.fixture
def rig(harness):
    """Colony, an approved executor runtime, and the clients behind them."""
    owner = ColonyClient(harness.server, harness.owner_key, clock=harness.clock)
    colony_key, colony_id = generate_keypair()
    owner.add_colony(colony_id, "work")
    colony_client = ColonyClient(harness.server, colony_key, clock=harness.clock)

    exec_key, _ = generate_keypair()
    exec_client = ColonyClient(harness.server, exec_key, clock=harness.clock)
    runtime = ExecutorRuntime(exec_client, colony_id, "worker-1")
    runtime.register()
    colony_client.approve_executor(colony_id, "worker-1")
    return {"colony_id": colony_id, "colony": colony_client, "runtime": runtime,
            "harness": harness}


def submit(rig, func_name="square", args=None, **spec_kw):
    obj = {"funcname": func_name, "args": args or [],
           "conditions": {"colonyid": rig["colony_id"], "executortype": "cli"}}
    obj.update(spec_kw)
    return rig["colony"].submit(obj)


def test_register_is_idempotent(rig):
    rig["runtime"].register()  # duplicate enrollment is tolerated
    records = rig["colony"].get_executors(rig["colony_id"])
    assert [r.executor_name for r in records] == ["worker-1"]
    assert "square" in records[0].functions


def test_step_executes_and_closes(rig):
    submitted = submit(rig, "square", args=[3, 4])
    assert rig["runtime"].step(timeout_s=0) is True
    process = rig["colony"].get_process(submitted.process_id)
    assert process.state == "successful"
    assert process.output == [9, 16]
    assert rig["runtime"].processed == 1


def test_step_times_out_on_empty_queue(rig):
    assert rig["runtime"].step(timeout_s=0) is False
    assert rig["runtime"].processed == 0


def test_unknown_function_closes_failed(rig):
    submitted = submit(rig, "no_such_function")
    rig["runtime"].step(timeout_s=0)
    process = rig["colony"].get_process(submitted.process_id)
    assert process.state == "failed"
    assert "no_such_function" in process.errors[0]


def test_function_exception_closes_failed(rig):
    submitted = submit(rig, "fail", args=["kaput"])
    rig["runtime"].step(timeout_s=0)
    process = rig["colony"].get_process(submitted.process_id)
    assert process.state == "failed"
    assert process.errors == ["RuntimeError: kaput"]


def test_custom_functions_extend_builtins(rig):
    rig["runtime"].functions["double"] = lambda ctx: [v * 2 for v in ctx.values()]
    submitted = submit(rig, "double", args=[21])
    rig["runtime"].step(timeout_s=0)
    assert rig["colony"].get_process(submitted.process_id).output == [42]


def test_non_list_output_is_wrapped(rig):
    rig["runtime"].functions["scalar"] = lambda ctx: 7
    submitted = submit(rig, "scalar")
    rig["runtime"].step(timeout_s=0)
    assert rig["colony"].get_process(submitted.process_id).output == [7]


def test_run_forever_bounded_iterations(rig):
    for n in (1, 2, 3):
        submit(rig, "square", args=[n])
    processed = rig["runtime"].run_forever(poll_timeout_s=0, max_iterations=5)
    assert processed == 3


def test_run_forever_stop_event(rig):
    stop = threading.Event()
    stop.set()
    assert rig["runtime"].run_forever(poll_timeout_s=0, stop=stop) == 0


# -- fs-backed execution ---------------------------------------------------------------


def test_process_with_fs_mounts_and_syncs(rig, tmp_path):
    harness = rig["harness"]
    colony_id = rig["colony_id"]

    # stage an input dataset and freeze it
    harness.server.catalog.upload(colony_id, "/dataset", "in.txt", b"12 30")
    snap = rig["colony"].create_snapshot(colony_id, "/dataset")

    workdir = str(tmp_path / "wd")
    executor_client = rig["runtime"].client
    facade = ApiFsFacade(executor_client, colony_id,
                         LocalStorageDriver(harness.server.config.fs_root))
    runtime = ExecutorRuntime(executor_client, colony_id, "worker-1",
                              workdir=workdir, catalog=facade)

    def transform(ctx):
        import os
        with open(os.path.join(workdir, "in", "in.txt")) as fh:
            total = sum(int(tok) for tok in fh.read().split())
        os.makedirs(os.path.join(workdir, "out"), exist_ok=True)
        with open(os.path.join(workdir, "out", "total.txt"), "w") as fh:
            fh.write(str(total))
        return [total]

    runtime.functions["transform"] = transform
    submitted = submit(rig, "transform", fs={
        "mount": "/cfs",
        "snapshots": [{"snapshotid": snap.snapshot_id, "label": "/dataset",
                       "dir": "/in"}],
        "syncdirs": ["/out"],
    })
    assert runtime.step(timeout_s=0) is True

    process = rig["colony"].get_process(submitted.process_id)
    assert process.state == "successful"
    assert process.output == [42]

    results = rig["colony"].get_files(colony_id, "/out")
    assert [(m.name, m.size) for m in results] == [("total.txt", 2)]
    # snapshot kept by default
    assert rig["colony"].get_snapshot(colony_id, snap.snapshot_id) is not None


def test_fs_cleanup_drops_unkept_snapshot(rig, tmp_path):
    harness = rig["harness"]
    colony_id = rig["colony_id"]
    harness.server.catalog.upload(colony_id, "/scratch", "tmp.txt", b"x")
    snap = rig["colony"].create_snapshot(colony_id, "/scratch")

    executor_client = rig["runtime"].client
    facade = ApiFsFacade(executor_client, colony_id,
                         LocalStorageDriver(harness.server.config.fs_root))
    runtime = ExecutorRuntime(executor_client, colony_id, "worker-1",
                              workdir=str(tmp_path / "wd"), catalog=facade)

    submitted = submit(rig, "echo", args=["done"], fs={
        "mount": "/cfs",
        "snapshots": [{"snapshotid": snap.snapshot_id, "label": "/scratch",
                       "dir": "/in", "keepfiles": False, "keepsnaphot": False}],
        "syncdirs": [],
    })
    runtime.step(timeout_s=0)
    assert rig["colony"].get_process(submitted.process_id).state == "successful"
    assert rig["colony"].get_files(colony_id, "/scratch") == []
    assert rig["colony"].get_snapshots(colony_id) == []


def test_api_fs_facade_handles_missing_snapshot(rig, tmp_path):
    facade = ApiFsFacade(rig["runtime"].client, rig["colony_id"],
                         LocalStorageDriver(str(tmp_path / "objs")))
    assert facade.get_snapshot("nope") is None
