"""Workflow materialization and the parent-to-child data-passing rule.

A workflow is not a runtime object: submission validates the graph and
expands it into ordinary process rows wired together through parents and
children id lists. After that the broker has no notion of "a workflow
executing" — only gated processes waiting for their parents.

This module holds the pure logic (graph -> processes, output routing)
and thin wrappers over a store. It must not import the store module;
the store imports parent_contribution from here to assemble child
inputs inside the close transaction.
"""

from __future__ import annotations

from .crypto import random_id
from .errors import InvalidSpec
from .model import (
    WAITING,
    FunctionSpec,
    Process,
    WorkflowGraph,
    validate_workflow,
)


def parent_contribution(parent_output: list, child_index: int, n_children: int) -> list:
    """What one finished parent passes to one of its children.

    A single child inherits the whole output list. With several children
    the output is scattered positionally: child i receives the one-element
    slice [output[i]] (empty if the output is shorter than the fan-out).
    A child's full input is the concatenation of contributions from its
    parents in declared dependency order.
    """
    if n_children <= 1:
        return list(parent_output)
    if child_index < len(parent_output):
        return [parent_output[child_index]]
    return []


def materialize(colony_id: str, graph: WorkflowGraph, now: int,
                id_source=None) -> list:
    """Expand a validated graph into process rows, roots ungated."""
    validate_workflow(graph)
    workflow_id = random_id(None if id_source is None else id_source())
    by_name: dict = {}
    processes: list = []
    for node in graph.nodes:
        spec = FunctionSpec.from_obj(node.to_obj())  # copy: never mutate the caller's graph
        if spec.conditions.colony_id and spec.conditions.colony_id != colony_id:
            raise InvalidSpec(
                f"node {spec.node_name} names colony {spec.conditions.colony_id}, "
                f"expected {colony_id}"
            )
        spec.conditions.colony_id = colony_id
        spec.validate()
        p = Process(
            process_id=random_id(None if id_source is None else id_source()),
            spec=spec,
            state=WAITING,
            submission_time=now,
            workflow_id=workflow_id,
            wait_for_parents=bool(spec.conditions.dependencies),
        )
        by_name[spec.node_name] = p
        processes.append(p)
    for p in processes:
        for dep in p.spec.conditions.dependencies:
            parent = by_name[dep]
            p.parents.append(parent.process_id)
            parent.children.append(p.process_id)
    return processes


def submit_workflow(store, colony_id: str, graph: WorkflowGraph, now: int,
                    id_source=None) -> list:
    """Validate, expand and insert a workflow atomically. Returns the
    new processes (roots immediately claimable)."""
    processes = materialize(colony_id, graph, now, id_source)
    store.insert_workflow(processes)
    return processes


def make_child(parent_spec_colony: str, spec: FunctionSpec, now: int,
               id_source=None) -> Process:
    """Build the process row for a dynamically added child."""
    spec.conditions.colony_id = spec.conditions.colony_id or parent_spec_colony
    spec.validate()
    return Process(
        process_id=random_id(None if id_source is None else id_source()),
        spec=spec,
        state=WAITING,
        submission_time=now,
        wait_for_parents=True,
    )


def workflow_state(processes: list) -> str:
    """Derived status of a workflow: failed dominates, then running,
    then waiting; successful only when every node succeeded."""
    states = {p.state for p in processes}
    if "failed" in states:
        return "failed"
    if "running" in states:
        return "running"
    if "waiting" in states:
        return "waiting"
    return "successful"
