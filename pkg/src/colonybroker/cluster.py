"""Leader election for server replicas.

Replicas share one store, so there is nothing to replicate — no log, no
snapshotting, none of the usual consensus machinery. What remains is
electing exactly one replica to run the periodic duties (deadline
reaping, schedule and generator scans) and to serialize assignment.

The election is the vote half of the Raft protocol: randomized election
timeouts, term-numbered candidacies, majority votes, heartbeats from the
winner. Safety does not rest on the election alone — any claim a leader
writes is stamped with its term and the store rejects terms older than
the highest it has seen, so a deposed leader that still thinks it is in
charge loses at the store instead of corrupting anything.

RaftNode is a pure state machine (time injected, messages in/out as
values), which makes elections testable in virtual time; the serving
layer pumps it with wall-clock ticks and an HTTP transport.
"""

from __future__ import annotations

import random

FOLLOWER = "follower"
CANDIDATE = "candidate"
LEADER = "leader"

HEARTBEAT_MS = 50
ELECTION_MIN_MS = 150
ELECTION_MAX_MS = 300

_MS = 10**6


class RaftNode:
    """One replica's view of the election. All methods take the current
    time and return a list of (destination, message) pairs to send."""

    def __init__(self, name: str, peers: list, rng: random.Random | None = None,
                 heartbeat_ms: int = HEARTBEAT_MS,
                 election_min_ms: int = ELECTION_MIN_MS,
                 election_max_ms: int = ELECTION_MAX_MS):
        self.name = name
        self.peers = [p for p in peers if p != name]
        self.rng = rng or random.Random()
        self.heartbeat_ns = heartbeat_ms * _MS
        self.election_min_ns = election_min_ms * _MS
        self.election_max_ns = election_max_ms * _MS
        self.role = FOLLOWER
        self.term = 0
        self.voted_for: str | None = None
        self.leader_hint: str | None = None
        self.votes: set = set()
        self._election_deadline = 0
        self._next_heartbeat = 0

    # -- helpers -----------------------------------------------------------

    def _quorum(self) -> int:
        return (len(self.peers) + 1) // 2 + 1

    def _reset_election_timer(self, now: int) -> None:
        span = self.rng.uniform(self.election_min_ns, self.election_max_ns)
        self._election_deadline = now + int(span)

    def _become_follower(self, now: int, term: int, leader: str | None = None) -> None:
        if term > self.term:
            self.term = term
            self.voted_for = None
        self.role = FOLLOWER
        self.leader_hint = leader
        self.votes = set()
        self._reset_election_timer(now)

    def _become_candidate(self, now: int) -> list:
        self.term += 1
        self.role = CANDIDATE
        self.voted_for = self.name
        self.votes = {self.name}
        self.leader_hint = None
        self._reset_election_timer(now)
        if self.votes_needed() == 0:
            return self._become_leader(now)
        req = {"kind": "vote_req", "term": self.term, "candidate": self.name}
        return [(peer, dict(req)) for peer in self.peers]

    def votes_needed(self) -> int:
        return max(0, self._quorum() - len(self.votes))

    def _become_leader(self, now: int) -> list:
        self.role = LEADER
        self.leader_hint = self.name
        self._next_heartbeat = now  # announce immediately
        return self._heartbeats(now)

    def _heartbeats(self, now: int) -> list:
        self._next_heartbeat = now + self.heartbeat_ns
        msg = {"kind": "heartbeat", "term": self.term, "leader": self.name}
        return [(peer, dict(msg)) for peer in self.peers]

    # -- public API ----------------------------------------------------------

    def start(self, now: int) -> list:
        self._reset_election_timer(now)
        if not self.peers:
            # a single replica needs no campaign
            return self._become_candidate(now)
        return []

    def is_leader(self) -> bool:
        return self.role == LEADER

    def on_tick(self, now: int) -> list:
        if self.role == LEADER:
            if now >= self._next_heartbeat:
                return self._heartbeats(now)
            return []
        if now >= self._election_deadline:
            return self._become_candidate(now)
        return []

    def on_message(self, now: int, msg: dict) -> list:
        kind = msg.get("kind")
        term = msg.get("term", 0)
        if not isinstance(term, int) or term < 0:
            return []
        if kind == "vote_req":
            candidate = msg.get("candidate", "")
            if term > self.term:
                self._become_follower(now, term)
            granted = (term == self.term and self.role != LEADER
                       and self.voted_for in (None, candidate))
            if granted:
                self.voted_for = candidate
                self._reset_election_timer(now)
            return [(candidate, {"kind": "vote", "term": self.term,
                                 "granted": granted, "voter": self.name})]
        if kind == "vote":
            if term > self.term:
                self._become_follower(now, term)
                return []
            if self.role == CANDIDATE and term == self.term and msg.get("granted"):
                self.votes.add(msg.get("voter", ""))
                if len(self.votes) >= self._quorum():
                    return self._become_leader(now)
            return []
        if kind == "heartbeat":
            if term >= self.term:
                self._become_follower(now, term, leader=msg.get("leader"))
            return []
        return []

    def relinquish(self, now: int) -> None:
        """Voluntary step-down (e.g. the leader cannot reach the store).
        The term is left alone; someone else will campaign past it."""
        if self.role == LEADER:
            self.role = FOLLOWER
            self.leader_hint = None
            self._reset_election_timer(now)

    def status(self) -> dict:
        return {"name": self.name, "role": self.role, "term": self.term,
                "leader": self.leader_hint or ""}


class SimCluster:
    """Deterministic in-memory cluster: virtual clock, seeded timers, a
    message queue with a fixed delivery delay, kill/restart/partition
    controls, and a per-term record of who ever led."""

    def __init__(self, names: list, clock, seed: int = 7,
                 delivery_delay_ms: int = 2, tick_ms: int = 5, **node_kwargs):
        self.clock = clock
        self.names = list(names)
        self.delivery_delay_ns = delivery_delay_ms * _MS
        self.tick_ns = tick_ms * _MS
        self.node_kwargs = node_kwargs
        self.seed = seed
        self.nodes: dict = {}
        self.up: set = set()
        self.cut: set = set()  # {(a, b)} blocked directed links
        self._queue: list = []  # [(deliver_at, seq, dest, msg)]
        self._seq = 0
        self.leaders_by_term: dict = {}
        self._incarnation = {name: 0 for name in self.names}
        for name in self.names:
            self._spawn(name)
            self.up.add(name)
        now = self.clock.now_ns()
        for name in self.names:
            self._send_all(name, self.nodes[name].start(now))
        self._record_leaders()

    def _spawn(self, name: str) -> None:
        self._incarnation[name] += 1
        rng = random.Random((self.seed, name, self._incarnation[name]).__repr__())
        self.nodes[name] = RaftNode(name, self.names, rng=rng, **self.node_kwargs)

    def _send_all(self, sender: str, outgoing: list) -> None:
        for dest, msg in outgoing:
            if (sender, dest) in self.cut:
                continue
            self._seq += 1
            self._queue.append(
                (self.clock.now_ns() + self.delivery_delay_ns, self._seq, dest, msg))

    def _record_leaders(self) -> None:
        for name in sorted(self.up):
            node = self.nodes[name]
            if node.role == LEADER:
                self.leaders_by_term.setdefault(node.term, set()).add(name)

    def kill(self, name: str) -> None:
        self.up.discard(name)

    def restart(self, name: str) -> None:
        self._spawn(name)
        self.up.add(name)
        self._send_all(name, self.nodes[name].start(self.clock.now_ns()))

    def partition(self, a: str, b: str) -> None:
        self.cut.add((a, b))
        self.cut.add((b, a))

    def heal(self, a: str, b: str) -> None:
        self.cut.discard((a, b))
        self.cut.discard((b, a))

    def step(self, ms: float) -> None:
        """Advance virtual time, delivering messages and ticking nodes on
        a fixed quantum. Fully deterministic for a given seed."""
        target = self.clock.now_ns() + int(ms * _MS)
        while self.clock.now_ns() < target:
            self.clock.advance(ns=min(self.tick_ns, target - self.clock.now_ns()))
            now = self.clock.now_ns()
            due = sorted(e for e in self._queue if e[0] <= now)
            self._queue = [e for e in self._queue if e[0] > now]
            for _at, _seq, dest, msg in due:
                if dest not in self.up:
                    continue
                self._send_all(dest, self.nodes[dest].on_message(now, msg))
                self._record_leaders()
            for name in sorted(self.up):
                self._send_all(name, self.nodes[name].on_tick(now))
                self._record_leaders()

    def leader(self) -> str | None:
        """The live leader of the highest term, if any node is leading."""
        best = None
        for name in sorted(self.up):
            node = self.nodes[name]
            if node.role == LEADER and (best is None or node.term > self.nodes[best].term):
                best = name
        return best

    def settle(self, max_ms: int = 5000) -> str:
        """Step until a leader emerges (raises if none within max_ms)."""
        waited = 0
        while waited < max_ms:
            if self.leader() is not None:
                return self.leader()
            self.step(10)
            waited += 10
        raise AssertionError(f"no leader after {max_ms}ms of simulated time")
