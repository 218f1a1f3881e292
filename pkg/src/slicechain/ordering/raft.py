"""Raft ordering: leader election and replication of cut batches.

Log entries are whole batches. The leader runs the batch cutter; a batch
becomes a block once its entry is committed on a strict majority. Log
indices are 1-based (``log[i - 1]`` holds index ``i``); 0 means "none".
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Union

from ..ledger import Transaction
from ..sim import EventLoop, Network, Timer, derive_rng
from .base import ACK, Ack, OrdererConfig, OrderingService
from .cutter import CuttingStage


class Role(str, Enum):
    FOLLOWER = "FOLLOWER"
    CANDIDATE = "CANDIDATE"
    LEADER = "LEADER"


@dataclass(frozen=True)
class LogEntry:
    term: int
    batch: tuple[Transaction, ...]

    @property
    def key(self) -> tuple:
        return (self.term, tuple(tx.tx_id for tx in self.batch))


@dataclass(frozen=True)
class RequestVote:
    term: int
    candidate: str
    last_index: int
    last_term: int


@dataclass(frozen=True)
class VoteReply:
    term: int
    voter: str
    granted: bool


@dataclass(frozen=True)
class AppendEntries:
    term: int
    leader: str
    prev_index: int
    prev_term: int
    entries: tuple[LogEntry, ...]
    leader_commit: int


@dataclass(frozen=True)
class AppendReply:
    term: int
    follower: str
    success: bool
    match_index: int


@dataclass(frozen=True)
class ClientTx:
    tx: Transaction


@dataclass(frozen=True)
class Timeout:
    kind: str  # "election" or "heartbeat"


@dataclass(frozen=True)
class ClientBatch:
    batch: tuple[Transaction, ...]


Message = Union[RequestVote, VoteReply, AppendEntries, AppendReply, ClientTx]
Event = Union[Message, Timeout, ClientBatch]

MAX_ENTRIES_PER_APPEND = 64


@dataclass
class RaftNodeState:
    node_id: str
    role: Role = Role.FOLLOWER
    current_term: int = 0
    voted_for: str | None = None
    log: list[LogEntry] = field(default_factory=list)
    commit_index: int = 0

    @property
    def last_index(self) -> int:
        return len(self.log)

    @property
    def last_term(self) -> int:
        return self.log[-1].term if self.log else 0

    def term_at(self, index: int) -> int:
        return self.log[index - 1].term if index > 0 else 0


class RaftNode(RaftNodeState):
    """One Raft server. ``step`` consumes an event and returns outbound messages."""

    def __init__(self, node_id: str, cluster: "RaftCluster"):
        super().__init__(node_id)
        self.cluster = cluster
        self.peers = [n for n in cluster.node_ids if n != node_id]
        self.rng = derive_rng(cluster.seed, "raft-timer", node_id)
        self.crashed = False
        self.leader_id: str | None = None
        self.last_applied = 0
        self.votes: set[str] = set()
        self.next_index: dict[str, int] = {}
        self.match_index: dict[str, int] = {}
        self.held: list[Transaction] = []
        self.stage: CuttingStage | None = None
        self._election_timer: Timer | None = None
        self._heartbeat_timer: Timer | None = None

    @property
    def majority(self) -> int:
        return len(self.cluster.node_ids) // 2 + 1

    # -- timers ---------------------------------------------------------

    def reset_election_timer(self) -> None:
        if self._election_timer is not None:
            self._election_timer.cancel()
        lo, hi = self.cluster.cfg.election_timeout_ms
        delay = float(self.rng.uniform(lo, hi))
        self._election_timer = self.cluster.loop.after(delay, self.cluster.fire, self.node_id, Timeout("election"))

    def _arm_heartbeat(self) -> None:
        if self._heartbeat_timer is not None:
            self._heartbeat_timer.cancel()
        self._heartbeat_timer = self.cluster.loop.after(
            self.cluster.cfg.heartbeat_ms, self.cluster.fire, self.node_id, Timeout("heartbeat"))

    def stop_timers(self) -> None:
        for timer in (self._election_timer, self._heartbeat_timer):
            if timer is not None:
                timer.cancel()
        self._election_timer = self._heartbeat_timer = None

    # -- dispatch -------------------------------------------------------

    def step(self, event: Event) -> list[tuple[str, Message]]:
        if self.crashed:
            return []
        if isinstance(event, Timeout):
            if event.kind == "election":
                return self._on_election_timeout()
            return self._on_heartbeat()
        if isinstance(event, ClientBatch):
            return self._on_client_batch(event.batch)
        if isinstance(event, ClientTx):
            return self._on_client_tx(event.tx)
        if isinstance(event, RequestVote):
            return self._on_request_vote(event)
        if isinstance(event, VoteReply):
            return self._on_vote_reply(event)
        if isinstance(event, AppendEntries):
            return self._on_append_entries(event)
        if isinstance(event, AppendReply):
            return self._on_append_reply(event)
        raise TypeError(f"unknown raft event {event!r}")

    # -- roles ----------------------------------------------------------

    def _become_follower(self, term: int) -> None:
        if term > self.current_term:
            self.current_term = term
            self.voted_for = None
            self.leader_id = None
        was_leader = self.role is Role.LEADER
        self.role = Role.FOLLOWER
        if was_leader:
            if self._heartbeat_timer is not None:
                self._heartbeat_timer.cancel()
                self._heartbeat_timer = None
            if self.stage is not None:
                self.held.extend(self.stage.drain())
            self.stage = None
            self.leader_id = None
        self.reset_election_timer()

    def _on_election_timeout(self) -> list[tuple[str, Message]]:
        if self.role is Role.LEADER:
            return []
        self.role = Role.CANDIDATE
        self.current_term += 1
        self.voted_for = self.node_id
        self.votes = {self.node_id}
        self.leader_id = None
        self.cluster.loop.trace(self.node_id, "candidate", self.current_term)
        self.reset_election_timer()
        if len(self.votes) >= self.majority:
            return self._become_leader()
        msg = RequestVote(self.current_term, self.node_id, self.last_index, self.last_term)
        return [(p, msg) for p in self.peers]

    def _become_leader(self) -> list[tuple[str, Message]]:
        self.role = Role.LEADER
        self.leader_id = self.node_id
        if self._election_timer is not None:
            self._election_timer.cancel()
            self._election_timer = None
        self.cluster.record_leader(self.current_term, self.node_id)
        self.cluster.loop.trace(self.node_id, "leader", self.current_term)
        # no-op entry lets entries from earlier terms commit promptly
        self.log.append(LogEntry(self.current_term, ()))
        self.next_index = {p: self.last_index for p in self.peers}
        self.match_index = {p: 0 for p in self.peers}
        self.stage = CuttingStage(self.cluster.loop, self.cluster.cfg.batch_size,
                                  self.cluster.cfg.batch_timeout_ms, self._cut)
        out = self._advance_commit()
        out += self._replicate_all()
        self._arm_heartbeat()
        held, self.held = self.held, []
        for tx in held:
            self.stage.offer(tx)
        return out

    # -- client traffic -------------------------------------------------

    def _cut(self, batch: list[Transaction], now: float) -> None:
        self.cluster.dispatch(self.node_id, self._on_client_batch(tuple(batch)))

    def _on_client_batch(self, batch: tuple[Transaction, ...]) -> list[tuple[str, Message]]:
        if self.role is not Role.LEADER:
            self.held.extend(batch)
            return self._flush_held()
        self.log.append(LogEntry(self.current_term, batch))
        self.cluster.loop.trace(self.node_id, "append", self.current_term)
        return self._advance_commit() + self._replicate_all()

    def _on_client_tx(self, tx: Transaction) -> list[tuple[str, Message]]:
        if self.role is Role.LEADER and self.stage is not None:
            self.stage.offer(tx)
            return []
        self.held.append(tx)
        return self._flush_held()

    def _flush_held(self) -> list[tuple[str, Message]]:
        if self.leader_id is None or self.leader_id == self.node_id or not self.held:
            return []
        held, self.held = self.held, []
        return [(self.leader_id, ClientTx(tx)) for tx in held]

    # -- replication ----------------------------------------------------

    def _append_for(self, peer: str) -> AppendEntries:
        nxt = self.next_index[peer]
        prev = nxt - 1
        entries = tuple(self.log[prev:prev + MAX_ENTRIES_PER_APPEND])
        return AppendEntries(self.current_term, self.node_id, prev, self.term_at(prev),
                             entries, self.commit_index)

    def _replicate_all(self) -> list[tuple[str, Message]]:
        return [(p, self._append_for(p)) for p in self.peers]

    def _on_heartbeat(self) -> list[tuple[str, Message]]:
        if self.role is not Role.LEADER:
            return []
        self._arm_heartbeat()
        return self._replicate_all()

    def _on_append_entries(self, msg: AppendEntries) -> list[tuple[str, Message]]:
        if msg.term < self.current_term:
            return [(msg.leader, AppendReply(self.current_term, self.node_id, False, 0))]
        if msg.term > self.current_term or self.role is not Role.FOLLOWER:
            self._become_follower(msg.term)
        else:
            self.reset_election_timer()
        out: list[tuple[str, Message]] = []
        if self.leader_id != msg.leader:
            self.leader_id = msg.leader
            out += self._flush_held()
        if msg.prev_index > self.last_index or self.term_at(msg.prev_index) != msg.prev_term:
            hint = min(self.last_index, msg.prev_index - 1)
            return out + [(msg.leader, AppendReply(self.current_term, self.node_id, False, hint))]
        index = msg.prev_index
        for entry in msg.entries:
            index += 1
            if index <= self.last_index:
                if self.log[index - 1].term == entry.term:
                    continue
                if index <= self.commit_index:
                    self.cluster.violation(f"{self.node_id} asked to truncate committed index {index}")
                del self.log[index - 1:]
            self.log.append(entry)
        last_new = msg.prev_index + len(msg.entries)
        if msg.leader_commit > self.commit_index:
            self.commit_index = min(msg.leader_commit, last_new)
            self._apply()
        return out + [(msg.leader, AppendReply(self.current_term, self.node_id, True, last_new))]

    def _on_append_reply(self, msg: AppendReply) -> list[tuple[str, Message]]:
        if msg.term > self.current_term:
            self._become_follower(msg.term)
            return []
        if self.role is not Role.LEADER or msg.term != self.current_term:
            return []
        peer = msg.follower
        if msg.success:
            if msg.match_index > self.match_index[peer]:
                self.match_index[peer] = msg.match_index
            self.next_index[peer] = self.match_index[peer] + 1
            out = self._advance_commit()
            if self.next_index[peer] <= self.last_index:
                out.append((peer, self._append_for(peer)))
            return out
        self.next_index[peer] = max(1, min(self.next_index[peer] - 1, msg.match_index + 1))
        return [(peer, self._append_for(peer))]

    def _advance_commit(self) -> list[tuple[str, Message]]:
        for n in range(self.last_index, self.commit_index, -1):
            if self.log[n - 1].term != self.current_term:
                break
            replicas = 1 + sum(1 for p in self.peers if self.match_index[p] >= n)
            if replicas >= self.majority:
                self.commit_index = n
                self._apply()
                break
        return []

    def _apply(self) -> None:
        while self.last_applied < self.commit_index:
            self.last_applied += 1
            self.cluster.applied(self, self.last_applied, self.log[self.last_applied - 1])

    # -- elections ------------------------------------------------------

    def _on_request_vote(self, msg: RequestVote) -> list[tuple[str, Message]]:
        if msg.term > self.current_term:
            self._become_follower(msg.term)
        granted = False
        if msg.term == self.current_term and self.voted_for in (None, msg.candidate):
            up_to_date = (msg.last_term, msg.last_index) >= (self.last_term, self.last_index)
            if up_to_date:
                granted = True
                self.voted_for = msg.candidate
                self.reset_election_timer()
        return [(msg.candidate, VoteReply(self.current_term, self.node_id, granted))]

    def _on_vote_reply(self, msg: VoteReply) -> list[tuple[str, Message]]:
        if msg.term > self.current_term:
            self._become_follower(msg.term)
            return []
        if self.role is not Role.CANDIDATE or msg.term != self.current_term or not msg.granted:
            return []
        self.votes.add(msg.voter)
        if len(self.votes) >= self.majority:
            return self._become_leader()
        return []

    # -- faults ---------------------------------------------------------

    def crash(self) -> None:
        self.crashed = True
        self.stop_timers()
        # volatile state is lost; term, vote and log persist
        self.role = Role.FOLLOWER
        self.leader_id = None
        self.commit_index = 0
        self.last_applied = 0
        self.votes = set()
        self.held = []
        if self.stage is not None:
            self.stage.drain()
        self.stage = None

    def recover(self) -> None:
        self.crashed = False
        self.reset_election_timer()


class RaftCluster:
    """A set of Raft nodes on a simulated network, plus safety monitors."""

    def __init__(
        self,
        loop: EventLoop,
        net: Network,
        cfg: OrdererConfig,
        seed: int = 0,
        prefix: str = "raft",
        on_commit: Callable[[str, int, LogEntry], None] | None = None,
    ):
        self.loop = loop
        self.net = net
        self.cfg = cfg
        self.seed = seed
        self.node_ids = [f"{prefix}{i}" for i in range(cfg.size)]
        self.on_commit = on_commit
        self.leaders_by_term: dict[int, set[str]] = {}
        self.committed: dict[int, tuple] = {}
        self.violations: list[str] = []
        self.nodes = {n: RaftNode(n, self) for n in self.node_ids}

    def start(self) -> None:
        for node in self.nodes.values():
            node.reset_election_timer()

    def leader(self) -> RaftNode | None:
        live = [n for n in self.nodes.values() if n.role is Role.LEADER and not n.crashed]
        return max(live, key=lambda n: n.current_term) if live else None

    # -- plumbing -------------------------------------------------------

    def fire(self, node_id: str, event: Event) -> None:
        self.dispatch(node_id, self.nodes[node_id].step(event))

    def dispatch(self, src: str, outbound: list[tuple[str, Message]]) -> None:
        for dst, msg in outbound:
            self.net.send(src, dst, self.fire, dst, msg, droppable=not isinstance(msg, ClientTx))

    def deliver_client_tx(self, node_id: str, tx: Transaction) -> None:
        self.fire(node_id, ClientTx(tx))

    # -- monitors -------------------------------------------------------

    def violation(self, text: str) -> None:
        self.violations.append(f"{self.loop.now:.3f}: {text}")

    def record_leader(self, term: int, node_id: str) -> None:
        leaders = self.leaders_by_term.setdefault(term, set())
        leaders.add(node_id)
        if len(leaders) > 1:
            self.violation(f"election safety: term {term} has leaders {sorted(leaders)}")

    def applied(self, node: RaftNode, index: int, entry: LogEntry) -> None:
        seen = self.committed.get(index)
        if seen is None:
            self.committed[index] = entry.key
            if self.on_commit is not None:
                self.on_commit(node.node_id, index, entry)
        elif seen != entry.key:
            self.violation(f"durability: index {index} applied as {entry.key[0]} after {seen[0]}")

    def log_matching_violations(self) -> list[str]:
        problems = []
        nodes = list(self.nodes.values())
        for a_pos, a in enumerate(nodes):
            for b in nodes[a_pos + 1:]:
                common = min(a.last_index, b.last_index)
                for i in range(common, 0, -1):
                    if a.log[i - 1].term == b.log[i - 1].term:
                        if [e.key for e in a.log[:i]] != [e.key for e in b.log[:i]]:
                            problems.append(f"log matching: {a.node_id}/{b.node_id} differ below index {i}")
                        break
        return problems

    def durability_violations(self) -> list[str]:
        """Committed entries missing from a live node that has caught up past them."""
        problems = []
        for node in self.nodes.values():
            for index, key in self.committed.items():
                if index <= node.commit_index and node.log[index - 1].key != key:
                    problems.append(f"durability: {node.node_id} index {index} diverged")
        return problems


def raft_step(cluster: RaftCluster, node_id: str, event: Event) -> list[tuple[str, Message]]:
    """Feed one event to one node, send its replies, and return them."""
    outbound = cluster.nodes[node_id].step(event)
    cluster.dispatch(node_id, outbound)
    return outbound


class RaftOrderer(OrderingService):
    kind = "raft"

    def __init__(self, loop: EventLoop, cfg: OrdererConfig, net: Network, deliver, seed: int = 0):
        super().__init__(loop, cfg, net, deliver)
        self.cluster = RaftCluster(loop, net, cfg, seed=seed, on_commit=self._committed)
        self.nodes = list(self.cluster.node_ids)

    def start(self) -> None:
        self.cluster.start()

    def ready(self) -> bool:
        leader = self.cluster.leader()
        return leader is not None and all(
            n.leader_id == leader.node_id for n in self.cluster.nodes.values() if not n.crashed)

    def submit(self, tx: Transaction, client: str) -> Ack:
        entry = self.cluster.nodes[self.entry_node(client)]
        if entry.crashed or entry.leader_id is None:
            return Ack(False, self.cfg.heartbeat_ms)
        self.net.send(client, entry.node_id, self.cluster.deliver_client_tx, entry.node_id, tx,
                      droppable=False)
        return ACK

    def _committed(self, node_id: str, index: int, entry: LogEntry) -> None:
        if entry.batch:
            # the batch was cut when the leader appended it; the block is cut on commit
            self.release(list(entry.batch), self.loop.now, node_id)


# --------------------------------------------------------------------------
# Fault-injection harness


@dataclass
class ChaosReport:
    seed: int
    size: int
    drop_probability: float
    crashes: int
    elections: int
    committed: int
    violations: list[str]

    @property
    def safe(self) -> bool:
        return not self.violations


def chaos_run(
    seed: int,
    duration_ms: float = 4000.0,
    max_drop: float = 0.2,
    sizes: tuple[int, ...] = (3, 5),
    tx_interval_ms: float = 15.0,
) -> ChaosReport:
    """One randomized run with crashes (never more than a minority down) and drops.

    Timers are scaled down (election 150-300 ms, heartbeat 50 ms) so a few
    seconds of simulated time see many elections. Safety monitors run
    throughout; log matching and durability are also checked at the end.
    """
    from ..sim import NetworkModel  # local: keeps the module import graph flat

    rng = derive_rng(seed, "raft-chaos")
    size = int(rng.choice(sizes))
    drop = float(rng.uniform(0.0, max_drop))
    cfg = OrdererConfig(service="raft", cluster_size=size, batch_size=4, batch_timeout_ms=40.0,
                        election_timeout_ms=(150.0, 300.0), heartbeat_ms=50.0,
                        net=NetworkModel(drop_probability=drop, seed=seed))
    loop = EventLoop()
    net = Network(loop, cfg.net, "chaos")
    cluster = RaftCluster(loop, net, cfg, seed=seed)
    cluster.start()
    down: list[str] = []
    stats = {"crashes": 0, "tx": 0}

    def client() -> None:
        live = [n for n in cluster.node_ids if n not in down]
        target = live[int(rng.integers(len(live)))]
        tx = Transaction(f"c{stats['tx']}", "client", "chaos", {})
        stats["tx"] += 1
        net.send("client", target, cluster.deliver_client_tx, target, tx, droppable=False)
        if loop.now + tx_interval_ms < duration_ms:
            loop.after(tx_interval_ms, client)

    def fault() -> None:
        can_crash = len(down) < (size - 1) // 2
        if down and (not can_crash or rng.random() < 0.5):
            node = down.pop(int(rng.integers(len(down))))
            net.down.discard(node)
            cluster.nodes[node].recover()
        elif can_crash:
            live = [n for n in cluster.node_ids if n not in down]
            # bias towards killing the leader, the interesting case
            leader = cluster.leader()
            if leader is not None and rng.random() < 0.6:
                node = leader.node_id
            else:
                node = live[int(rng.integers(len(live)))]
            down.append(node)
            net.down.add(node)
            cluster.nodes[node].crash()
            stats["crashes"] += 1
        if loop.now < duration_ms:
            loop.after(float(rng.uniform(100.0, 600.0)), fault)

    loop.after(1.0, client)
    loop.after(float(rng.uniform(200.0, 600.0)), fault)
    loop.run(until=duration_ms)
    for node in list(down):
        net.down.discard(node)
        cluster.nodes[node].recover()
    loop.run(until=duration_ms + 1500.0)
    violations = cluster.violations + cluster.log_matching_violations() + cluster.durability_violations()
    return ChaosReport(seed, size, drop, stats["crashes"], len(cluster.leaders_by_term),
                       len(cluster.committed), violations)
