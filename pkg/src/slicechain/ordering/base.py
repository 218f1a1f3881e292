from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from typing import Callable, NamedTuple

from ..ledger import Transaction
from ..sim import EventLoop, Network, NetworkModel

SERVICES = ("solo", "raft", "kafka")
PEER = "peer"

Deliver = Callable[[list[Transaction], float], None]


@dataclass(frozen=True)
class OrdererConfig:
    service: str = "solo"
    batch_size: int = 20
    batch_timeout_ms: float = 300.0
    cluster_size: int | None = None
    quorum: int = 2
    election_timeout_ms: tuple[float, float] = (1000.0, 2000.0)
    heartbeat_ms: float = 100.0
    net: NetworkModel = field(default_factory=NetworkModel)

    def __post_init__(self):
        if self.service not in SERVICES:
            raise ValueError(f"service must be one of {SERVICES}, got {self.service!r}")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.batch_timeout_ms <= 0:
            raise ValueError("batch_timeout_ms must be > 0")
        n = self.size
        if self.service == "solo" and n != 1:
            raise ValueError("solo ordering runs exactly one node")
        if self.service == "raft" and (n < 3 or n % 2 == 0):
            raise ValueError("raft needs an odd cluster_size >= 3")
        if self.service == "kafka":
            if n < 3:
                raise ValueError("kafka needs cluster_size >= 3")
            if not 1 <= self.quorum <= n:
                raise ValueError("kafka quorum must lie in [1, cluster_size]")
        lo, hi = self.election_timeout_ms
        if not 0 < lo <= hi:
            raise ValueError("election_timeout_ms must be a range 0 < lo <= hi")
        if self.heartbeat_ms <= 0:
            raise ValueError("heartbeat_ms must be > 0")

    @property
    def size(self) -> int:
        if self.cluster_size is not None:
            return self.cluster_size
        return 1 if self.service == "solo" else 3


class Ack(NamedTuple):
    accepted: bool
    retry_after_ms: float = 0.0


ACK = Ack(True)


class OrderingService:
    """Common plumbing: client binding, exactly-once release, in-order delivery."""

    kind = "?"

    def __init__(self, loop: EventLoop, cfg: OrdererConfig, net: Network, deliver: Deliver):
        self.loop = loop
        self.cfg = cfg
        self.net = net
        self.deliver = deliver
        self.nodes: list[str] = []
        self._released_ids: set[str] = set()
        self._next_seq = 0
        self._expected_seq = 0
        self._arrived: dict[int, tuple[list[Transaction], float]] = {}
        self.blocks_released = 0

    def start(self) -> None:
        pass

    def ready(self) -> bool:
        return True

    def entry_node(self, client: str) -> str:
        return self.nodes[zlib.crc32(client.encode()) % len(self.nodes)]

    def submit(self, tx: Transaction, client: str) -> Ack:
        raise NotImplementedError

    def release(self, batch: list[Transaction], cut_time: float, node: str) -> None:
        """Hand an ordered batch to the committing peer, dropping repeats."""
        fresh = [tx for tx in batch if tx.tx_id not in self._released_ids]
        if not fresh:
            return
        self._released_ids.update(tx.tx_id for tx in fresh)
        seq = self._next_seq
        self._next_seq += 1
        self.blocks_released += 1
        self.loop.trace(node, "cut", len(fresh))
        self.net.send(node, PEER, self._arrive, seq, fresh, cut_time, droppable=False)

    def _arrive(self, seq: int, batch: list[Transaction], cut_time: float) -> None:
        self._arrived[seq] = (batch, cut_time)
        while self._expected_seq in self._arrived:
            batch, cut_time = self._arrived.pop(self._expected_seq)
            self._expected_seq += 1
            self.deliver(batch, cut_time)
