"""Kafka-style ordering modeled as a single-partition quorum-replicated log.

Broker internals are not simulated. An append gets an offset immediately;
each broker confirms it after one sampled network latency, and the record
is acknowledged once ``quorum`` brokers have confirmed. Records become
consumable strictly in offset order, so a stalled record holds back all
later ones and nothing is ever reordered.
"""

from __future__ import annotations

from typing import Any, Callable, Sequence

from ..ledger import Transaction
from ..sim import EventLoop, Network, Timer
from .base import ACK, Ack, OrdererConfig, OrderingService
from .cutter import CuttingStage


def quorum_ack_delay(confirm_delays: Sequence[float], quorum: int) -> float | None:
    """Delay until the ``quorum``-th confirmation, or None if it never comes."""
    if quorum < 1 or len(confirm_delays) < quorum:
        return None
    return sorted(confirm_delays)[quorum - 1]


class ReplicatedLog:
    def __init__(
        self,
        loop: EventLoop,
        net: Network,
        brokers: Sequence[str],
        quorum: int,
        on_consumable: Callable[[int, Any], None],
    ):
        if not 1 <= quorum <= len(brokers):
            raise ValueError("quorum must lie in [1, number of brokers]")
        self.loop = loop
        self.net = net
        self.brokers = list(brokers)
        self.quorum = quorum
        self.on_consumable = on_consumable
        self.records: list[Any] = []
        self.confirmed: list[set[str]] = []
        self.acked_at: list[float | None] = []
        self.high_watermark = 0  # offsets below this have been released
        self.down: set[str] = set()
        self._inflight: dict[str, dict[int, Timer]] = {b: {} for b in self.brokers}

    def append(self, record: Any) -> int:
        offset = len(self.records)
        self.records.append(record)
        self.confirmed.append(set())
        self.acked_at.append(None)
        for broker in self.brokers:
            if broker not in self.down:
                self._schedule_confirm(broker, offset)
        return offset

    def _schedule_confirm(self, broker: str, offset: int) -> None:
        delay = self.net.sample_latency()
        self._inflight[broker][offset] = self.loop.after(delay, self._confirm, broker, offset)

    def _confirm(self, broker: str, offset: int) -> None:
        self._inflight[broker].pop(offset, None)
        if broker in self.down:
            return
        self.confirmed[offset].add(broker)
        if self.acked_at[offset] is None and len(self.confirmed[offset]) >= self.quorum:
            self.acked_at[offset] = self.loop.now
            self.loop.trace(broker, "ack", offset)
            self._release()

    def _release(self) -> None:
        while self.high_watermark < len(self.records) and self.acked_at[self.high_watermark] is not None:
            offset = self.high_watermark
            self.high_watermark += 1
            self.on_consumable(offset, self.records[offset])

    def crash(self, broker: str) -> None:
        self.down.add(broker)
        for timer in self._inflight[broker].values():
            timer.cancel()
        self._inflight[broker] = {}
        self.loop.trace(broker, "crash")

    def recover(self, broker: str) -> None:
        self.down.discard(broker)
        self.loop.trace(broker, "recover")
        for offset in range(len(self.records)):
            if broker not in self.confirmed[offset]:
                self._schedule_confirm(broker, offset)

    @property
    def stalled(self) -> bool:
        return len(self.brokers) - len(self.down) < self.quorum


def kafka_order(log: ReplicatedLog, transactions: Sequence[Transaction]) -> list[int]:
    """Append a stream of transactions; returns their offsets (the total order)."""
    return [log.append(tx) for tx in transactions]


class KafkaOrderer(OrderingService):
    """One ordering node producing to and consuming from the replicated log.

    Path of a transaction: client -> orderer -> partition leader (one hop),
    quorum acknowledgement, then leader -> orderer on consumption (one hop),
    where the batch cutter runs.
    """

    kind = "kafka"
    OSN = "osn0"

    def __init__(self, loop: EventLoop, cfg: OrdererConfig, net: Network, deliver, seed: int = 0):
        super().__init__(loop, cfg, net, deliver)
        self.brokers = [f"broker{i}" for i in range(cfg.size)]
        self.nodes = [self.OSN]
        self.log = ReplicatedLog(loop, net, self.brokers, cfg.quorum, self._consumable)
        self.stage = CuttingStage(loop, cfg.batch_size, cfg.batch_timeout_ms,
                                  lambda batch, t: self.release(batch, t, self.OSN))
        self._seen: set[str] = set()

    def submit(self, tx: Transaction, client: str) -> Ack:
        self.net.send(client, self.OSN, self._produce, tx, droppable=False)
        return ACK

    def _produce(self, tx: Transaction) -> None:
        self.net.send(self.OSN, self.brokers[0], self.log.append, tx, droppable=False)

    def _consumable(self, offset: int, tx: Transaction) -> None:
        self.net.send(self.brokers[0], self.OSN, self._consume, tx, droppable=False)

    def _consume(self, tx: Transaction) -> None:
        if tx.tx_id in self._seen:
            return
        self._seen.add(tx.tx_id)
        self.stage.offer(tx)
