from __future__ import annotations

from ..ledger import Transaction
from .base import ACK, Ack, OrderingService
from .cutter import CuttingStage


class SoloOrderer(OrderingService):
    """A single orderer node; no replication, no consensus round-trips."""

    kind = "solo"

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.nodes = ["solo0"]
        self._seen: set[str] = set()
        self.stage = CuttingStage(self.loop, self.cfg.batch_size, self.cfg.batch_timeout_ms,
                                  lambda batch, t: self.release(batch, t, "solo0"))

    def submit(self, tx: Transaction, client: str) -> Ack:
        self.net.send(client, "solo0", self._receive, tx, droppable=False)
        return ACK

    def _receive(self, tx: Transaction) -> None:
        if tx.tx_id in self._seen:
            return
        self._seen.add(tx.tx_id)
        self.stage.offer(tx)
