"""Ordering services turning submitted transactions into an ordered block stream."""

from ..sim import EventLoop, Network
from .base import ACK, PEER, SERVICES, Ack, Deliver, OrdererConfig, OrderingService
from .cutter import CuttingStage, cut_block
from .kafka import KafkaOrderer, ReplicatedLog, kafka_order, quorum_ack_delay
from .raft import ChaosReport, RaftCluster, RaftNode, RaftOrderer, Role, chaos_run, raft_step
from .solo import SoloOrderer


def make_orderer(loop: EventLoop, cfg: OrdererConfig, net: Network, deliver: Deliver, seed: int = 0) -> OrderingService:
    if cfg.service == "solo":
        return SoloOrderer(loop, cfg, net, deliver)
    if cfg.service == "raft":
        return RaftOrderer(loop, cfg, net, deliver, seed=seed)
    return KafkaOrderer(loop, cfg, net, deliver, seed=seed)


__all__ = [
    "ACK", "PEER", "SERVICES", "Ack", "ChaosReport", "CuttingStage", "KafkaOrderer", "OrdererConfig",
    "OrderingService", "RaftCluster", "RaftNode", "RaftOrderer", "ReplicatedLog", "Role",
    "SoloOrderer", "chaos_run", "cut_block", "kafka_order", "make_orderer", "quorum_ack_delay", "raft_step",
]
