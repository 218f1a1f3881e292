import pytest

from slicechain.ledger import Transaction
from slicechain.ordering import OrdererConfig, RaftCluster, RaftNode, Role, chaos_run, raft_step
from slicechain.ordering.raft import AppendEntries, ClientTx, RequestVote, Timeout, VoteReply
from slicechain.sim import EventLoop, Network

FAST = dict(election_timeout_ms=(150.0, 300.0), heartbeat_ms=50.0, batch_size=4, batch_timeout_ms=40.0)


def cluster(size=3, seed=0, **kw):
    cfg = OrdererConfig(service="raft", cluster_size=size, **{**FAST, **kw})
    loop = EventLoop()
    net = Network(loop, cfg.net, "raft-test")
    return loop, net, RaftCluster(loop, net, cfg, seed=seed)


def tx(i):
    return Transaction(f"x{i}", "client", "ch", {})


def test_single_leader_elected():
    loop, _, c = cluster()
    c.start()
    loop.run(until=2000)
    leaders = [n for n in c.nodes.values() if n.role is Role.LEADER]
    assert len(leaders) == 1
    assert all(n.leader_id == leaders[0].node_id for n in c.nodes.values())
    assert not c.violations


def test_replication_commits_in_order_on_every_node():
    loop, net, c = cluster(size=5)
    c.start()
    loop.run(until=1000)
    for i in range(20):
        target = c.node_ids[i % 5]
        loop.at(1000 + 5 * i, c.deliver_client_tx, target, tx(i))
    loop.run(until=3000)
    batches = [c.nodes[c.node_ids[0]].log[i - 1].batch for i in sorted(c.committed)]
    ids = [t.tx_id for b in batches for t in b]
    assert sorted(ids) == sorted(f"x{i}" for i in range(20))
    assert len(ids) == len(set(ids))
    assert all(n.commit_index == max(c.committed) for n in c.nodes.values())
    assert not c.log_matching_violations() and not c.durability_violations()


def test_leader_crash_triggers_new_election_and_progress():
    loop, net, c = cluster()
    c.start()
    loop.run(until=1000)
    old = c.leader()
    old.crash()
    net.down.add(old.node_id)
    loop.run(until=2500)
    new = c.leader()
    assert new is not None and new.node_id != old.node_id
    assert new.current_term > old.current_term
    before = len(c.committed)
    loop.at(2600, c.deliver_client_tx, new.node_id, tx(1))
    loop.run(until=3500)
    assert len(c.committed) > before
    net.down.discard(old.node_id)
    old.recover()
    loop.run(until=5000)
    assert old.role is Role.FOLLOWER
    assert old.commit_index == new.commit_index
    assert not c.violations


def test_minority_partition_cannot_commit():
    loop, net, c = cluster()
    c.start()
    loop.run(until=1000)
    leader = c.leader()
    others = [n for n in c.node_ids if n != leader.node_id]
    for n in others:
        net.down.add(n)
        c.nodes[n].crash()
    committed = dict(c.committed)
    loop.at(1100, c.deliver_client_tx, leader.node_id, tx(9))
    loop.run(until=3000)
    assert c.committed == committed


def test_step_is_pure_dispatch():
    loop, _, c = cluster()
    out = raft_step(c, "raft0", Timeout("election"))
    assert {dst for dst, _ in out} == {"raft1", "raft2"}
    assert all(isinstance(m, RequestVote) and m.term == 1 for _, m in out)
    assert c.nodes["raft0"].role is Role.CANDIDATE


def test_stale_term_append_rejected():
    _, _, c = cluster()
    node = c.nodes["raft1"]
    node.current_term = 5
    out = node.step(AppendEntries(3, "raft0", 0, 0, (), 0))
    assert out[0][1].success is False and out[0][1].term == 5


def test_crashed_node_ignores_events():
    _, _, c = cluster()
    node = c.nodes["raft1"]
    node.crash()
    assert node.step(ClientTx(tx(0))) == []


class PromiscuousVoter(RaftNode):
    """Grants every vote request in its term: breaks one-vote-per-term."""

    def _on_request_vote(self, msg):
        if msg.term > self.current_term:
            self._become_follower(msg.term)
        return [(msg.candidate, VoteReply(self.current_term, self.node_id, True))]


def split_vote_script(c):
    a, b, voter = c.nodes["raft1"], c.nodes["raft2"], c.nodes["raft0"]
    (_, req_a), = [m for m in a.step(Timeout("election")) if m[0] == "raft0"]
    (_, req_b), = [m for m in b.step(Timeout("election")) if m[0] == "raft0"]
    (_, reply_a), = voter.step(req_a)
    (_, reply_b), = voter.step(req_b)
    a.step(reply_a)
    b.step(reply_b)


def test_monitor_catches_double_vote_bug():
    _, _, c = cluster()
    c.nodes["raft0"] = PromiscuousVoter("raft0", c)
    split_vote_script(c)
    assert any("election safety" in v for v in c.violations)


def test_correct_voter_refuses_second_candidate():
    _, _, c = cluster()
    split_vote_script(c)
    assert not c.violations
    assert [n.role for n in c.nodes.values()].count(Role.LEADER) == 1


def test_orderer_config_validation():
    with pytest.raises(ValueError):
        OrdererConfig(service="raft", cluster_size=4)
    with pytest.raises(ValueError):
        OrdererConfig(service="raft", cluster_size=1)


@pytest.mark.parametrize("seed", range(10))
def test_chaos_runs_are_safe(seed):
    report = chaos_run(seed)
    assert report.safe, report.violations
    assert report.committed > 0


def test_chaos_is_deterministic():
    assert chaos_run(3) == chaos_run(3)
