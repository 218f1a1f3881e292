import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from slicechain.contracts import REGISTRY, Direction, TenantAccount
from slicechain.ledger import Transaction, TxFlag, holding_key, registry_key, sign_transaction
from slicechain.ordering import OrdererConfig
from slicechain.sim import derive_rng
from slicechain.workload import (
    DemandDistribution,
    Scenario,
    ScenarioConfig,
    draw_intents,
    generate_sr,
    opening_allocation,
    run_opening,
    run_scenario,
)

SMALL = dict(num_ibs=2, consortium_size=40, registry_units=40_000, sr_rate=60.0, duration_s=2.0, drain_s=2.0)


def small(**kw):
    return ScenarioConfig(**{**SMALL, **kw})


def test_opening_allocation_equal_split():
    assert opening_allocation(10, 3) == [4, 3, 3]
    assert opening_allocation(9, 3) == [3, 3, 3]
    with pytest.raises(ValueError):
        opening_allocation(2, 3)


@given(st.integers(1, 10_000), st.integers(1, 200))
def test_opening_allocation_sums_to_capacity(capacity, n):
    if n > capacity:
        return
    alloc = opening_allocation(capacity, n)
    assert sum(alloc) == capacity and max(alloc) - min(alloc) <= 1


def test_intents_within_bounds_and_signed():
    rng = derive_rng(0, "t")
    initial = [(1000, 1000, 1000)] * 100
    intents = draw_intents(initial, 30.0, 0.5, rng)
    assert sum(1 for d in intents if d[0] < 0 or d[1] < 0) == 50
    for d in intents:
        assert all(abs(v) <= 300 for v in d)
        assert all(v <= 0 for v in d) or all(v >= 0 for v in d)


def test_demand_distribution():
    dist = DemandDistribution()
    assert dist.right_skewed
    assert dist.mean == pytest.approx(0.1 + 3.9 * 2 / 7)
    xs = dist.sample(np.random.default_rng(1), 50_000)
    assert xs.min() >= 0.1 and xs.max() <= 4.0
    assert xs.mean() == pytest.approx(dist.mean, abs=0.02)
    assert np.median(xs) < xs.mean()  # right skew
    with pytest.raises(ValueError):
        DemandDistribution(low=0)


def test_degenerate_demand_range():
    dist = DemandDistribution(2.0, 2.0)
    assert np.all(dist.sample(np.random.default_rng(0), 10) == 2.0)


def test_generate_sr():
    rng = np.random.default_rng(0)
    dist = DemandDistribution()
    sr = generate_sr(TenantAccount("a", (10, 10, 10), [3, 3, 3]), dist, rng)
    assert sr.direction is Direction.ACQUIRE and sr.counterparty is None
    assert all(0.1 <= s <= 4.0 for s in sr.shares)
    sr = generate_sr(TenantAccount("a", (10, 10, 10), [-3, -3, -3]), dist, rng)
    assert sr.direction is Direction.RELEASE
    assert generate_sr(TenantAccount("a", (10, 10, 10), [3, 0, 3]), dist, rng) is None


@pytest.mark.parametrize("kw", [
    dict(num_ibs=0), dict(sr_rate=0), dict(consortium_size=10, registry_units=5),
    dict(demand_range=(2.0, 1.0)), dict(arrival="bursty"), dict(admission="auction"),
    dict(freer_fraction=1.5), dict(intent_fraction_max=150), dict(seed=-1),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        small(**kw)


def test_config_dict_round_trip():
    cfg = small(consensus=OrdererConfig(service="kafka", batch_size=5))
    again = ScenarioConfig.from_dict(json.loads(json.dumps(cfg.to_dict())))
    assert again == cfg
    with pytest.raises(ValueError):
        ScenarioConfig.from_dict({"nope": 1})


def test_scheduled_srs():
    assert small(sr_rate=150, duration_s=10).scheduled_srs == 1500
    assert small(sr_rate=0.3, duration_s=10).scheduled_srs == 3


def test_opening_state_matches_split():
    results = run_opening(small(consortium_size=3, registry_units=10))
    assert [r.channel for r in results] == ["ib0", "ib1"]
    for r in results:
        assert [r.state.value(holding_key(t, "radio")) for t in ("t0", "t1", "t2")] == [4, 3, 3]
        assert r.state.value(registry_key("core")) == 0
        assert r.state.conserved(full=True)
        assert set(r.accounts) == {"t0", "t1", "t2"}


@pytest.fixture(scope="module")
def solo_run():
    sc = Scenario(small())
    return sc, sc.run()


def test_outcomes_partition_submissions(solo_run):
    _, rep = solo_run
    t = rep.totals
    assert t["submitted"] == 2 * 120
    assert t["committed"] + t["rw_conflict"] + t["sr_collision"] + t["bad_signature"] + t["in_flight"] \
        == t["submitted"]
    assert t["committed"] > 0 and t["bad_signature"] == 0


def test_every_channel_conserves(solo_run):
    sc, rep = solo_run
    for ch in sc.channels:
        assert ch.ledger.state.conserved(full=True)
        assert rep.channels[ch.name]["conserved"]


def test_satisfaction_is_absorbing(solo_run):
    sc, _ = solo_run
    for ch in sc.channels:
        for t, when in ch.retired_at.items():
            assert ch.accounts[t].satisfied
            assert all(tenant != t or at <= when for at, tenant in ch.issue_log)


def test_latency_measured_from_issue_to_commit(solo_run):
    _, rep = solo_run
    assert all(s.latency > 0 for s in rep.latencies)
    assert len(rep.latencies) == rep.totals["committed"]


def test_determinism():
    a = run_scenario(small(seed=5)).summary()
    b = run_scenario(small(seed=5)).summary()
    c = run_scenario(small(seed=6)).summary()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    assert a != c


@pytest.mark.parametrize("service", ["raft", "kafka"])
def test_replicated_services_run(service):
    rep = run_scenario(small(num_ibs=1, consensus=OrdererConfig(service=service)))
    assert rep.totals["committed"] > 0
    assert all(ch["conserved"] for ch in rep.channels.values())


def test_poisson_arrivals():
    rep = run_scenario(small(num_ibs=1, arrival="poisson", duration_s=5.0))
    assert 200 < rep.totals["submitted"] < 400


def test_batch_admission_with_empty_pool_admits_nothing():
    rep = run_scenario(small(num_ibs=1, admission="batch", freer_fraction=0.0))
    assert rep.totals["committed"] == 0 and rep.totals["in_flight"] == 0
    assert rep.collision_reasons["ADMISSION_REJECTED"] > 0


def test_batch_admission_allocates_from_pool():
    cfg = small(num_ibs=1, admission="batch", freer_fraction=0.0, sr_rate=40.0)
    sc = Scenario(cfg)
    sc.run_opening()
    ch = sc.channels[0]
    # return most of t00's holding to the pool so there is stock to sell
    state = ch.ledger.state
    reads, writes = [], []
    for r in ("radio", "transport", "core"):
        hk, rk = holding_key("t00", r), registry_key(r)
        reads += [(hk, state.version(hk)), (rk, state.version(rk))]
        writes += [(hk, 100), (rk, state.value(rk) + state.value(hk) - 100)]
    tx = sign_transaction(Transaction("seed-pool", ch.ib_key.public_id, ch.name, {"contract": "opening"},
                                      tuple(reads), tuple(writes)), ch.ib_key)
    assert ch.ledger.append([tx], sc.loop.now).validity == [TxFlag.COMMITTED]
    ch.accounts["t00"].target_delta = [0, 0, 0]
    sc.t0 = sc.loop.now
    sc.sample_growth()
    ch.start_transfer(sc.t0)
    sc.loop.run(until=sc.t0 + (cfg.duration_s + cfg.drain_s) * 1000.0)
    rep = sc.report()
    allocs = [(tx, f) for b in ch.ledger.chain for tx, f in zip(b.transactions, b.validity)
              if tx.payload["contract"] == "allocation"]
    assert allocs and all(tx.sender == ch.ib_key.public_id for tx, _ in allocs)
    assert rep.totals["committed"] > 0 and rep.totals["in_flight"] == 0
    assert ch.ledger.state.conserved(full=True)


def test_matchmaker_prefers_idle_then_pool():
    sc = Scenario(small(num_ibs=1, consortium_size=4, registry_units=4000))
    sc.run_opening()
    ch = sc.channels[0]
    for t, d in zip(ch.tenants, ([10, 10, 10], [-50, -50, -50], [-80, -80, -80], [5, 5, 5])):
        ch.accounts[t].target_delta = d
    sc.t0 = sc.loop.now
    ch.start_transfer(sc.t0)
    from slicechain.contracts import SliceRequest
    sr = SliceRequest("t0", 1, 1, 1, Direction.ACQUIRE)
    assert ch.match(sr) == "t2"
    ch.busy[ch.index["t2"]] = 1
    assert ch.match(sr) == "t1"
    ch.freer_mask[:] = False
    assert ch.match(sr) == REGISTRY
