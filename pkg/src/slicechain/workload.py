"""Two-phase benchmark driver: opening (equal split of the registry) and transfer.

Every IB runs an independent channel (ledger, ordering service, tenants) on
one shared event loop. During the transfer phase each channel issues slice
requests at a fixed rate; a request is matched with a counterparty,
endorsed against the committed state, ordered, and validated.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Any

import numpy as np

from .admission import instance_from_requests, solve_exact
from .contracts import (
    REGISTRY,
    RESOURCE_TYPES,
    Collision,
    Direction,
    GeneralRequest,
    SliceRequest,
    TenantAccount,
    init_registry,
    request_amounts,
    simulate_transfer,
    still_feasible,
    transfer_transaction,
)
from .ledger import (
    KeyPair,
    Ledger,
    Membership,
    Transaction,
    TxFlag,
    WorldState,
    holding_key,
    registry_key,
    sign_transaction,
)
from .metrics import ChainGrowthSample, LatencySample, MetricsReport, OutcomeCounters
from .ordering import OrdererConfig, make_orderer
from .sim import EventLoop, Network, NetworkModel, derive_rng, derive_seed

ARRIVALS = ("deterministic", "poisson")
ADMISSION_MODES = ("first_come", "batch")

_OUTCOME = {
    TxFlag.COMMITTED: "committed",
    TxFlag.RW_CONFLICT: "rw_conflict",
    TxFlag.SR_COLLISION: "sr_collision",
    TxFlag.BAD_SIGNATURE: "bad_signature",
}


@dataclass(frozen=True)
class DemandDistribution:
    """Beta(alpha, beta) rescaled onto [low, high] percent."""

    low: float = 0.1
    high: float = 4.0
    alpha: float = 2.0
    beta: float = 5.0

    def __post_init__(self):
        if not 0 < self.low <= self.high:
            raise ValueError("demand bounds must satisfy 0 < low <= high")
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError("shape parameters must be positive")

    @property
    def right_skewed(self) -> bool:
        return self.alpha < self.beta

    @property
    def mean(self) -> float:
        return self.low + (self.high - self.low) * self.alpha / (self.alpha + self.beta)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        draw = rng.beta(self.alpha, self.beta, size)
        return self.low + (self.high - self.low) * draw


@dataclass(frozen=True)
class ScenarioConfig:
    num_ibs: int = 3
    consortium_size: int = 1000
    sr_rate: float = 150.0             # per channel, SRs/s
    duration_s: float = 10.0
    demand_range: tuple[float, float] = (0.1, 4.0)
    demand_shape: tuple[float, float] = (2.0, 5.0)
    intent_fraction_max: float = 30.0
    consensus: OrdererConfig = field(default_factory=OrdererConfig)
    seed: int = 0
    registry_units: int = 1_000_000    # per resource type, per IB
    freer_fraction: float = 0.5
    service_time_ms: float = 2.0
    arrival: str = "deterministic"
    opening_rate: float = 1000.0       # opening transactions per second, per channel
    drain_s: float = 2.0
    admission: str = "first_come"
    batch_epoch_ms: float = 500.0
    batch_max_requests: int = 25
    unit_price_range: tuple[float, float] = (1.0, 10.0)
    signature_scheme: str = "hmac"
    opening_timeout_s: float = 120.0

    def __post_init__(self):
        object.__setattr__(self, "demand_range", tuple(float(v) for v in self.demand_range))
        object.__setattr__(self, "demand_shape", tuple(float(v) for v in self.demand_shape))
        object.__setattr__(self, "unit_price_range", tuple(float(v) for v in self.unit_price_range))
        for name in ("num_ibs", "consortium_size", "registry_units", "batch_max_requests"):
            v = getattr(self, name)
            if not isinstance(v, int) or isinstance(v, bool) or v <= 0:
                raise ValueError(f"{name} must be a positive integer")
        for name in ("sr_rate", "duration_s", "intent_fraction_max", "opening_rate",
                     "batch_epoch_ms", "opening_timeout_s"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.service_time_ms < 0 or self.drain_s < 0:
            raise ValueError("service_time_ms and drain_s must be non-negative")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool) or self.seed < 0:
            raise ValueError("seed must be a non-negative integer")
        if len(self.demand_range) != 2 or not 0 < self.demand_range[0] < self.demand_range[1]:
            raise ValueError("demand_range must be (low, high) with 0 < low < high")
        if len(self.demand_shape) != 2 or min(self.demand_shape) <= 0:
            raise ValueError("demand_shape must be two positive numbers (alpha, beta)")
        if self.intent_fraction_max > 100:
            raise ValueError("intent_fraction_max is a percentage in (0, 100]")
        if not 0.0 <= self.freer_fraction <= 1.0:
            raise ValueError("freer_fraction must lie in [0, 1]")
        if self.consortium_size > self.registry_units:
            raise ValueError("consortium_size exceeds registry_units: some tenant would get nothing")
        if self.arrival not in ARRIVALS:
            raise ValueError(f"arrival must be one of {ARRIVALS}")
        if self.admission not in ADMISSION_MODES:
            raise ValueError(f"admission must be one of {ADMISSION_MODES}")
        lo, hi = self.unit_price_range
        if not 0 <= lo <= hi:
            raise ValueError("unit_price_range must satisfy 0 <= low <= high")
        if self.signature_scheme not in ("hmac", "ed25519"):
            raise ValueError("signature_scheme must be hmac or ed25519")

    @property
    def demand(self) -> DemandDistribution:
        return DemandDistribution(*self.demand_range, *self.demand_shape)

    @property
    def scheduled_srs(self) -> int:
        """SRs per channel under the deterministic schedule."""
        return math.floor(self.sr_rate * self.duration_s + 1e-9)

    def to_dict(self) -> dict[str, Any]:
        d = asdict(self)
        return _listify(d)

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ScenarioConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown scenario field(s): {', '.join(sorted(unknown))}")
        data = dict(data)
        if "consensus" in data and isinstance(data["consensus"], dict):
            data["consensus"] = orderer_config_from_dict(data["consensus"])
        return cls(**data)


def orderer_config_from_dict(data: dict[str, Any]) -> OrdererConfig:
    known = {f.name for f in fields(OrdererConfig)}
    unknown = set(data) - known
    if unknown:
        raise ValueError(f"unknown consensus field(s): {', '.join(sorted(unknown))}")
    data = dict(data)
    if "net" in data and isinstance(data["net"], dict):
        net_known = {f.name for f in fields(NetworkModel)}
        bad = set(data["net"]) - net_known
        if bad:
            raise ValueError(f"unknown network field(s): {', '.join(sorted(bad))}")
        data["net"] = NetworkModel(**data["net"])
    if "election_timeout_ms" in data:
        data["election_timeout_ms"] = tuple(float(v) for v in data["election_timeout_ms"])
    return OrdererConfig(**data)


def _listify(obj):
    if isinstance(obj, dict):
        return {k: _listify(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_listify(v) for v in obj]
    return obj


# --------------------------------------------------------------------------
# Opening


def opening_allocation(capacity: int, n: int) -> list[int]:
    """Equal split; the remainder goes one unit each to the lowest ids."""
    if n <= 0:
        raise ValueError("need at least one tenant")
    if n > capacity:
        raise ValueError(f"{n} tenants cannot share {capacity} units")
    q, r = divmod(capacity, n)
    return [q + (1 if k < r else 0) for k in range(n)]


def draw_intents(
    initial: list[tuple[int, ...]],
    fraction_max: float,
    freer_fraction: float,
    rng: np.random.Generator,
) -> list[list[int]]:
    """Signed per-type intents: |delta| ~ U(0, fraction_max %) of the initial amount."""
    n = len(initial)
    freers = set(int(k) for k in rng.permutation(n)[: round(n * freer_fraction)])
    intents = []
    for k, alloc in enumerate(initial):
        frac = rng.uniform(0.0, fraction_max / 100.0, size=len(alloc))
        sign = -1 if k in freers else 1
        intents.append([sign * int(f * a) for f, a in zip(frac, alloc)])
    return intents


def generate_sr(account: TenantAccount, dist: DemandDistribution,
                rng: np.random.Generator) -> SliceRequest | None:
    """Draw one request for ``account``; None once its intent is exhausted."""
    if account.satisfied:
        return None
    rho, eta, gamma = (float(v) for v in dist.sample(rng, 3))
    direction = Direction.ACQUIRE if account.seeking else Direction.RELEASE
    return SliceRequest(account.tenant_id, rho, eta, gamma, direction)


@dataclass
class OpeningResult:
    channel: str
    state: WorldState
    accounts: dict[str, TenantAccount]


# --------------------------------------------------------------------------
# Channel


@dataclass
class _SRRecord:
    sr_id: str
    requester: str
    issue_time: float
    giver: str | None = None
    receiver: str | None = None
    amounts: tuple[int, ...] = ()
    prices: tuple[float, ...] = ()


class Channel:
    """One IB consortium: its ledger, ordering service, tenants and matchmaker."""

    def __init__(self, scenario: "Scenario", index: int):
        cfg = scenario.cfg
        self.sc = scenario
        self.cfg = cfg
        self.loop = scenario.loop
        self.name = f"ib{index}"
        width = len(str(cfg.consortium_size - 1))
        self.tenants = [f"t{k:0{width}d}" for k in range(cfg.consortium_size)]
        scheme = cfg.signature_scheme
        self.ib_key = KeyPair.derive(f"{self.name}/ib", cfg.seed, scheme)
        self.keys = {t: KeyPair.derive(f"{self.name}/{t}", cfg.seed, scheme) for t in self.tenants}
        self.membership = Membership([self.ib_key, *self.keys.values()])
        self.ledger = Ledger(self.membership)
        init_registry(self.ledger, self.ib_key, [cfg.registry_units] * len(RESOURCE_TYPES), self.name)
        self.net = Network(self.loop, cfg.consensus.net, cfg.seed, self.name)
        self.orderer = make_orderer(self.loop, cfg.consensus, self.net, self._on_block,
                                    seed=derive_seed(cfg.seed, self.name, "orderer"))
        self.pick_rng = derive_rng(cfg.seed, self.name, "requester")
        self.demand_rng = derive_rng(cfg.seed, self.name, "demand")
        self.arrival_rng = derive_rng(cfg.seed, self.name, "arrivals")
        self.price_rng = derive_rng(cfg.seed, self.name, "prices")
        self.dist = cfg.demand

        self.accounts: dict[str, TenantAccount] = {}
        self.opened = 0
        self.opening_done_at: float | None = None
        # matchmaking state; dicts keep deterministic iteration order
        self.eligible: list[str] = []
        self._eligible_pos: dict[str, int] = {}
        n, m = len(self.tenants), len(RESOURCE_TYPES)
        self.index = {t: k for k, t in enumerate(self.tenants)}
        self.need = np.zeros((n, m), dtype=np.int64)       # |remaining intent|
        self.reserved = np.zeros((n, m), dtype=np.int64)   # held by in-flight transfers
        self.busy = np.zeros(n, dtype=np.int64)
        self.freer_mask = np.zeros(n, dtype=bool)
        self.seeker_mask = np.zeros(n, dtype=bool)
        self.pool_reserved = [0] * m
        self.inflight: dict[str, list[_SRRecord]] = {}
        self.batch_queue: list[_SRRecord] = []
        self._issued = 0
        self._tx_seq = 0
        self._backlog: dict[str, list[Transaction]] = {}
        self.issue_log: list[tuple[float, str]] = []   # (time, requester) per SR
        self.retired_at: dict[str, float] = {}

    # ---- opening

    def start_opening(self) -> None:
        cfg = self.cfg
        n = len(self.tenants)
        per_type = opening_allocation(cfg.registry_units, n)
        initial = [tuple(per_type[k] for _ in RESOURCE_TYPES) for k in range(n)]
        intents = draw_intents(initial, cfg.intent_fraction_max, cfg.freer_fraction,
                               derive_rng(cfg.seed, self.name, "intents"))
        for t, alloc, delta in zip(self.tenants, initial, intents):
            self.accounts[t] = TenantAccount(t, alloc, delta)
        remaining = [cfg.registry_units] * len(RESOURCE_TYPES)
        client = f"{self.name}-admin"
        spacing = 1000.0 / cfg.opening_rate
        for k, t in enumerate(self.tenants):
            writes = []
            for i, rtype in enumerate(RESOURCE_TYPES):
                remaining[i] -= initial[k][i]
                writes.append((holding_key(t, rtype), initial[k][i]))
            # blind writes of the running remainder; FIFO links keep them in order
            writes += [(registry_key(r), remaining[i]) for i, r in enumerate(RESOURCE_TYPES)]
            tx = Transaction(f"{self.name}/open/{t}", self.ib_key.public_id, self.name,
                             {"contract": "opening", "args": {"tenant": t}}, (), tuple(writes))
            tx = sign_transaction(tx, self.ib_key)
            self.loop.after(k * spacing, self._submit, tx, client)

    def opening_result(self) -> OpeningResult:
        return OpeningResult(self.name, self.ledger.state.copy(),
                             {t: replace(a, target_delta=list(a.target_delta)) for t, a in self.accounts.items()})

    # ---- transfer

    def start_transfer(self, t0: float) -> None:
        for k, t in enumerate(self.tenants):
            acct = self.accounts[t]
            self.need[k] = acct.remaining()
            if acct.satisfied:
                continue
            self._eligible_pos[t] = len(self.eligible)
            self.eligible.append(t)
            (self.seeker_mask if acct.seeking else self.freer_mask)[k] = True
        self.t0 = t0
        self._schedule_issue(0)
        if self.cfg.admission == "batch":
            self.loop.at(t0 + self.cfg.batch_epoch_ms, self._epoch)

    def _schedule_issue(self, k: int) -> None:
        cfg = self.cfg
        if cfg.arrival == "deterministic":
            if k >= cfg.scheduled_srs:
                return
            self.loop.at(self.t0 + k * 1000.0 / cfg.sr_rate, self._issue, k)
        else:
            gap = float(self.arrival_rng.exponential(1000.0 / cfg.sr_rate))
            when = (self.t0 if k == 0 else self.loop.now) + gap
            if when - self.t0 >= cfg.duration_s * 1000.0:
                return
            self.loop.at(when, self._issue, k)

    def _retire(self, tenant: str) -> None:
        pos = self._eligible_pos.pop(tenant, None)
        if pos is None:
            return
        self.retired_at[tenant] = self.loop.now
        last = self.eligible.pop()
        if last != tenant:
            self.eligible[pos] = last
            self._eligible_pos[last] = pos
        k = self.index[tenant]
        self.freer_mask[k] = self.seeker_mask[k] = False

    def match(self, sr: SliceRequest) -> str:
        """Counterparty with the most remaining intent (net of reservations).

        Tenants already party to an in-flight transfer are avoided when any
        idle candidate exists; with no candidate the IB pool takes the role.
        """
        mask = self.freer_mask if sr.direction is Direction.ACQUIRE else self.seeker_mask
        score = (self.need - self.reserved).min(axis=1)
        ok = mask & (score > 0)
        ok[self.index[sr.requester]] = False
        if not ok.any():
            return REGISTRY
        # lexicographic (idle, score); argmax breaks ties toward the lowest id
        key = np.where(ok, score + (self.busy == 0) * (self.cfg.registry_units + 1), -1)
        return self.tenants[int(np.argmax(key))]

    def _issue(self, k: int) -> None:
        self._schedule_issue(k + 1)
        now = self.loop.now
        if not self.eligible:
            self.sc.idle_slots += 1
            return
        tenant = self.eligible[int(self.pick_rng.integers(len(self.eligible)))]
        sr = generate_sr(self.accounts[tenant], self.dist, self.demand_rng)
        sr = replace(sr, counterparty=self.match(sr))
        rec = _SRRecord(f"{self.name}/sr{self._issued}", tenant, now)
        self.issue_log.append((now, tenant))
        self._issued += 1
        self.sc.count("submitted", now)

        if self.cfg.admission == "batch" and sr.counterparty == REGISTRY \
                and sr.direction is Direction.ACQUIRE:
            rec.giver, rec.receiver = REGISTRY, tenant
            rec.amounts = request_amounts(sr, self.accounts[tenant].initial)
            unit = self.price_rng.uniform(*self.cfg.unit_price_range, size=len(rec.amounts))
            rec.prices = tuple(float(a * u) for a, u in zip(rec.amounts, unit))
            self.batch_queue.append(rec)
            return

        result = simulate_transfer(self.ledger.state, sr, self.accounts)
        done = now + self.cfg.service_time_ms
        if isinstance(result, Collision):
            self.sc.collision(result.reason.value, done)
            return
        rec.giver, rec.receiver, rec.amounts = result.giver, result.receiver, result.amounts
        tx = transfer_transaction(sr, result, self.keys[tenant], rec.sr_id, self.name, submit_time=now)
        self._reserve(tx.tx_id, [rec])
        self.loop.at(done, self._submit, tx, tenant)

    def _epoch(self) -> None:
        """Batch admission: admit queued pool requests maximizing revenue."""
        end = self.t0 + self.cfg.duration_s * 1000.0
        now = self.loop.now
        queue = self.batch_queue[: self.cfg.batch_max_requests]
        del self.batch_queue[: len(queue)]
        # keep epochs going past the schedule until the queue is empty
        if now < end or self.batch_queue:
            self.loop.after(self.cfg.batch_epoch_ms, self._epoch)
        if not queue:
            return
        done = now + self.cfg.service_time_ms
        candidates = []
        held: dict[str, list[int]] = {}
        for rec in queue:
            need = self.accounts[rec.receiver].target_delta
            mine = held.setdefault(rec.receiver, self.reserved[self.index[rec.receiver]].tolist())
            if any(a > 0 and need[i] - mine[i] < a for i, a in enumerate(rec.amounts)):
                self.sc.collision("NO_REMAINING_NEED", done)
            else:
                candidates.append(rec)
                for i, a in enumerate(rec.amounts):
                    mine[i] += a
        if not candidates:
            return
        state = self.ledger.state
        capacity = [state.value(registry_key(r)) - self.pool_reserved[i]
                    for i, r in enumerate(RESOURCE_TYPES)]
        capacity = [max(0, c) for c in capacity]
        inst = instance_from_requests(
            [GeneralRequest(r.requester, r.amounts, r.prices) for r in candidates], capacity)
        decision = solve_exact(inst)
        admitted = [rec for rec, y in zip(candidates, decision.y) if y]
        for rec, y in zip(candidates, decision.y):
            if not y:
                self.sc.collision("ADMISSION_REJECTED", done)
        if not admitted:
            return
        totals: dict[str, list[int]] = {}
        for rec in admitted:
            acc = totals.setdefault(rec.receiver, [0] * len(RESOURCE_TYPES))
            for i, a in enumerate(rec.amounts):
                acc[i] += a
        reads, writes = [], []
        for i, rtype in enumerate(RESOURCE_TYPES):
            rk = registry_key(rtype)
            reads.append((rk, state.version(rk)))
            writes.append((rk, state.value(rk) - sum(v[i] for v in totals.values())))
        for tenant, amounts in totals.items():
            for i, rtype in enumerate(RESOURCE_TYPES):
                hk = holding_key(tenant, rtype)
                reads.append((hk, state.version(hk)))
                writes.append((hk, state.value(hk) + amounts[i]))
        self._tx_seq += 1
        tx = Transaction(f"{self.name}/alloc{self._tx_seq}", self.ib_key.public_id, self.name,
                         {"contract": "allocation",
                          "args": {"grants": {t: a for t, a in totals.items()}}},
                         tuple(reads), tuple(writes), submit_time=now)
        tx = sign_transaction(tx, self.ib_key)
        self._reserve(tx.tx_id, admitted)
        self.loop.at(done, self._submit, tx, f"{self.name}-admin")

    def _reserve(self, tx_id: str, records: list[_SRRecord], sign: int = 1) -> None:
        if sign > 0:
            self.inflight[tx_id] = records
        for rec in records:
            delta = [sign * a for a in rec.amounts]
            if rec.giver == REGISTRY:
                self.pool_reserved = [p + d for p, d in zip(self.pool_reserved, delta)]
            for party in (rec.giver, rec.receiver):
                if party != REGISTRY:
                    k = self.index[party]
                    self.busy[k] += sign
                    self.reserved[k] += delta

    def _submit(self, tx: Transaction, client: str) -> None:
        # a client retries rejected submissions in order, so its stream stays FIFO
        backlog = self._backlog.setdefault(client, [])
        backlog.append(tx)
        if len(backlog) == 1:
            self._flush(client)

    def _flush(self, client: str) -> None:
        backlog = self._backlog[client]
        while backlog:
            ack = self.orderer.submit(backlog[0], client)
            if not ack.accepted:
                self.loop.after(ack.retry_after_ms, self._flush, client)
                return
            backlog.pop(0)

    # ---- validation and commit

    def _admit(self, tx: Transaction) -> bool:
        """Intent re-check at validation; consumes intent when the tx commits."""
        contract = tx.payload["contract"]
        if contract == "transfer":
            args = tx.payload["args"]
            if not still_feasible(args, self.accounts):
                return False
            for party in (args["giver"], args["receiver"]):
                if party != REGISTRY:
                    self._consume(party, args["amounts"])
        elif contract == "allocation":
            grants = tx.payload["args"]["grants"]
            for t, amounts in grants.items():
                need = self.accounts[t].target_delta
                if any(a > 0 and need[i] < a for i, a in enumerate(amounts)):
                    return False
            for t, amounts in grants.items():
                self._consume(t, amounts)
        return True

    def _consume(self, tenant: str, amounts) -> None:
        acct = self.accounts[tenant]
        acct.consume(amounts)
        self.need[self.index[tenant]] = acct.remaining()

    def _on_block(self, batch: list[Transaction], cut_time: float) -> None:
        block = self.ledger.append(batch, cut_time, precheck=self._admit)
        now = self.loop.now
        for tx, flag in zip(block.transactions, block.validity):
            contract = tx.payload["contract"]
            if contract == "opening":
                if flag is not TxFlag.COMMITTED:
                    raise RuntimeError(f"opening transaction {tx.tx_id} failed: {flag.value}")
                self.opened += 1
                if self.opened == len(self.tenants):
                    self.opening_done_at = now
                    self.sc.opening_finished(self)
                continue
            records = self.inflight.pop(tx.tx_id)
            self._reserve(tx.tx_id, records, sign=-1)
            outcome = _OUTCOME[flag]
            for rec in records:
                self.sc.count(outcome, now)
                if flag is TxFlag.COMMITTED:
                    self.sc.latencies.append(LatencySample(rec.sr_id, rec.issue_time, now))
                elif flag is TxFlag.SR_COLLISION:
                    self.sc.collision_reasons["INTENT_RECHECK"] = \
                        self.sc.collision_reasons.get("INTENT_RECHECK", 0) + 1
                for party in (rec.giver, rec.receiver):
                    if party != REGISTRY and self.accounts[party].satisfied:
                        self._retire(party)
        self.sc.sample_growth()

    def in_flight(self) -> int:
        return sum(len(r) for r in self.inflight.values()) + len(self.batch_queue)

    def summary(self) -> dict[str, Any]:
        state = self.ledger.state
        return {
            "height": self.ledger.height,
            "chain_bytes": self.ledger.total_bytes,
            "blocks_released": self.orderer.blocks_released,
            "conserved": state.conserved(full=True),
            "pool": [state.value(registry_key(r)) for r in RESOURCE_TYPES],
            "satisfied_tenants": sum(1 for a in self.accounts.values() if a.satisfied),
            "srs_issued": self._issued,
            "messages_sent": self.net.sent,
            "messages_dropped": self.net.dropped,
        }


# --------------------------------------------------------------------------
# Scenario


class Scenario:
    def __init__(self, cfg: ScenarioConfig, trace: bool = False):
        self.cfg = cfg
        self.loop = EventLoop(trace=trace)
        self.channels = [Channel(self, k) for k in range(cfg.num_ibs)]
        self.counters = OutcomeCounters()
        self.latencies: list[LatencySample] = []
        self.growth: list[ChainGrowthSample] = []
        self.collision_reasons: dict[str, int] = {}
        self.idle_slots = 0
        self.t0: float | None = None
        self._opened = 0

    # metric hooks
    def bucket(self, t: float) -> int:
        return int((t - self.t0) // 1000.0)

    def count(self, outcome: str, t: float) -> None:
        self.counters.add(outcome, self.bucket(t))

    def collision(self, reason: str, t: float) -> None:
        self.count("sr_collision", t)
        self.collision_reasons[reason] = self.collision_reasons.get(reason, 0) + 1

    def sample_growth(self) -> None:
        self.growth.append(ChainGrowthSample(
            self.loop.now,
            sum(c.ledger.total_bytes for c in self.channels),
            sum(len(c.ledger.chain) for c in self.channels),
        ))

    def opening_finished(self, channel: Channel) -> None:
        self._opened += 1

    # phases
    def run_opening(self) -> list[OpeningResult]:
        for ch in self.channels:
            ch.orderer.start()
        deadline = self.loop.now + self.cfg.opening_timeout_s * 1000.0
        ready = lambda: all(ch.orderer.ready() for ch in self.channels)  # noqa: E731
        if not ready():
            self.loop.run(until=deadline, stop=ready)
            if not ready():
                raise RuntimeError("ordering service never became ready")
        self.sample_growth()
        for ch in self.channels:
            ch.start_opening()
        self.loop.run(until=deadline, stop=lambda: self._opened == len(self.channels))
        if self._opened != len(self.channels):
            raise RuntimeError("opening phase did not complete in time")
        return [ch.opening_result() for ch in self.channels]

    def run(self) -> MetricsReport:
        self.run_opening()
        self.t0 = self.loop.now
        self.sample_growth()
        for ch in self.channels:
            ch.start_transfer(self.t0)
        end = self.t0 + (self.cfg.duration_s + self.cfg.drain_s) * 1000.0
        self.loop.run(until=end)
        return self.report()

    def report(self) -> MetricsReport:
        totals = {name: self.counters.total(name)
                  for name in ("submitted", "committed", "rw_conflict", "sr_collision", "bad_signature")}
        totals["in_flight"] = sum(ch.in_flight() for ch in self.channels)
        accounted = sum(totals[k] for k in ("committed", "rw_conflict", "sr_collision",
                                            "bad_signature", "in_flight"))
        if accounted != totals["submitted"]:
            raise AssertionError(f"outcome partition broken: {accounted} != {totals['submitted']}")
        ordered = sum(totals[k] for k in ("committed", "rw_conflict", "bad_signature")) \
            + self.collision_reasons.get("INTENT_RECHECK", 0)
        return MetricsReport(
            config=self.cfg.to_dict(),
            seed=self.cfg.seed,
            transfer_start_ms=self.t0,
            transfer_duration_s=self.cfg.duration_s,
            totals=totals,
            counters=self.counters,
            latencies=self.latencies,
            growth=self.growth,
            collision_reasons=self.collision_reasons,
            channels={ch.name: ch.summary() for ch in self.channels},
            ordered_total=ordered,
            idle_slots=self.idle_slots,
        )


def run_opening(cfg: ScenarioConfig) -> list[OpeningResult]:
    """Opening phase only: per-channel world state and tenant intents."""
    return Scenario(cfg).run_opening()


def run_scenario(cfg: ScenarioConfig, trace: bool = False) -> MetricsReport:
    return Scenario(cfg, trace=trace).run()
