"""Built-in smart contracts: slice-resource transfer, auction, registry load.

Contracts are pure: they read an immutable view of the world state and
return read/write sets. Nothing is applied until the ledger validates the
resulting transaction.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping, Sequence

from .ledger import (
    KeyPair,
    Ledger,
    Transaction,
    Version,
    WorldState,
    holding_key,
    registry_key,
    sign_transaction,
)

RESOURCE_TYPES = ("radio", "transport", "core")
REGISTRY = "@registry"  # the IB's unassigned pool as a transfer party
OPEN = None


class Direction(str, Enum):
    ACQUIRE = "ACQUIRE"
    RELEASE = "RELEASE"


class CollisionReason(str, Enum):
    INSUFFICIENT_AVAILABILITY = "INSUFFICIENT_AVAILABILITY"
    NO_REMAINING_NEED = "NO_REMAINING_NEED"


class UnknownTenantError(KeyError):
    pass


@dataclass(frozen=True)
class SliceRequest:
    """Demanded (radio, transport, core) shares in percent of the requester's base."""

    requester: str
    rho: float
    eta: float
    gamma: float
    direction: Direction = Direction.ACQUIRE
    counterparty: str | None = OPEN

    def __post_init__(self):
        if min(self.rho, self.eta, self.gamma) < 0:
            raise ValueError("slice request shares must be non-negative")
        if max(self.rho, self.eta, self.gamma) <= 0:
            raise ValueError("slice request must demand something")

    @property
    def shares(self) -> tuple[float, float, float]:
        return (self.rho, self.eta, self.gamma)


@dataclass(frozen=True)
class GeneralRequest:
    requester: str
    demands: tuple[float, ...]
    prices: tuple[float, ...]

    def __post_init__(self):
        if len(self.demands) != len(self.prices):
            raise ValueError("demands and prices must cover the same resource types")
        if min(self.demands, default=0) < 0 or min(self.prices, default=0) < 0:
            raise ValueError("demands and prices must be non-negative")

    @property
    def revenue(self) -> float:
        return sum(self.prices)


@dataclass
class TenantAccount:
    """Off-chain intent of one tenant; holdings themselves live in the world state.

    ``target_delta`` is the remaining intent per resource type: positive to
    seek more, negative to free. ``initial`` is the opening allocation that
    request percentages refer to.
    """

    tenant_id: str
    initial: tuple[int, ...]
    target_delta: list[int] = field(default_factory=list)

    @property
    def seeking(self) -> bool:
        return any(d > 0 for d in self.target_delta)

    @property
    def freeing(self) -> bool:
        return any(d < 0 for d in self.target_delta)

    def remaining(self) -> list[int]:
        return [abs(d) for d in self.target_delta]

    @property
    def satisfied(self) -> bool:
        # every generated request demands all types, so one exhausted type ends it
        return not self.target_delta or any(d == 0 for d in self.target_delta)

    def consume(self, amounts: Sequence[int]) -> None:
        for i, amt in enumerate(amounts):
            d = self.target_delta[i]
            if d > 0:
                self.target_delta[i] = max(0, d - amt)
            elif d < 0:
                self.target_delta[i] = min(0, d + amt)


def request_amounts(sr: SliceRequest, base: Sequence[int]) -> tuple[int, ...]:
    """Convert percentage shares into integer units of the requester's base."""
    amounts = []
    for share, b in zip(sr.shares, base):
        if share <= 0:
            amounts.append(0)
        else:
            amounts.append(max(1, round(share / 100.0 * b)))
    return tuple(amounts)


@dataclass(frozen=True)
class Transfer:
    giver: str
    receiver: str
    amounts: tuple[int, ...]
    read_set: tuple[tuple[str, Version], ...]
    write_set: tuple[tuple[str, int], ...]


@dataclass(frozen=True)
class Collision:
    reason: CollisionReason


def _party_key(party: str, rtype: str) -> str:
    return registry_key(rtype) if party == REGISTRY else holding_key(party, rtype)


def _check_party(snapshot: WorldState, party: str, types: Sequence[str]) -> None:
    if party is None:
        raise UnknownTenantError("transfer counterparty is unresolved (OPEN)")
    if any(_party_key(party, r) not in snapshot for r in types):
        raise UnknownTenantError(party)


def simulate_transfer(
    snapshot: WorldState,
    sr: SliceRequest,
    accounts: Mapping[str, TenantAccount],
    types: Sequence[str] = RESOURCE_TYPES,
) -> Transfer | Collision:
    """Endorse a transfer between requester and counterparty, all or nothing.

    The giver must be able to offer every demanded amount (its holding,
    capped by its remaining intent to free) and the receiver must still
    need all of it. The registry pool accepts any release and offers what
    it holds.
    """
    if sr.requester not in accounts:
        raise UnknownTenantError(sr.requester)
    _check_party(snapshot, sr.requester, types)
    _check_party(snapshot, sr.counterparty, types)
    if sr.counterparty != REGISTRY and sr.counterparty not in accounts:
        raise UnknownTenantError(sr.counterparty)

    amounts = request_amounts(sr, accounts[sr.requester].initial)
    if sr.direction is Direction.ACQUIRE:
        giver, receiver = sr.counterparty, sr.requester
    else:
        giver, receiver = sr.requester, sr.counterparty

    for i, rtype in enumerate(types):
        if amounts[i] == 0:
            continue
        offer = snapshot.value(_party_key(giver, rtype))
        if giver != REGISTRY:
            d = accounts[giver].target_delta[i]
            offer = min(offer, -d if d < 0 else 0)
        if offer < amounts[i]:
            return Collision(CollisionReason.INSUFFICIENT_AVAILABILITY)
    if receiver != REGISTRY:
        need = accounts[receiver].target_delta
        if any(amt > 0 and need[i] < amt for i, amt in enumerate(amounts)):
            return Collision(CollisionReason.NO_REMAINING_NEED)

    read_set, write_set = [], []
    for i, rtype in enumerate(types):
        if amounts[i] == 0:
            continue
        gk, rk = _party_key(giver, rtype), _party_key(receiver, rtype)
        read_set += [(gk, snapshot.version(gk)), (rk, snapshot.version(rk))]
        write_set += [(gk, snapshot.value(gk) - amounts[i]), (rk, snapshot.value(rk) + amounts[i])]
    return Transfer(giver, receiver, amounts, tuple(read_set), tuple(write_set))


def still_feasible(transfer_args: Mapping, accounts: Mapping[str, TenantAccount]) -> bool:
    """Re-check intent for an endorsed transfer against live accounts."""
    giver, receiver = transfer_args["giver"], transfer_args["receiver"]
    for i, amt in enumerate(transfer_args["amounts"]):
        if amt == 0:
            continue
        if giver != REGISTRY and -accounts[giver].target_delta[i] < amt:
            return False
        if receiver != REGISTRY and accounts[receiver].target_delta[i] < amt:
            return False
    return True


def transfer_transaction(
    sr: SliceRequest,
    transfer: Transfer,
    key: KeyPair,
    tx_id: str,
    channel: str,
    submit_time: float,
) -> Transaction:
    payload = {
        "contract": "transfer",
        "args": {
            "giver": transfer.giver,
            "receiver": transfer.receiver,
            "amounts": list(transfer.amounts),
            "shares": [float(s) for s in sr.shares],
            "direction": sr.direction.value,
        },
    }
    tx = Transaction(tx_id, key.public_id, channel, payload, transfer.read_set,
                     transfer.write_set, submit_time=submit_time)
    return sign_transaction(tx, key)


# --------------------------------------------------------------------------
# Auction


@dataclass(frozen=True)
class Bid:
    peer_id: str
    value: float
    arrival: float


@dataclass(frozen=True)
class AuctionSpec:
    auction_end_time: float
    resource_set: tuple[int, ...]
    bids: tuple[Bid, ...] = ()
    seller: str = REGISTRY


@dataclass(frozen=True)
class AuctionResult:
    winner: str | None
    write_set: tuple[tuple[str, int], ...] = ()
    read_set: tuple[tuple[str, Version], ...] = ()

    @property
    def no_winner(self) -> bool:
        return self.winner is None


NO_WINNER = AuctionResult(None)


def auction_winner(bids: Sequence[Bid], auction_end_time: float) -> Bid | None:
    """Highest strictly positive bid received by the end time.

    Ties go to the earliest arrival, then to the smaller peer id, which is
    what a first-seen strict ``>`` scan over arrival-ordered bids keeps.
    """
    best: Bid | None = None
    for bid in sorted(bids, key=lambda b: (b.arrival, b.peer_id)):
        if bid.arrival > auction_end_time:
            continue
        if bid.value > (best.value if best else 0):
            best = bid
    return best


def run_auction(spec: AuctionSpec, snapshot: WorldState | None = None,
                types: Sequence[str] = RESOURCE_TYPES) -> AuctionResult:
    """Close the auction and assign the resource set to the winner.

    With a ``snapshot`` the result carries the read/write sets moving
    ``resource_set`` from the seller to the winner; an unaffordable lot
    (seller holds too little) yields no winner and the seller keeps it.
    """
    best = auction_winner(spec.bids, spec.auction_end_time)
    if best is None:
        return NO_WINNER
    if snapshot is None:
        return AuctionResult(best.peer_id)
    _check_party(snapshot, spec.seller, types)
    _check_party(snapshot, best.peer_id, types)
    read_set, write_set = [], []
    for amt, rtype in zip(spec.resource_set, types):
        if amt == 0:
            continue
        sk, wk = _party_key(spec.seller, rtype), _party_key(best.peer_id, rtype)
        if snapshot.value(sk) < amt:
            return NO_WINNER
        read_set += [(sk, snapshot.version(sk)), (wk, snapshot.version(wk))]
        write_set += [(sk, snapshot.value(sk) - amt), (wk, snapshot.value(wk) + amt)]
    return AuctionResult(best.peer_id, tuple(write_set), tuple(read_set))


class Auction:
    """Event-driven bid accumulation that closes at the end time."""

    def __init__(self, auction_end_time: float, resource_set: Sequence[int], seller: str = REGISTRY):
        self.auction_end_time = auction_end_time
        self.resource_set = tuple(resource_set)
        self.seller = seller
        self.bids: list[Bid] = []

    def bid(self, peer_id: str, value: float, now: float) -> bool:
        if now > self.auction_end_time:
            return False
        self.bids.append(Bid(peer_id, value, now))
        return True

    def close(self, snapshot: WorldState | None = None) -> AuctionResult:
        return run_auction(AuctionSpec(self.auction_end_time, self.resource_set,
                                       tuple(self.bids), self.seller), snapshot)


# --------------------------------------------------------------------------
# Registry


def registry_transaction(
    ib_key: KeyPair,
    capacity: Mapping[str, int] | Sequence[int],
    channel: str,
    types: Sequence[str] = RESOURCE_TYPES,
) -> Transaction:
    if not isinstance(capacity, Mapping):
        if len(capacity) != len(types):
            raise ValueError("capacity must give one amount per resource type")
        capacity = dict(zip(types, capacity))
    for rtype, amount in capacity.items():
        if not isinstance(amount, int) or amount <= 0:
            raise ValueError(f"capacity for {rtype} must be a positive integer")
    write_set = tuple((registry_key(r), int(v)) for r, v in capacity.items())
    tx = Transaction(f"{channel}/genesis", ib_key.public_id, channel,
                     {"contract": "registry", "args": {"capacity": dict(capacity)}},
                     (), write_set)
    return sign_transaction(tx, ib_key)


def init_registry(
    ledger: Ledger,
    ib_key: KeyPair,
    capacity: Mapping[str, int] | Sequence[int],
    channel: str,
    types: Sequence[str] = RESOURCE_TYPES,
) -> tuple[tuple[str, int], ...]:
    """Load the IB's registry as the channel's genesis; returns its write set."""
    tx = registry_transaction(ib_key, capacity, channel, types)
    ledger.init_genesis(tx)
    return tx.write_set
