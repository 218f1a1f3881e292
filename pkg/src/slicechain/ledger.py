"""Hash-chained block store and versioned world state with MVCC validation."""

from __future__ import annotations

import hashlib
import hmac
import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from enum import Enum
from typing import Callable, Iterable, Iterator, NamedTuple, TextIO

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)
from cryptography.hazmat.primitives.serialization import Encoding, PublicFormat

from .encoding import DecodeError, Encoded, decode, encode

ZERO_HASH = bytes(32)


class TxFlag(str, Enum):
    COMMITTED = "COMMITTED"
    RW_CONFLICT = "RW_CONFLICT"
    SR_COLLISION = "SR_COLLISION"
    BAD_SIGNATURE = "BAD_SIGNATURE"


class Version(NamedTuple):
    block_height: int
    tx_index: int


GENESIS_VERSION = Version(0, 0)


def _check_part(part: str) -> str:
    if not part or "/" in part:
        raise ValueError(f"key component {part!r} must be non-empty and contain no '/'")
    return part


def holding_key(tenant: str, rtype: str) -> str:
    return f"h/{_check_part(tenant)}/{_check_part(rtype)}"


def registry_key(rtype: str) -> str:
    return f"r/{_check_part(rtype)}"


def parse_key(key: str) -> tuple[str | None, str]:
    """Split a state key into (tenant or None for the registry, resource type)."""
    parts = key.split("/")
    if len(parts) == 3 and parts[0] == "h":
        return parts[1], parts[2]
    if len(parts) == 2 and parts[0] == "r":
        return None, parts[1]
    raise ValueError(f"malformed state key {key!r}")


# --------------------------------------------------------------------------
# Keys and signatures


@dataclass(frozen=True)
class KeyPair:
    """A signing identity.

    ``scheme="hmac"`` is a keyed-digest stand-in: cheap, deterministic, and
    checkable only by a verifier that holds the secret (the channel
    membership does). ``scheme="ed25519"`` is a real public-key signature.
    """

    public_id: str
    signing_secret: bytes = field(repr=False)
    scheme: str = "hmac"

    @classmethod
    def derive(cls, name: str, seed: int | str = 0, scheme: str = "hmac") -> "KeyPair":
        secret = hashlib.sha256(f"keypair|{seed}|{name}".encode()).digest()
        if scheme == "hmac":
            public_id = f"{name}:" + hashlib.sha256(b"pub|" + secret).hexdigest()[:16]
        elif scheme == "ed25519":
            pub = Ed25519PrivateKey.from_private_bytes(secret).public_key()
            public_id = pub.public_bytes(Encoding.Raw, PublicFormat.Raw).hex()
        else:
            raise ValueError(f"unknown signature scheme {scheme!r}")
        return cls(public_id, secret, scheme)

    def sign(self, message: bytes) -> bytes:
        if self.scheme == "ed25519":
            return Ed25519PrivateKey.from_private_bytes(self.signing_secret).sign(message)
        return hmac.new(self.signing_secret, message, hashlib.sha256).digest()

    def verify(self, message: bytes, signature: bytes) -> bool:
        if self.scheme == "ed25519":
            return _ed25519_verify(self.public_id, message, signature)
        expected = hmac.new(self.signing_secret, message, hashlib.sha256).digest()
        return hmac.compare_digest(expected, signature)


def _ed25519_verify(public_id: str, message: bytes, signature: bytes) -> bool:
    try:
        pub = Ed25519PublicKey.from_public_bytes(bytes.fromhex(public_id))
        pub.verify(signature, message)
    except (ValueError, InvalidSignature):
        return False
    return True


class Membership:
    """Identities enrolled on a channel; signatures from anyone else fail."""

    def __init__(self, keys: Iterable[KeyPair] = ()):
        self._keys: dict[str, KeyPair] = {}
        for key in keys:
            self.enroll(key)

    def enroll(self, key: KeyPair) -> None:
        self._keys[key.public_id] = key

    def __contains__(self, public_id: str) -> bool:
        return public_id in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    def verify(self, public_id: str, message: bytes, signature: bytes) -> bool:
        key = self._keys.get(public_id)
        if key is None:
            return False
        return key.verify(message, signature)


# --------------------------------------------------------------------------
# Transactions


@dataclass(frozen=True)
class Transaction:
    tx_id: str
    sender: str
    channel: str
    payload: dict
    read_set: tuple[tuple[str, Version], ...] = ()
    write_set: tuple[tuple[str, int], ...] = ()
    signature: bytes = b""
    submit_time: float = 0.0

    def __post_init__(self):
        if len({k for k, _ in self.read_set}) != len(self.read_set):
            raise ValueError(f"{self.tx_id}: duplicate key in read_set")
        if len({k for k, _ in self.write_set}) != len(self.write_set):
            raise ValueError(f"{self.tx_id}: duplicate key in write_set")

    # Transactions are immutable once built (payload included), so their
    # encodings are computed once and reused for signing, hashing and sizing.
    @cached_property
    def _signing_bytes(self) -> bytes:
        return encode(self._body())

    @cached_property
    def _encoded_record(self) -> Encoded:
        return Encoded(encode(self.to_record()))

    def signing_bytes(self) -> bytes:
        return self._signing_bytes

    def _body(self) -> list:
        return [
            self.tx_id,
            self.sender,
            self.channel,
            self.payload,
            [[k, v.block_height, v.tx_index] for k, v in self.read_set],
            [[k, v] for k, v in self.write_set],
        ]

    def to_record(self) -> list:
        return self._body() + [self.signature, float(self.submit_time)]

    @classmethod
    def from_record(cls, record: list) -> "Transaction":
        tx_id, sender, channel, payload, reads, writes, sig, submit = record
        return cls(
            tx_id=tx_id,
            sender=sender,
            channel=channel,
            payload=payload,
            read_set=tuple((k, Version(h, i)) for k, h, i in reads),
            write_set=tuple((k, v) for k, v in writes),
            signature=sig,
            submit_time=submit,
        )


def sign_transaction(tx: Transaction, key: KeyPair) -> Transaction:
    if tx.sender != key.public_id:
        raise ValueError(f"{tx.tx_id}: sender {tx.sender!r} does not match signing key")
    return replace(tx, signature=key.sign(tx.signing_bytes()))


def verify_signature(tx: Transaction, membership: Membership) -> bool:
    return membership.verify(tx.sender, tx.signing_bytes(), tx.signature)


# --------------------------------------------------------------------------
# Blocks and the chain


@dataclass
class Block:
    height: int
    prev_hash: bytes
    transactions: list[Transaction]
    validity: list[TxFlag | None]
    cut_time: float
    hash: bytes = b""

    def header_record(self) -> list:
        return [
            self.height,
            self.prev_hash,
            [tx._encoded_record for tx in self.transactions],
            [None if f is None else f.value for f in self.validity],
            float(self.cut_time),
        ]

    def to_bytes(self) -> bytes:
        return encode(self.header_record() + [self.hash])

    @classmethod
    def from_bytes(cls, data: bytes) -> "Block":
        try:
            height, prev, txs, flags, cut, digest = decode(data)
            return cls(
                height=height,
                prev_hash=prev,
                transactions=[Transaction.from_record(r) for r in txs],
                validity=[None if f is None else TxFlag(f) for f in flags],
                cut_time=cut,
                hash=digest,
            )
        except DecodeError:
            raise
        except (TypeError, ValueError) as exc:
            raise DecodeError(f"malformed block record: {exc}") from exc


def hash_block(block: Block) -> bytes:
    """SHA-256 over the canonical encoding of every field except ``hash``."""
    return hashlib.sha256(encode(block.header_record())).digest()


def verify_chain(chain: list[Block]) -> bool:
    return first_invalid_height(chain) is None


def first_invalid_height(chain: list[Block]) -> int | None:
    """Height (list position) of the first block breaking the chain, or None."""
    if not chain:
        return 0
    prev = ZERO_HASH
    for pos, block in enumerate(chain):
        if block.height != pos or block.prev_hash != prev:
            return pos
        digest = hash_block(block)
        if digest != block.hash:
            return pos
        prev = digest
    return None


# --------------------------------------------------------------------------
# World state


class StaleBlockError(ValueError):
    pass


class WorldState:
    """Versioned key-value store of integer resource holdings."""

    def __init__(self):
        self.entries: dict[str, tuple[int, Version]] = {}
        self.capacity: dict[str, int] = {}
        self.height = -1
        self._totals: dict[str, int] = {}

    def copy(self) -> "WorldState":
        other = WorldState()
        other.entries = dict(self.entries)
        other.capacity = dict(self.capacity)
        other.height = self.height
        other._totals = dict(self._totals)
        return other

    def __contains__(self, key: str) -> bool:
        return key in self.entries

    def value(self, key: str, default: int = 0) -> int:
        entry = self.entries.get(key)
        return default if entry is None else entry[0]

    def version(self, key: str) -> Version | None:
        entry = self.entries.get(key)
        return None if entry is None else entry[1]

    def put(self, key: str, value: int, version: Version) -> None:
        if value < 0:
            raise ValueError(f"negative value for {key}")
        _, rtype = parse_key(key)
        old = self.entries.get(key)
        self._totals[rtype] = self._totals.get(rtype, 0) + value - (old[0] if old else 0)
        self.entries[key] = (value, version)

    def tenants(self) -> set[str]:
        return {t for t, _ in map(parse_key, self.entries) if t is not None}

    def totals(self) -> dict[str, int]:
        """Per resource type: tenant holdings plus registry remainder (recomputed)."""
        totals: dict[str, int] = {}
        for key, (value, _) in self.entries.items():
            _, rtype = parse_key(key)
            totals[rtype] = totals.get(rtype, 0) + value
        return totals

    def conserved(self, full: bool = False) -> bool:
        totals = self.totals() if full else self._totals
        return all(totals.get(r, 0) == cap for r, cap in self.capacity.items())

    def to_bytes(self) -> bytes:
        return encode({
            "height": self.height,
            "capacity": dict(self.capacity),
            "entries": {k: [v, ver.block_height, ver.tx_index] for k, (v, ver) in self.entries.items()},
        })


Precheck = Callable[[Transaction], bool]


def _apply_block(
    state: WorldState,
    block: Block,
    membership: Membership,
    precheck: Precheck | None = None,
) -> list[TxFlag]:
    """Validate ``block`` against ``state`` in place and return final flags."""
    if block.height != state.height + 1:
        raise StaleBlockError(f"block height {block.height} does not follow {state.height}")
    flags: list[TxFlag] = []
    for index, tx in enumerate(block.transactions):
        pre = block.validity[index] if index < len(block.validity) else None
        if pre is TxFlag.SR_COLLISION:
            flags.append(TxFlag.SR_COLLISION)
            continue
        if not verify_signature(tx, membership):
            flags.append(TxFlag.BAD_SIGNATURE)
            continue
        if any(state.version(key) != ver for key, ver in tx.read_set):
            flags.append(TxFlag.RW_CONFLICT)
            continue
        if any(value < 0 for _, value in tx.write_set) or (precheck is not None and not precheck(tx)):
            flags.append(TxFlag.SR_COLLISION)
            continue
        version = Version(block.height, index)
        for key, value in tx.write_set:
            state.put(key, value, version)
        flags.append(TxFlag.COMMITTED)
    state.height = block.height
    return flags


def validate_and_commit(
    state: WorldState,
    block: Block,
    membership: Membership,
    precheck: Precheck | None = None,
) -> tuple[WorldState, list[TxFlag]]:
    """MVCC-validate ``block`` sequentially; ``state`` itself is left untouched.

    A transaction commits iff its signature verifies and each read version
    is still current, counting writes by earlier transactions of the same
    block. ``precheck`` runs last and may veto a transaction as an
    SR collision (the contract layer's validation-time feasibility check).
    """
    new_state = state.copy()
    flags = _apply_block(new_state, block, membership, precheck)
    return new_state, flags


def genesis_state(genesis: Block) -> WorldState:
    state = WorldState()
    (registry_tx,) = genesis.transactions
    for key, value in registry_tx.write_set:
        tenant, rtype = parse_key(key)
        if tenant is not None:
            raise ValueError("genesis may only load registry keys")
        state.capacity[rtype] = value
        state.put(key, value, GENESIS_VERSION)
    state.height = 0
    return state


class Ledger:
    """One channel's chain plus its world state; the single validation context."""

    def __init__(self, membership: Membership, registry_tx: Transaction | None = None,
                 check_conservation: bool = True):
        self.membership = membership
        self.check_conservation = check_conservation
        self.chain: list[Block] = []
        self.state = WorldState()
        self.total_bytes = 0
        if registry_tx is not None:
            self.init_genesis(registry_tx)

    def init_genesis(self, registry_tx: Transaction) -> Block:
        if self.chain:
            raise ValueError("channel already has a genesis block")
        if not verify_signature(registry_tx, self.membership):
            raise ValueError("registry transaction is not signed by a channel member")
        genesis = Block(0, ZERO_HASH, [registry_tx], [TxFlag.COMMITTED], 0.0)
        genesis.hash = hash_block(genesis)
        self.state = genesis_state(genesis)
        self.chain.append(genesis)
        self.total_bytes = len(genesis.to_bytes())
        return genesis

    @property
    def height(self) -> int:
        return self.chain[-1].height if self.chain else -1

    def append(
        self,
        transactions: list[Transaction],
        cut_time: float,
        preflags: list[TxFlag | None] | None = None,
        precheck: Precheck | None = None,
    ) -> Block:
        if not self.chain:
            raise ValueError("no genesis block yet")
        block = Block(
            height=self.height + 1,
            prev_hash=self.chain[-1].hash,
            transactions=list(transactions),
            validity=list(preflags) if preflags else [None] * len(transactions),
            cut_time=cut_time,
        )
        block.validity = _apply_block(self.state, block, self.membership, precheck)
        block.hash = hash_block(block)
        if self.check_conservation and not self.state.conserved():
            raise AssertionError(f"conservation violated at height {block.height}")
        self.chain.append(block)
        self.total_bytes += len(block.to_bytes())
        return block


def replay_committed(chain: list[Block]) -> WorldState:
    """Rebuild state from recorded flags without re-validating signatures."""
    state = genesis_state(chain[0])
    for block in chain[1:]:
        for index, (tx, flag) in enumerate(zip(block.transactions, block.validity)):
            if flag is TxFlag.COMMITTED:
                for key, value in tx.write_set:
                    state.put(key, value, Version(block.height, index))
        state.height = block.height
    return state


# --------------------------------------------------------------------------
# Newline-delimited dump


class ChainDumpError(ValueError):
    def __init__(self, height: int, message: str):
        super().__init__(f"height {height}: {message}")
        self.height = height


def dump_chain(chain: list[Block], fh: TextIO) -> None:
    for block in chain:
        record = {
            "height": block.height,
            "hash": block.hash.hex(),
            "prev_hash": block.prev_hash.hex(),
            "cut_time": block.cut_time,
            "txs": [{"id": tx.tx_id, "flag": f.value if f else None}
                    for tx, f in zip(block.transactions, block.validity)],
            "raw": block.to_bytes().hex(),
        }
        fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def iter_dump(lines: Iterable[str]) -> Iterator[Block]:
    """Parse a dump; raises ChainDumpError naming the first bad line's height."""
    for height, line in enumerate(lines):
        try:
            record = json.loads(line)
            block = Block.from_bytes(bytes.fromhex(record["raw"]))
        except (ValueError, KeyError, TypeError) as exc:
            raise ChainDumpError(height, f"unreadable record ({exc})") from exc
        if record.get("height") != block.height or record.get("hash") != block.hash.hex() \
                or record.get("prev_hash") != block.prev_hash.hex():
            raise ChainDumpError(height, "summary fields disagree with block bytes")
        flags = [t.get("flag") for t in record.get("txs", [])]
        if flags != [f.value if f else None for f in block.validity]:
            raise ChainDumpError(height, "transaction flags disagree with block bytes")
        yield block
