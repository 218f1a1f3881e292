import io
from dataclasses import replace

import pytest

from slicechain.ledger import (
    GENESIS_VERSION,
    Block,
    ChainDumpError,
    KeyPair,
    Ledger,
    Membership,
    StaleBlockError,
    Transaction,
    TxFlag,
    Version,
    WorldState,
    dump_chain,
    first_invalid_height,
    hash_block,
    holding_key,
    iter_dump,
    parse_key,
    registry_key,
    replay_committed,
    sign_transaction,
    validate_and_commit,
    verify_chain,
    verify_signature,
)

CAP = {"radio": 100, "transport": 100, "core": 100}


@pytest.fixture
def ib():
    return KeyPair.derive("ib")


@pytest.fixture
def alice():
    return KeyPair.derive("alice")


def genesis_tx(key):
    tx = Transaction("genesis", key.public_id, "ch", {"contract": "registry"}, (),
                     tuple((registry_key(r), v) for r, v in CAP.items()))
    return sign_transaction(tx, key)


def opening(ib, amounts):
    """Blind-write tenant holdings and the registry remainder."""
    writes = []
    left = dict(CAP)
    for tenant, amount in amounts.items():
        for r in CAP:
            writes.append((holding_key(tenant, r), amount))
            left[r] -= amount
    writes += [(registry_key(r), v) for r, v in left.items()]
    return sign_transaction(Transaction("open", ib.public_id, "ch", {}, (), tuple(writes)), ib)


def transfer(key, state, giver, receiver, amount, tx_id):
    reads, writes = [], []
    for r in CAP:
        g, rc = holding_key(giver, r), holding_key(receiver, r)
        reads += [(g, state.version(g)), (rc, state.version(rc))]
        writes += [(g, state.value(g) - amount), (rc, state.value(rc) + amount)]
    return sign_transaction(Transaction(tx_id, key.public_id, "ch", {}, tuple(reads), tuple(writes)), key)


@pytest.fixture
def ledger(ib, alice):
    led = Ledger(Membership([ib, alice]))
    led.init_genesis(genesis_tx(ib))
    led.append([opening(ib, {"alice": 30, "bob": 30})], 1.0)
    return led


def test_key_helpers():
    assert parse_key(holding_key("t1", "radio")) == ("t1", "radio")
    assert parse_key(registry_key("core")) == (None, "core")
    with pytest.raises(ValueError):
        parse_key("x/y")
    with pytest.raises(ValueError):
        holding_key("a/b", "radio")


@pytest.mark.parametrize("scheme", ["hmac", "ed25519"])
def test_signatures(scheme):
    k = KeyPair.derive("n", seed=3, scheme=scheme)
    sig = k.sign(b"msg")
    assert k.verify(b"msg", sig)
    assert not k.verify(b"msh", sig)
    assert KeyPair.derive("n", seed=3, scheme=scheme) == k
    assert KeyPair.derive("n", seed=4, scheme=scheme).public_id != k.public_id


def test_membership_rejects_strangers(alice):
    stranger = KeyPair.derive("mallory")
    tx = sign_transaction(Transaction("t", stranger.public_id, "ch", {}), stranger)
    assert not verify_signature(tx, Membership([alice]))
    assert verify_signature(tx, Membership([alice, stranger]))


def test_sign_requires_matching_sender(alice, ib):
    with pytest.raises(ValueError):
        sign_transaction(Transaction("t", alice.public_id, "ch", {}), ib)


def test_signature_covers_body_but_not_submit_time(alice):
    tx = sign_transaction(Transaction("t", alice.public_id, "ch", {"a": 1}), alice)
    m = Membership([alice])
    assert verify_signature(replace(tx, submit_time=99.0), m)
    assert not verify_signature(replace(tx, payload={"a": 2}), m)
    assert not verify_signature(replace(tx, write_set=(("h/x/radio", 1),)), m)


def test_duplicate_keys_rejected():
    with pytest.raises(ValueError):
        Transaction("t", "s", "c", {}, write_set=(("k", 1), ("k", 2)))


def test_transaction_record_round_trip(alice):
    tx = sign_transaction(Transaction("t", alice.public_id, "ch", {"x": [1, 2]},
                                      (("h/a/radio", Version(2, 1)),), (("h/a/radio", 5),),
                                      submit_time=1.5), alice)
    assert Transaction.from_record(tx.to_record()) == tx


def test_genesis_once(ib):
    led = Ledger(Membership([ib]))
    assert led.height == -1
    led.init_genesis(genesis_tx(ib))
    assert led.height == 0
    assert led.state.version(registry_key("radio")) == GENESIS_VERSION
    with pytest.raises(ValueError):
        led.init_genesis(genesis_tx(ib))


def test_genesis_requires_member_signature(ib):
    with pytest.raises(ValueError):
        Ledger(Membership([]), genesis_tx(ib))


def test_append_requires_genesis(ib):
    with pytest.raises(ValueError):
        Ledger(Membership([ib])).append([], 0.0)


def test_opening_commits_and_conserves(ledger):
    assert ledger.state.value(holding_key("alice", "radio")) == 30
    assert ledger.state.value(registry_key("radio")) == 40
    assert ledger.state.conserved(full=True)
    assert ledger.state.tenants() == {"alice", "bob"}


def test_sequential_in_block_conflict(ledger, alice):
    s = ledger.state
    t1 = transfer(alice, s, "alice", "bob", 5, "t1")
    t2 = transfer(alice, s, "alice", "bob", 5, "t2")  # same snapshot
    block = ledger.append([t1, t2], 2.0)
    assert block.validity == [TxFlag.COMMITTED, TxFlag.RW_CONFLICT]
    assert ledger.state.value(holding_key("alice", "core")) == 25
    assert ledger.state.version(holding_key("bob", "core")) == Version(2, 0)


def test_cross_block_conflict(ledger, alice):
    s = ledger.state.copy()
    ledger.append([transfer(alice, s, "alice", "bob", 1, "a")], 2.0)
    block = ledger.append([transfer(alice, s, "alice", "bob", 1, "b")], 3.0)
    assert block.validity == [TxFlag.RW_CONFLICT]


def test_bad_signature_flag(ledger):
    mallory = KeyPair.derive("mallory")
    tx = transfer(mallory, ledger.state, "alice", "bob", 1, "m")
    assert ledger.append([tx], 2.0).validity == [TxFlag.BAD_SIGNATURE]


def test_negative_balance_and_precheck_are_collisions(ledger, alice):
    over = transfer(alice, ledger.state, "alice", "bob", 31, "over")
    assert ledger.append([over], 2.0).validity == [TxFlag.SR_COLLISION]
    ok = transfer(alice, ledger.state, "alice", "bob", 1, "ok")
    block = ledger.append([ok], 3.0, precheck=lambda tx: False)
    assert block.validity == [TxFlag.SR_COLLISION]
    assert ledger.state.value(holding_key("alice", "radio")) == 30


def test_preflagged_collision_is_kept(ledger, alice):
    tx = transfer(alice, ledger.state, "alice", "bob", 1, "x")
    block = ledger.append([tx], 2.0, preflags=[TxFlag.SR_COLLISION])
    assert block.validity == [TxFlag.SR_COLLISION]


def test_validate_and_commit_is_pure(ledger, alice):
    before = ledger.state.to_bytes()
    block = Block(2, ledger.chain[-1].hash, [transfer(alice, ledger.state, "alice", "bob", 2, "p")], [], 2.0)
    new, flags = validate_and_commit(ledger.state, block, ledger.membership)
    assert flags == [TxFlag.COMMITTED]
    assert ledger.state.to_bytes() == before
    assert new.value(holding_key("bob", "radio")) == 32


def test_stale_block_rejected(ledger):
    block = Block(7, b"\0" * 32, [], [], 0.0)
    with pytest.raises(StaleBlockError):
        validate_and_commit(ledger.state, block, ledger.membership)


def test_world_state_rejects_negative():
    with pytest.raises(ValueError):
        WorldState().put("h/a/radio", -1, Version(1, 0))


def test_conservation_guard(ib):
    led = Ledger(Membership([ib]), genesis_tx(ib))
    leak = sign_transaction(Transaction("leak", ib.public_id, "ch", {}, (),
                                        ((holding_key("x", "radio"), 1),)), ib)
    with pytest.raises(AssertionError):
        led.append([leak], 1.0)


def test_hash_chain_and_tamper_detection(ledger, alice):
    ledger.append([transfer(alice, ledger.state, "alice", "bob", 1, "a")], 2.0)
    ledger.append([transfer(alice, ledger.state, "bob", "alice", 1, "b")], 3.0)
    chain = ledger.chain
    assert verify_chain(chain)
    assert all(hash_block(b) == b.hash for b in chain)
    tampered = list(chain)
    blk = chain[2]
    forged = replace(blk.transactions[0], write_set=blk.transactions[0].write_set[:-1] + (("h/bob/core", 99),))
    tampered[2] = replace(blk, transactions=[forged])
    assert first_invalid_height(tampered) == 2
    tampered = list(chain)
    tampered[1] = replace(chain[1], cut_time=0.5)
    assert first_invalid_height(tampered) == 1
    assert first_invalid_height([]) == 0


def test_block_bytes_round_trip(ledger):
    for block in ledger.chain:
        again = Block.from_bytes(block.to_bytes())
        assert again.to_bytes() == block.to_bytes()
        assert hash_block(again) == block.hash


def test_replay_matches_live_state(ledger, alice):
    for i in range(5):
        ledger.append([transfer(alice, ledger.state, "alice", "bob", 1, f"r{i}")], 2.0 + i)
    assert replay_committed(ledger.chain).to_bytes() == ledger.state.to_bytes()


def test_dump_round_trip_and_corruption(ledger, alice):
    ledger.append([transfer(alice, ledger.state, "alice", "bob", 3, "d")], 2.0)
    buf = io.StringIO()
    dump_chain(ledger.chain, buf)
    lines = buf.getvalue().splitlines()
    assert [b.hash for b in iter_dump(lines)] == [b.hash for b in ledger.chain]
    # flip one hex digit inside block 2's raw bytes
    bad = list(lines)
    pos = bad[2].index('"raw":"') + 200
    bad[2] = bad[2][:pos] + ("0" if bad[2][pos] != "0" else "1") + bad[2][pos + 1:]
    try:
        chain = list(iter_dump(bad))
    except ChainDumpError as exc:
        assert exc.height == 2
    else:
        assert first_invalid_height(chain) == 2
    with pytest.raises(ChainDumpError) as info:
        list(iter_dump(lines[:1] + ["{not json"]))
    assert info.value.height == 1
