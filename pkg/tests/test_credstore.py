from __future__ import annotations

import itertools
import os
import random
import subprocess
import sys
import textwrap
import threading

import pytest

from conftest import ALICE_PHONE, ATTACKER_PHONE, BOB_PHONE, random_login_password

from dualpass.convcore import GeneratorConfig, generate_auth_password, generate_converter
from dualpass.credstore import (
    AccountRecord,
    AuthVerifier,
    CredentialStore,
    DeviceDescriptor,
    DeviceKind,
    LinkToken,
    LockState,
    Outcome,
    decode_store,
    encode_store,
)
from dualpass.errors import DeviceAlreadyBound, DuplicateUsername, StoreCorrupt, UnknownAccount
from dualpass.identity import derive_identifier


def make_record(username, device, rng, password=None):
    password = password or random_login_password(rng)
    spec = generate_converter(password, GeneratorConfig(), rng)
    auth = generate_auth_password(spec, password)
    return AccountRecord(
        username=username,
        device=device,
        converter=spec,
        auth_verifier=AuthVerifier.create(auth, rng.randbytes(16)),
        process_identifier=derive_identifier(spec, password, rng=rng),
        personal_info={"name": username.title()},
    ), auth


def phone(i):
    return DeviceDescriptor(f"+1555{i:07d}", f"imei{i}", f"sim{i}", DeviceKind.SMARTPHONE)


@pytest.fixture
def store_path(tmp_path):
    return tmp_path / "store.json"


def test_create_and_find(store_path):
    store = CredentialStore(store_path)
    rec, _ = make_record("alice", ALICE_PHONE, random.Random(1), "abc123")
    store.create_account(rec)
    assert store.find_by_username("alice").to_dict() == rec.to_dict()
    assert store.find_by_username("mallory") is None
    # durable: a fresh process-equivalent sees it
    assert CredentialStore(store_path).find_by_username("alice").to_dict() == rec.to_dict()


def test_duplicate_username(store_path):
    store = CredentialStore(store_path)
    rng = random.Random(1)
    store.create_account(make_record("alice", ALICE_PHONE, rng)[0])
    with pytest.raises(DuplicateUsername):
        store.create_account(make_record("alice", BOB_PHONE, rng)[0])


def test_device_already_bound(store_path):
    store = CredentialStore(store_path)
    rng = random.Random(1)
    store.create_account(make_record("alice", ALICE_PHONE, rng)[0])
    with pytest.raises(DeviceAlreadyBound):
        store.create_account(make_record("alice2", ALICE_PHONE, rng)[0])
    assert store.usernames() == ["alice"]
    assert len(CredentialStore(store_path)) == 1


def test_smartphone_binding_is_injective():
    store = CredentialStore(None)
    rng = random.Random(4)
    devices = [phone(i % 7) for i in range(30)]
    for i, dev in enumerate(devices):
        try:
            store.create_account(make_record(f"user{i}", dev, rng)[0])
        except DeviceAlreadyBound:
            pass
    bound = [store.find_by_username(u).device for u in store.usernames()]
    assert len(bound) == len(set(bound)) == 7


def test_returned_records_are_copies(store_path):
    store = CredentialStore(store_path)
    store.create_account(make_record("alice", ALICE_PHONE, random.Random(1))[0])
    rec = store.find_by_username("alice")
    rec.failed_attempts = 99
    assert store.find_by_username("alice").failed_attempts == 0


def test_update_bumps_version(store_path):
    store = CredentialStore(store_path)
    store.create_account(make_record("alice", ALICE_PHONE, random.Random(1))[0])
    rec = store.find_by_username("alice")
    rec.personal_info["city"] = "Hohhot"
    assert store.update_account(rec).version == 2
    assert CredentialStore(store_path).find_by_username("alice").personal_info["city"] == "Hohhot"
    with pytest.raises(UnknownAccount):
        rec.username = "nobody"
        store.update_account(rec)


# -- lockout state machine -----------------------------------------------------


def test_three_failures_lock(store_path):
    store = CredentialStore(store_path, max_attempts=3)
    store.create_account(make_record("alice", ALICE_PHONE, random.Random(1))[0])
    states = [store.record_attempt("alice", Outcome.FAILURE, now=float(i)) for i in range(3)]
    assert states == [LockState.UNLOCKED, LockState.UNLOCKED, LockState.LOCKED]
    rec = CredentialStore(store_path).find_by_username("alice")
    assert rec.failed_attempts == 3 and rec.locked_since == 2.0


def test_failures_must_be_consecutive(store_path):
    store = CredentialStore(store_path)
    store.create_account(make_record("alice", ALICE_PHONE, random.Random(1))[0])
    store.record_attempt("alice", Outcome.FAILURE, 0)
    store.record_attempt("alice", Outcome.FAILURE, 0)
    assert store.record_attempt("alice", Outcome.SUCCESS, 0) is LockState.UNLOCKED
    assert store.find_by_username("alice").failed_attempts == 0


def _model(seq, max_attempts=3):
    """Reference lockout automaton: (counter, locked)."""
    counter, locked = 0, False
    for outcome in seq:
        if locked:
            continue
        if outcome is Outcome.SUCCESS:
            counter = 0
        else:
            counter += 1
            locked = counter >= max_attempts
    return counter, locked


def test_lockout_matches_reference_automaton_exhaustively():
    for n in range(1, 8):
        for seq in itertools.product(list(Outcome), repeat=n):
            store = CredentialStore(None)
            store.create_account(make_record("alice", ALICE_PHONE, random.Random(1), "abc123")[0])
            for t, outcome in enumerate(seq):
                store.record_attempt("alice", outcome, float(t))
            rec = store.find_by_username("alice")
            counter, locked = _model(seq)
            assert (rec.failed_attempts, rec.lock_state is LockState.LOCKED) == (counter, locked), seq


def test_failure_while_locked_changes_nothing():
    store = CredentialStore(None)
    store.create_account(make_record("alice", ALICE_PHONE, random.Random(1))[0])
    for _ in range(3):
        store.record_attempt("alice", Outcome.FAILURE, 10.0)
    before = store.find_by_username("alice").to_dict()
    assert store.record_attempt("alice", Outcome.FAILURE, 11.0) is LockState.LOCKED
    assert store.record_attempt("alice", Outcome.SUCCESS, 12.0) is LockState.LOCKED
    assert store.find_by_username("alice").to_dict() == before


def test_unlock_and_expiry():
    store = CredentialStore(None, lock_expiry=60)
    store.create_account(make_record("alice", ALICE_PHONE, random.Random(1))[0])
    for _ in range(3):
        store.record_attempt("alice", Outcome.FAILURE, 100.0)
    assert store.lock_state("alice", 159.0) is LockState.LOCKED
    assert store.lock_state("alice", 160.0) is LockState.UNLOCKED
    for _ in range(3):
        store.record_attempt("alice", Outcome.FAILURE, 200.0)
    store.unlock("alice")
    assert store.lock_state("alice", 200.0) is LockState.UNLOCKED
    with pytest.raises(UnknownAccount):
        store.record_attempt("mallory", Outcome.FAILURE, 0)


def test_manual_unlock_is_the_default():
    store = CredentialStore(None)
    store.create_account(make_record("alice", ALICE_PHONE, random.Random(1))[0])
    for _ in range(3):
        store.record_attempt("alice", Outcome.FAILURE, 0.0)
    assert store.lock_state("alice", 1e9) is LockState.LOCKED


# -- persistence -------------------------------------------------------------------


def populated_store(path, n=8, seed=0):
    rng = random.Random(seed)
    store = CredentialStore(path)
    for i in range(n):
        store.create_account(make_record(f"user{i}", phone(i), rng)[0])
        if i % 3 == 0:
            store.record_attempt(f"user{i}", Outcome.FAILURE, 1.5 * i)
    store.put_link_token(LinkToken("ab" * 16, "sess", 1_700_000_120.0))
    return store


@pytest.mark.parametrize("seed", range(5))
def test_round_trip_is_byte_identical(tmp_path, seed):
    path = tmp_path / "s.json"
    store = populated_store(path, n=3 + seed, seed=seed)
    first = path.read_bytes()
    assert store.snapshot() == first
    accounts, tokens = decode_store(first)
    assert encode_store(accounts, tokens) == first
    reloaded = CredentialStore(path)
    reloaded._save()
    assert path.read_bytes() == first


def test_store_file_format(store_path):
    populated_store(store_path, n=1)
    raw = store_path.read_bytes()
    assert raw.endswith(b"\n")
    last = raw.rstrip(b"\n").rsplit(b"\n", 1)[1]
    assert last.startswith(b"sha256:") and len(last) == 7 + 64
    assert b'"format_version": 1' in raw


def test_corruption_detected(store_path):
    populated_store(store_path, n=2)
    raw = bytearray(store_path.read_bytes())
    raw[40] ^= 0x01
    store_path.write_bytes(bytes(raw))
    with pytest.raises(StoreCorrupt):
        CredentialStore(store_path)
    store_path.write_bytes(b'{"format_version": 1}\n')
    with pytest.raises(StoreCorrupt):
        CredentialStore(store_path)


def test_no_auth_password_plaintext_in_store(store_path):
    rng = random.Random(3)
    store = CredentialStore(store_path)
    secrets = []
    for i in range(20):
        rec, auth = make_record(f"u{i}", phone(i), rng)
        store.create_account(rec)
        secrets.append(auth)
    raw = store_path.read_text(encoding="utf-8")
    assert not any(s in raw for s in secrets)


def test_failed_save_rolls_back_memory(store_path):
    store = CredentialStore(store_path)
    rng = random.Random(2)
    store.create_account(make_record("alice", ALICE_PHONE, rng)[0])

    def boom(tmp):
        raise OSError("disk full")

    store.before_replace = boom
    with pytest.raises(OSError):
        store.create_account(make_record("bob", BOB_PHONE, rng)[0])
    assert store.usernames() == ["alice"]
    assert not [p for p in store_path.parent.iterdir() if p.name.endswith(".tmp")]
    assert CredentialStore(store_path).usernames() == ["alice"]


CRASH_SCRIPT = textwrap.dedent(
    """
    import os, random, sys
    sys.path[:0] = {paths!r}
    from test_credstore import make_record, phone
    from dualpass.credstore import CredentialStore

    store = CredentialStore(sys.argv[1])
    rng = random.Random(int(sys.argv[2]))
    store.before_replace = lambda tmp: os._exit(9)  # die after fsync, before rename
    store.create_account(make_record("victim", phone(999), rng)[0])
    """
)


@pytest.mark.parametrize("seed", [1, 2])
def test_crash_mid_save_recovers_last_commit(store_path, tmp_path, seed):
    populated_store(store_path, n=3)
    committed = store_path.read_bytes()
    here = os.path.dirname(__file__)
    script = tmp_path / "crash.py"
    script.write_text(CRASH_SCRIPT.format(paths=[here, os.path.join(here, "..", "src")]))
    proc = subprocess.run([sys.executable, str(script), str(store_path), str(seed)], capture_output=True)
    assert proc.returncode == 9, proc.stderr.decode()
    # the half-done save left a temp file behind; it is ignored
    leftovers = [p for p in store_path.parent.iterdir() if p.name.endswith(".tmp")]
    assert leftovers
    assert store_path.read_bytes() == committed
    reloaded = CredentialStore(store_path)
    assert reloaded.usernames() == ["user0", "user1", "user2"]
    assert reloaded.find_by_username("victim") is None


def test_concurrent_writers_serialize(store_path):
    store = CredentialStore(store_path, max_attempts=1000)
    store.create_account(make_record("alice", ALICE_PHONE, random.Random(1))[0])

    def hammer():
        for _ in range(25):
            store.record_attempt("alice", Outcome.FAILURE, 0.0)

    threads = [threading.Thread(target=hammer) for _ in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert store.find_by_username("alice").failed_attempts == 100
    assert CredentialStore(store_path).find_by_username("alice").failed_attempts == 100


def test_from_env(monkeypatch, store_path):
    monkeypatch.setenv("DUALPASS_STORE", str(store_path))
    store = CredentialStore.from_env()
    assert store.path == store_path


def test_smartphone_descriptor_needs_phone_number():
    with pytest.raises(ValueError):
        DeviceDescriptor("", "imei", "sim", DeviceKind.SMARTPHONE)
    assert DeviceDescriptor("", "x", "", DeviceKind.DESKTOP) != DeviceDescriptor("", "y", "", DeviceKind.DESKTOP)
    assert ATTACKER_PHONE != ALICE_PHONE
