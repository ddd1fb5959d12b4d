from __future__ import annotations

import random
import string

import pytest

from dualpass.convcore import (
    LOGIN_ALPHABET,
    STRING_ALPHABET,
    ConversionUnit,
    ConverterSpec,
    GeneratorConfig,
    generate_converter,
    parse_label,
)
from dualpass.credstore import CredentialStore, DeviceDescriptor, DeviceKind
from dualpass.server import AuthServer, MockClock, ServerConfig

WORKED_CHARS = "b@0N8m"
WORKED_DIGITS = [6, 3, 5, 2, 3, 1]
WORKED_STRINGS = ["3Mo&(E", "vX#", "z%9CP", "?G", "d$L", "Q"]
WORKED_LABELS = ["4F", "16R", "13F", "13R", "5F"]
WORKED_RESULT = "3MovQX#&(EPC9L$d?G%z"


def worked_spec(seed: int = 7) -> ConverterSpec:
    """Converter pinning the worked example's six rows.

    The tables cover the 36-char login alphabet plus the example's own
    characters, so the pre-policy password "b@0N8m" is convertible.
    """
    rng = random.Random(seed)
    alphabet = LOGIN_ALPHABET + "@N"
    units = []
    for pos, (ch, d, s) in enumerate(zip(WORKED_CHARS, WORKED_DIGITS, WORKED_STRINGS), start=1):
        table = {ch: s}
        used = {s}
        for other in alphabet:
            if other in table:
                continue
            while True:
                cand = "".join(rng.choice(STRING_ALPHABET) for _ in range(d))
                if cand not in used:
                    break
            used.add(cand)
            table[other] = cand
        units.append(ConversionUnit(pos, ch, d, table))
    return ConverterSpec(units, [parse_label(t) for t in WORKED_LABELS], 20)


@pytest.fixture
def worked():
    return worked_spec()


def random_login_password(rng: random.Random, lo: int = 5, hi: int = 15) -> str:
    return "".join(rng.choice(string.ascii_lowercase + string.digits) for _ in range(rng.randint(lo, hi)))


@pytest.fixture
def seeded_spec():
    def make(password="abc123", seed=0, **cfg):
        return generate_converter(password, GeneratorConfig(**cfg), random.Random(seed))
    return make


ALICE_PHONE = DeviceDescriptor("+15550100001", "356938035643809", "8901260000000000001", DeviceKind.SMARTPHONE)
BOB_PHONE = DeviceDescriptor("+15550100002", "490154203237518", "8901260000000000002", DeviceKind.SMARTPHONE)
ATTACKER_PHONE = DeviceDescriptor("+15550199999", "353918057581736", "8901260000000009999", DeviceKind.SMARTPHONE)
SWAPPED_PHONE = DeviceDescriptor("+15550100001", "353918057581736", "8901260000000009998", DeviceKind.SMARTPHONE)
DESKTOP = DeviceDescriptor("", "desk-01", "", DeviceKind.DESKTOP)


@pytest.fixture
def clock():
    return MockClock()


@pytest.fixture
def make_server(tmp_path, clock):
    def make(persist=True, **cfg):
        cfg.setdefault("seed", 1234)
        config = ServerConfig(**cfg)
        path = tmp_path / "store.json" if persist else None
        return AuthServer(CredentialStore(path, config.max_attempts, config.lock_expiry), config, clock)
    return make


@pytest.fixture
def server(make_server):
    return make_server()


@pytest.fixture
def alice(server):
    """Server with alice registered on her phone (login password abc123)."""
    s = server.open_session(ALICE_PHONE)
    server.register(s, "alice", {"name": "Alice Example", "email": "alice@example.org"}, "abc123")
    server.close_session(s)
    return server


def login(server, device, username, password):
    s = server.open_session(device)
    state = server.handle_username_entry(s, username)
    result, token = server.handle_password_entry(s, password)
    return s, state, result
