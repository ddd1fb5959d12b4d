"""Adversarial scenario runner.

A scenario is a named list of steps played against a fresh in-process server
with a throwaway store. Each simulated device gets its own wire connection,
opened (with ``hello``) the first time a step uses it. Most steps send one
wire message and compare the response with ``expect``; a few are runner
actions that stand in for things outside the protocol (clock travel, a
database breach that leaks an authentication password, reconnecting).

Scenario file schema::

    {
      "name": "...",
      "devices": {"alice_phone": {"phone_number": "...", ...}, ...},
      "config": {... optional ServerConfig overrides ...},
      "expect_initiations": 0,          # optional
      "steps": [
        {"device": "alice_phone", "message": {"type": "...", ...},
         "expect": {...}, "save": {"var": "response_field"}},
        {"action": "advance_clock", "seconds": 121},
        {"action": "steal_auth_password", "user": "alice", "as": "apw"},
        {"action": "random_input", "as": "rnd", "length": 6},
        {"action": "reconnect", "device": "attacker_phone"},
        {"action": "verify_auth_password", "user": "alice",
         "password": "$apw", "expect": false}
      ]
    }

Strings of the form ``$name`` in messages are replaced by saved variables.
"""

from __future__ import annotations

import copy
import json
import random
import string
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from .convcore import generate_auth_password
from .credstore import DeviceDescriptor
from .server import AuthServer, MockClock, ServerConfig
from .wire import Connection


class UnknownScenario(LookupError):
    pass


@dataclass
class StepResult:
    index: int
    label: str
    expected: dict[str, Any]
    actual: dict[str, Any]
    passed: bool


@dataclass
class ScenarioReport:
    name: str
    steps: list[StepResult] = field(default_factory=list)
    initiations: int = 0
    expect_initiations: int | None = None

    @property
    def passed(self) -> bool:
        ok = all(s.passed for s in self.steps)
        if self.expect_initiations is not None:
            ok = ok and self.initiations == self.expect_initiations
        return ok

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "passed": self.passed,
            "initiations": self.initiations,
            "expect_initiations": self.expect_initiations,
            "steps": [
                {
                    "index": s.index,
                    "step": s.label,
                    "expected": s.expected,
                    "actual": s.actual,
                    "passed": s.passed,
                }
                for s in self.steps
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_text(self) -> str:
        lines = [f"scenario {self.name}"]
        width = max((len(s.label) for s in self.steps), default=10)
        for s in self.steps:
            mark = "PASS" if s.passed else "FAIL"
            exp = ", ".join(f"{k}={v}" for k, v in sorted(s.expected.items()))
            act = ", ".join(f"{k}={v}" for k, v in sorted(s.actual.items()))
            lines.append(f"  {s.index:3d} {mark}  {s.label:<{width}}  expect[{exp}]  got[{act}]")
        init = f"authentication initiations: {self.initiations}"
        if self.expect_initiations is not None:
            init += f" (expected {self.expect_initiations})"
        lines.append("  " + init)
        lines.append(f"  => {'PASS' if self.passed else 'FAIL'}")
        return "\n".join(lines)


def _substitute(obj, env: dict[str, Any]):
    if isinstance(obj, str) and obj.startswith("$") and obj[1:] in env:
        return env[obj[1:]]
    if isinstance(obj, dict):
        return {k: _substitute(v, env) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_substitute(v, env) for v in obj]
    return obj


def _describe(msg: dict[str, Any]) -> str:
    # raw message, before $var substitution, so stolen secrets stay out of reports
    fields = ", ".join(
        f"{k}={v}" for k, v in msg.items()
        if k not in ("type", "request_id", "device", "personal_info")
    )
    return f"{msg.get('type')}({fields})"


class _Runner:
    def __init__(self, scenario: dict[str, Any], seed: int, store_dir: Path) -> None:
        cfg = dict(scenario.get("config", {}))
        cfg.setdefault("seed", seed)
        self.config = ServerConfig.from_dict(cfg)
        self.clock = MockClock()
        self.server = AuthServer.open(store_dir / "store.json", self.config, self.clock)
        self.raw_devices = scenario.get("devices", {})
        for desc in self.raw_devices.values():
            DeviceDescriptor.from_dict(desc)  # malformed profiles fail before any step runs
        self.conns: dict[str, Connection] = {}
        self.env: dict[str, Any] = {}
        self.rng = random.Random(seed)
        self.request_id = 0

    def conn(self, device: str) -> Connection:
        if device not in self.raw_devices:
            raise KeyError(f"unknown device {device!r}")
        c = self.conns.get(device)
        if c is None:
            c = Connection(self.server)
            self.conns[device] = c
            self._send(c, {"type": "hello", "device": self.raw_devices[device]})
        return c

    def _send(self, c: Connection, msg: dict[str, Any]) -> dict[str, Any]:
        self.request_id += 1
        msg = {"request_id": str(self.request_id), **msg}
        return json.loads(c.handle_line(json.dumps(msg)))

    def step(self, i: int, step: dict[str, Any]) -> StepResult:
        action = step.get("action")
        if action is None:
            return self._message_step(i, step)
        if action == "advance_clock":
            self.clock.advance(float(step["seconds"]))
            return StepResult(i, f"advance_clock({step['seconds']}s)", {}, {}, True)
        if action == "reconnect":
            c = self.conns.pop(step["device"], None)
            if c is not None:
                c.close()
            return StepResult(i, f"reconnect({step['device']})", {}, {}, True)
        if action == "random_input":
            alphabet = step.get("alphabet", string.ascii_lowercase + string.digits)
            length = int(step.get("length", 6))
            self.env[step["as"]] = "".join(self.rng.choice(alphabet) for _ in range(length))
            return StepResult(i, f"random_input(${step['as']})", {}, {}, True)
        if action == "steal_auth_password":
            rec = self.server.store.find_by_username(step["user"])
            self.env[step["as"]] = generate_auth_password(rec.converter, rec.converter.expected_password)
            return StepResult(i, f"steal_auth_password({step['user']} -> ${step['as']})", {}, {}, True)
        if action == "verify_auth_password":
            rec = self.server.store.find_by_username(step["user"])
            pw = _substitute(step["password"], self.env)
            got = {"verifies": rec.auth_verifier.matches(pw)}
            exp = {"verifies": step["expect"]}
            return StepResult(i, f"verify_auth_password({step['user']}, {step['password']})", exp, got, got == exp)
        raise ValueError(f"unknown scenario action {action!r}")

    def _message_step(self, i: int, step: dict[str, Any]) -> StepResult:
        device = step["device"]
        raw_msg = step["message"]
        label = f"{device}: {_describe(raw_msg)}"
        msg = _substitute(copy.deepcopy(raw_msg), self.env)
        resp = self._send(self.conn(device), msg)
        for var, key in step.get("save", {}).items():
            if key in resp:
                self.env[var] = resp[key]
        expected = step.get("expect", {})
        actual = {k: resp.get(k) for k in expected}
        for k in ("status", "result", "field_state", "error"):
            if k in resp:
                actual.setdefault(k, resp[k])
        passed = all(resp.get(k) == v for k, v in expected.items())
        return StepResult(i, label, expected, actual, passed)

    def close(self) -> None:
        for c in self.conns.values():
            c.close()


def run_scenario(scenario: dict[str, Any], seed: int = 0) -> ScenarioReport:
    """Play ``scenario`` against a fresh server and store; nothing is left behind."""
    report = ScenarioReport(scenario["name"], expect_initiations=scenario.get("expect_initiations"))
    with tempfile.TemporaryDirectory(prefix="dualpass-scn-") as tmp:
        runner = _Runner(scenario, seed, Path(tmp))
        try:
            for i, step in enumerate(scenario["steps"], start=1):
                try:
                    report.steps.append(runner.step(i, step))
                except Exception as exc:  # recorded, the run keeps going
                    report.steps.append(
                        StepResult(i, str(step.get("action") or step.get("message", {}).get("type")),
                                   step.get("expect", {}), {"exception": type(exc).__name__}, False)
                    )
        finally:
            runner.close()
        report.initiations = runner.server.authentication_initiations
    return report


# -- builtin corpus -----------------------------------------------------------

_DEVICES = {
    "alice_phone": {"phone_number": "+15550100001", "imei": "356938035643809",
                    "sim_id": "8901260000000000001", "device_kind": "smartphone"},
    "bob_phone": {"phone_number": "+15550100002", "imei": "490154203237518",
                  "sim_id": "8901260000000000002", "device_kind": "smartphone"},
    "attacker_phone": {"phone_number": "+15550199999", "imei": "353918057581736",
                       "sim_id": "8901260000000009999", "device_kind": "smartphone"},
    # SIM-swapped: alice's number on the attacker's handset and SIM
    "swapped_phone": {"phone_number": "+15550100001", "imei": "353918057581736",
                      "sim_id": "8901260000000009998", "device_kind": "smartphone"},
    "attacker_desktop": {"device_kind": "desktop", "imei": "desk-attacker-01", "sim_id": "", "phone_number": ""},
    "alice_desktop": {"device_kind": "desktop", "imei": "desk-alice-01", "sim_id": "", "phone_number": ""},
}

ALICE_PW = "abc123"
BOB_PW = "bob2024x"


def _reg(device: str, user: str, pw: str) -> dict[str, Any]:
    return {"device": device,
            "message": {"type": "register", "username": user, "login_password": pw,
                        "personal_info": {"name": user.title(), "email": f"{user}@example.org"}},
            "expect": {"status": "ok"}}


def _username(device: str, user: str, state: str) -> dict[str, Any]:
    return {"device": device, "message": {"type": "username_entry", "username": user},
            "expect": {"field_state": state}}


def _password(device: str, pw: str, result: str, **save) -> dict[str, Any]:
    step = {"device": device, "message": {"type": "password_entry", "password": pw},
            "expect": {"result": result}}
    if save:
        step["save"] = save
    return step


def _login(device: str, user: str, pw: str) -> list[dict[str, Any]]:
    return [_username(device, user, "enabled"), _password(device, pw, "granted")]


def _devices(*names: str) -> dict[str, Any]:
    return {n: _DEVICES[n] for n in names}


def _nonlocal_matrix() -> dict[str, Any]:
    steps = [
        _reg("alice_phone", "alice", ALICE_PW),
        _reg("bob_phone", "bob", BOB_PW),
        {"action": "steal_auth_password", "user": "alice", "as": "apw"},
        {"action": "random_input", "as": "rnd", "length": 6},
    ]
    for device in ("attacker_phone", "attacker_desktop"):
        for user in ("alice", "bob"):
            for pw in (ALICE_PW, "$apw", "$rnd"):
                steps += [
                    {"action": "reconnect", "device": device},
                    _username(device, user, "disabled"),
                    _password(device, pw, "disabled"),
                ]
    return {"name": "nonlocal-matrix",
            "devices": _devices("alice_phone", "bob_phone", "attacker_phone", "attacker_desktop"),
            "expect_initiations": 0, "steps": steps}


def _builtins() -> dict[str, dict[str, Any]]:
    corpus = [
        _nonlocal_matrix(),
        {
            "name": "sim-swap",
            "devices": _devices("alice_phone", "swapped_phone"),
            "expect_initiations": 0,
            "steps": [
                _reg("alice_phone", "alice", ALICE_PW),
                _username("swapped_phone", "alice", "disabled"),
                # a client that ignores the grayed-out field gets nowhere either
                _password("swapped_phone", ALICE_PW, "disabled"),
                {"action": "reconnect", "device": "swapped_phone"},
                _password("swapped_phone", ALICE_PW, "disabled"),
            ],
        },
        {
            "name": "credential-theft",
            "devices": _devices("alice_phone", "attacker_desktop"),
            "expect_initiations": 0,
            "steps": [
                _reg("alice_phone", "alice", ALICE_PW),
                {"action": "steal_auth_password", "user": "alice", "as": "apw"},
                _username("attacker_desktop", "alice", "disabled"),
                _password("attacker_desktop", ALICE_PW, "disabled"),
                {"action": "reconnect", "device": "attacker_desktop"},
                _username("attacker_desktop", "alice", "disabled"),
                _password("attacker_desktop", "$apw", "disabled"),
            ],
        },
        {
            "name": "lockout",
            "devices": _devices("alice_phone"),
            "config": {"admin_token": "scenario-admin"},
            "steps": [
                _reg("alice_phone", "alice", ALICE_PW),
                _username("alice_phone", "alice", "enabled"),
                _password("alice_phone", "abc124", "denied"),
                _password("alice_phone", "xbc123", "denied"),
                _password("alice_phone", "abd123", "denied"),
                _password("alice_phone", ALICE_PW, "locked_out"),
                {"device": "alice_phone",
                 "message": {"type": "admin_unlock", "username": "alice", "admin_token": "scenario-admin"},
                 "expect": {"status": "ok"}},
                _password("alice_phone", ALICE_PW, "granted"),
            ],
        },
        {
            "name": "auth-password-typed",
            "devices": _devices("alice_phone"),
            "expect_initiations": 0,
            "steps": [
                _reg("alice_phone", "alice", ALICE_PW),
                {"action": "steal_auth_password", "user": "alice", "as": "apw"},
                _username("alice_phone", "alice", "enabled"),
                _password("alice_phone", "$apw", "locked_out"),
                _password("alice_phone", "Abc123", "locked_out"),
                _password("alice_phone", "passw rd", "locked_out"),
            ],
        },
        {
            "name": "link-replay",
            "devices": _devices("alice_phone", "alice_desktop"),
            "steps": [
                _reg("alice_phone", "alice", ALICE_PW),
                {"device": "alice_desktop", "message": {"type": "issue_link"},
                 "expect": {"status": "ok"}, "save": {"tok": "link_token"}},
                *_login("alice_phone", "alice", ALICE_PW),
                {"device": "alice_phone", "message": {"type": "redeem_link", "link_token": "$tok"},
                 "expect": {"status": "ok", "result": "granted"}},
                {"device": "alice_desktop", "message": {"type": "session_status"},
                 "expect": {"phase": "authenticated", "username": "alice"}},
                {"device": "alice_phone", "message": {"type": "redeem_link", "link_token": "$tok"},
                 "expect": {"status": "error", "error": "TokenUsed"}},
            ],
        },
        {
            "name": "link-expired",
            "devices": _devices("alice_phone", "alice_desktop"),
            "steps": [
                _reg("alice_phone", "alice", ALICE_PW),
                {"device": "alice_desktop", "message": {"type": "issue_link"},
                 "expect": {"status": "ok"}, "save": {"tok": "link_token"}},
                *_login("alice_phone", "alice", ALICE_PW),
                {"action": "advance_clock", "seconds": 121},
                {"device": "alice_phone", "message": {"type": "redeem_link", "link_token": "$tok"},
                 "expect": {"status": "error", "error": "TokenExpired"}},
                {"device": "alice_desktop", "message": {"type": "session_status"},
                 "expect": {"phase": "fresh"}},
            ],
        },
        {
            "name": "link-cross-account",
            "devices": _devices("alice_phone", "bob_phone", "alice_desktop"),
            "steps": [
                _reg("alice_phone", "alice", ALICE_PW),
                _reg("bob_phone", "bob", BOB_PW),
                {"device": "alice_desktop", "message": {"type": "issue_link"},
                 "expect": {"status": "ok"}, "save": {"tok": "link_token"}},
                *_login("bob_phone", "bob", BOB_PW),
                {"device": "bob_phone",
                 "message": {"type": "redeem_link", "link_token": "$tok", "username": "alice"},
                 "expect": {"status": "error", "error": "AccountMismatch"}},
                {"device": "alice_desktop", "message": {"type": "session_status"},
                 "expect": {"phase": "fresh"}},
                {"device": "bob_phone", "message": {"type": "redeem_link", "link_token": "$tok"},
                 "expect": {"status": "ok", "result": "granted"}},
                {"device": "alice_desktop", "message": {"type": "session_status"},
                 "expect": {"phase": "authenticated", "username": "bob"}},
            ],
        },
        {
            "name": "modify-login",
            "devices": _devices("alice_phone"),
            "steps": [
                _reg("alice_phone", "alice", ALICE_PW),
                {"action": "steal_auth_password", "user": "alice", "as": "apw"},
                *_login("alice_phone", "alice", ALICE_PW),
                {"device": "alice_phone",
                 "message": {"type": "modify_login", "new_login_password": "xyz789"},
                 "expect": {"status": "ok", "regenerated": False}},
                {"action": "verify_auth_password", "user": "alice", "password": "$apw", "expect": True},
                {"action": "reconnect", "device": "alice_phone"},
                _username("alice_phone", "alice", "enabled"),
                _password("alice_phone", ALICE_PW, "denied"),
                _password("alice_phone", "xyz789", "granted"),
            ],
        },
        {
            "name": "modify-auth",
            "devices": _devices("alice_phone"),
            "steps": [
                _reg("alice_phone", "alice", ALICE_PW),
                {"action": "steal_auth_password", "user": "alice", "as": "apw"},
                *_login("alice_phone", "alice", ALICE_PW),
                {"device": "alice_phone", "message": {"type": "modify_auth", "accept": False},
                 "expect": {"status": "ok", "changed": False}},
                {"action": "verify_auth_password", "user": "alice", "password": "$apw", "expect": True},
                {"device": "alice_phone", "message": {"type": "modify_auth", "accept": True},
                 "expect": {"status": "ok", "changed": True}},
                {"action": "verify_auth_password", "user": "alice", "password": "$apw", "expect": False},
                {"action": "reconnect", "device": "alice_phone"},
                *_login("alice_phone", "alice", ALICE_PW),
            ],
        },
    ]
    return {s["name"]: s for s in corpus}


BUILTINS = _builtins()


def load_scenario(ref: str) -> dict[str, Any]:
    """``builtin:NAME`` or a path to a scenario JSON file."""
    if ref.startswith("builtin:"):
        name = ref[len("builtin:"):]
        if name not in BUILTINS:
            raise UnknownScenario(f"no builtin scenario {name!r}; have {', '.join(sorted(BUILTINS))}")
        return copy.deepcopy(BUILTINS[name])
    path = Path(ref)
    if not path.exists():
        raise UnknownScenario(f"scenario file {ref!r} not found")
    return json.loads(path.read_text(encoding="utf-8"))
