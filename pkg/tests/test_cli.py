from __future__ import annotations

import io
import json
import subprocess
import sys

import pytest

from conftest import ALICE_PHONE, ATTACKER_PHONE, DESKTOP

from dualpass.cli import DeviceProfile, main
from dualpass.wire import WireClient, serve_in_thread


@pytest.fixture
def env(make_server, tmp_path, monkeypatch):
    auth = make_server(admin_token="tok")
    srv, addr = serve_in_thread(auth)
    monkeypatch.setenv("DUALPASS_SERVER", addr)
    profiles = {}
    for name, dev in {"alice": ALICE_PHONE, "attacker": ATTACKER_PHONE, "desk": DESKTOP}.items():
        path = tmp_path / f"{name}.json"
        path.write_text(json.dumps({"label": name, **dev.to_dict()}))
        profiles[name] = str(path)
    yield auth, addr, profiles
    srv.shutdown()
    srv.server_close()


def run(monkeypatch, capsys, argv, stdin=""):
    monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    code = main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def register_alice(env, monkeypatch, capsys):
    _, addr, prof = env
    return run(monkeypatch, capsys, ["register", "--server", addr, "--device", prof["alice"], "--user", "alice",
                                     "--password-stdin", "--info", "name=Alice"], "abc123\n")


def test_profile_load(env):
    prof = DeviceProfile.load(env[2]["alice"])
    assert prof.label == "alice" and prof.descriptor == ALICE_PHONE


def test_register_and_login(env, monkeypatch, capsys):
    auth, addr, prof = env
    code, out, _ = register_alice(env, monkeypatch, capsys)
    assert code == 0 and "registered alice" in out
    assert auth.store.find_by_username("alice").personal_info == {"name": "Alice"}
    code, out, _ = run(monkeypatch, capsys, ["login", "--server", addr, "--device", prof["alice"],
                                             "--user", "alice", "--password-stdin"], "abc123\n")
    assert (code, out.strip()) == (0, "granted")
    code, out, _ = run(monkeypatch, capsys, ["login", "--server", addr, "--device", prof["alice"],
                                             "--user", "alice", "--password-stdin", "--json"], "zzz999\n")
    assert code == 1 and json.loads(out)["result"] == "denied"


def test_nonlocal_login_fails(env, monkeypatch, capsys):
    register_alice(env, monkeypatch, capsys)
    _, addr, prof = env
    code, out, _ = run(monkeypatch, capsys, ["login", "--server", addr, "--device", prof["attacker"],
                                             "--user", "alice", "--password-stdin"], "abc123\n")
    assert code == 1 and "disabled" in out
    assert env[0].authentication_initiations == 0


def test_register_policy_error(env, monkeypatch, capsys):
    _, addr, prof = env
    code, out, _ = run(monkeypatch, capsys, ["register", "--device", prof["alice"], "--user", "a",
                                             "--password-stdin", "--json"], "Abc123\n")
    assert code == 1 and json.loads(out)["error"] == "PolicyViolation"


def test_missing_stdin_password(env, monkeypatch, capsys):
    _, _, prof = env
    code, _, err = run(monkeypatch, capsys, ["register", "--device", prof["alice"], "--user", "a",
                                             "--password-stdin"], "")
    assert code == 1 and "no password" in err


def test_modify_commands(env, monkeypatch, capsys):
    auth, _, prof = env
    register_alice(env, monkeypatch, capsys)
    base = ["--device", prof["alice"], "--user", "alice", "--password-stdin"]
    code, out, _ = run(monkeypatch, capsys, ["modify-login", *base], "abc123\nxyz789\n")
    assert code == 0 and out.strip() == "login password changed"
    before = auth.store.find_by_username("alice").auth_verifier
    code, out, _ = run(monkeypatch, capsys, ["modify-auth", *base, "--decline"], "xyz789\n")
    assert code == 0 and "declined" in out
    assert auth.store.find_by_username("alice").auth_verifier == before
    code, out, _ = run(monkeypatch, capsys, ["modify-auth", *base, "--accept"], "xyz789\n")
    assert code == 0 and "renewed" in out
    assert auth.store.find_by_username("alice").auth_verifier != before
    code, _, err = run(monkeypatch, capsys, ["modify-auth", *base, "--accept"], "abc123\n")
    assert code == 1 and "denied" in err


def test_link_commands(env, monkeypatch, capsys):
    auth, addr, prof = env
    register_alice(env, monkeypatch, capsys)
    # issue from a raw client so the desktop session stays open while the phone redeems
    with WireClient(addr) as desk:
        desk.request("hello", device=DESKTOP.to_dict())
        token = desk.request("issue_link")["link_payload"]
        code, out, _ = run(monkeypatch, capsys, ["link", "redeem", "--device", prof["alice"], "--user", "alice",
                                                 "--password-stdin", "--token", token], "abc123\n")
        assert code == 0 and "linked" in out
        assert desk.request("session_status")["username"] == "alice"
        code, out, _ = run(monkeypatch, capsys, ["link", "redeem", "--device", prof["alice"], "--user", "alice",
                                                 "--password-stdin", "--token", token], "abc123\n")
        assert code == 1 and "TokenUsed" in out
    code, out, _ = run(monkeypatch, capsys, ["link", "issue", "--device", prof["desk"], "--wait", "0", "--json"])
    assert code == 0 and json.loads(out)["link_payload"].startswith("dualpass-link:")


def test_admin_unlock(env, monkeypatch, capsys):
    auth, _, prof = env
    register_alice(env, monkeypatch, capsys)
    for _ in range(3):
        run(monkeypatch, capsys, ["login", "--device", prof["alice"], "--user", "alice", "--password-stdin"],
            "zzz999\n")
    code, out, _ = run(monkeypatch, capsys, ["login", "--device", prof["alice"], "--user", "alice",
                                             "--password-stdin"], "abc123\n")
    assert code == 1 and out.strip() == "locked_out"
    code, out, _ = run(monkeypatch, capsys, ["admin", "unlock", "--user", "alice", "--admin-token", "bad"])
    assert code == 1 and "Unauthorized" in out
    monkeypatch.setenv("DUALPASS_ADMIN_TOKEN", "tok")
    code, out, _ = run(monkeypatch, capsys, ["admin", "unlock", "--user", "alice"])
    assert code == 0
    code, _, _ = run(monkeypatch, capsys, ["login", "--device", prof["alice"], "--user", "alice",
                                           "--password-stdin"], "abc123\n")
    assert code == 0


def test_scenario_commands(monkeypatch, capsys):
    code, out, _ = run(monkeypatch, capsys, ["scenario", "list"])
    assert code == 0 and "builtin:nonlocal-matrix" in out.split()
    code, out, _ = run(monkeypatch, capsys, ["scenario", "run", "builtin:sim-swap"])
    assert code == 0 and out.rstrip().endswith("=> PASS")
    code, out, _ = run(monkeypatch, capsys, ["scenario", "run", "builtin:lockout", "--json", "--seed", "3"])
    assert code == 0 and json.loads(out)["passed"] is True
    code, _, err = run(monkeypatch, capsys, ["scenario", "run", "builtin:nope"])
    assert code == 1 and "no builtin scenario" in err


def test_serve_requires_store(monkeypatch, capsys):
    monkeypatch.delenv("DUALPASS_STORE", raising=False)
    code, _, err = run(monkeypatch, capsys, ["serve", "--listen", "127.0.0.1:0"])
    assert code == 1 and "no store" in err


def test_unreachable_server(env, monkeypatch, capsys):
    code, _, err = run(monkeypatch, capsys, ["login", "--server", "unix:/nonexistent/sock",
                                             "--device", env[2]["alice"], "--user", "alice", "--password-stdin"])
    assert code == 1 and err.startswith("dualpass:")


def test_console_script_entry():
    proc = subprocess.run([sys.executable, "-m", "dualpass", "scenario", "run", "builtin:link-replay"],
                          capture_output=True, text=True, timeout=60)
    assert proc.returncode == 0, proc.stderr
    assert "=> PASS" in proc.stdout
