"""``dualpass`` command line: server, device-simulating client, scenario runner."""

from __future__ import annotations

import argparse
import getpass
import json
import logging
import os
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from .credstore import STORE_ENV, DeviceDescriptor
from .scenarios import BUILTINS, UnknownScenario, load_scenario, run_scenario
from .server import AuthServer, ServerConfig
from .wire import DEFAULT_ADDR, WireClient, make_server

SERVER_ENV = "DUALPASS_SERVER"
ADMIN_ENV = "DUALPASS_ADMIN_TOKEN"

log = logging.getLogger("dualpass")


@dataclass(frozen=True)
class DeviceProfile:
    label: str
    descriptor: DeviceDescriptor

    @classmethod
    def load(cls, path: str | Path) -> "DeviceProfile":
        data = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(data, dict):
            raise ValueError(f"{path}: device profile must be a JSON object")
        return cls(data.get("label", Path(path).stem), DeviceDescriptor.from_dict(data))


class CommandFailed(Exception):
    """Raised when the server answered, but not with the hoped-for outcome."""


def _emit(args, payload: dict[str, Any], text: str) -> None:
    print(json.dumps(payload, sort_keys=True) if args.json else text)


def _read_secret(args, prompt: str) -> str:
    if args.password_stdin:
        line = sys.stdin.readline()
        if not line:
            raise CommandFailed("no password on stdin")
        return line.rstrip("\n")
    return getpass.getpass(prompt)


def _connect(args) -> tuple[WireClient, DeviceProfile]:
    profile = DeviceProfile.load(args.device)
    client = WireClient(args.server)
    resp = client.request("hello", device=profile.descriptor.to_dict())
    if resp["status"] != "ok":
        client.close()
        raise CommandFailed(f"hello rejected: {resp.get('detail')}")
    return client, profile


def _check(resp: dict[str, Any], what: str) -> dict[str, Any]:
    if resp.get("status") != "ok":
        detail = resp.get("detail", "")
        raise CommandFailed(f"{what} failed: {resp.get('error')} {detail}".rstrip())
    return resp


def _login(client: WireClient, args, user: str) -> dict[str, Any]:
    resp = _check(client.request("username_entry", username=user), "username entry")
    if resp["field_state"] != "enabled":
        raise CommandFailed("password field disabled: this device is not registered to that user")
    password = _read_secret(args, f"login password for {user}: ")
    resp = _check(client.request("password_entry", password=password), "password entry")
    if resp["result"] != "granted":
        raise CommandFailed(resp["result"])
    return resp


# -- commands -----------------------------------------------------------------


def cmd_serve(args) -> int:
    store_path = args.store or os.environ.get(STORE_ENV)
    if not store_path:
        raise CommandFailed(f"no store: pass --store or set {STORE_ENV}")
    config = ServerConfig.load(args.config) if args.config else ServerConfig()
    if args.seed is not None:
        config.seed = args.seed
    auth = AuthServer.open(store_path, config)
    srv = make_server(auth, args.listen)
    log.info("listening on %s (store %s, %d accounts)", args.listen, store_path, len(auth.store))
    try:
        srv.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        srv.server_close()
    return 0


def cmd_register(args) -> int:
    info = dict(kv.split("=", 1) for kv in args.info or [])
    client, profile = _connect(args)
    with client:
        password = _read_secret(args, "choose a login password (a-z, 0-9, 5-15 chars): ")
        resp = client.request("register", username=args.user, login_password=password, personal_info=info)
    if resp["status"] != "ok":
        _emit(args, resp, f"registration failed: {resp.get('error')}: {resp.get('detail', '')}")
        return 1
    _emit(args, resp, f"registered {args.user} on {profile.label}")
    return 0


def cmd_login(args) -> int:
    client, _ = _connect(args)
    with client:
        resp = _check(client.request("username_entry", username=args.user), "username entry")
        if resp["field_state"] != "enabled":
            _emit(args, {"result": "disabled", "field_state": "disabled"},
                  "password field disabled (nonlocal attempt)")
            return 1
        password = _read_secret(args, f"login password for {args.user}: ")
        resp = _check(client.request("password_entry", password=password), "password entry")
    _emit(args, resp, resp["result"])
    return 0 if resp["result"] == "granted" else 1


def cmd_modify_login(args) -> int:
    client, _ = _connect(args)
    with client:
        _login(client, args, args.user)
        new = _read_secret(args, "new login password: ")
        resp = client.request("modify_login", new_login_password=new)
    if resp["status"] != "ok":
        _emit(args, resp, f"modification failed: {resp.get('error')} {resp.get('detail', '')}")
        return 1
    _emit(args, resp, "login password changed" + (" (converter regenerated)" if resp["regenerated"] else ""))
    return 0


def cmd_modify_auth(args) -> int:
    client, _ = _connect(args)
    with client:
        _login(client, args, args.user)
        if args.accept is None:
            answer = input("The service asks to renew your authentication password. Accept? [y/N] ")
            accept = answer.strip().lower() in ("y", "yes")
        else:
            accept = args.accept
        resp = _check(client.request("modify_auth", accept=accept), "modification")
    _emit(args, resp, "authentication password renewed" if resp["changed"] else "declined; nothing changed")
    return 0


def cmd_link_issue(args) -> int:
    client, _ = _connect(args)
    with client:
        resp = _check(client.request("issue_link"), "issue")
        if not args.json:
            print(f"scan with your registered smartphone: {resp['link_payload']}")
        else:
            print(json.dumps(resp, sort_keys=True), flush=True)
        if args.wait <= 0:
            return 0
        deadline = time.monotonic() + args.wait
        while time.monotonic() < deadline:
            status = _check(client.request("session_status"), "status")
            if status["phase"] == "authenticated":
                _emit(args, status, f"granted: this device is logged into {status['username']}")
                return 0
            time.sleep(0.5)
    _emit(args, {"result": "timeout"}, "not linked before timeout")
    return 1


def cmd_link_redeem(args) -> int:
    client, _ = _connect(args)
    with client:
        _login(client, args, args.user)
        resp = client.request("redeem_link", link_token=args.token)
    if resp["status"] != "ok":
        _emit(args, resp, f"rejected: {resp.get('error')}")
        return 1
    _emit(args, resp, "granted: desktop session linked")
    return 0


def cmd_admin_unlock(args) -> int:
    token = args.admin_token or os.environ.get(ADMIN_ENV)
    with WireClient(args.server) as client:
        resp = client.request("admin_unlock", username=args.user, admin_token=token)
    if resp["status"] != "ok":
        _emit(args, resp, f"unlock failed: {resp.get('error')}")
        return 1
    _emit(args, resp, f"unlocked {args.user}")
    return 0


def cmd_scenario_run(args) -> int:
    scenario = load_scenario(args.scenario)
    report = run_scenario(scenario, seed=args.seed)
    print(report.to_json() if args.json else report.to_text())
    return 0 if report.passed else 1


def cmd_scenario_list(args) -> int:
    for name in sorted(BUILTINS):
        print(f"builtin:{name}")
    return 0


# -- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--server", default=os.environ.get(SERVER_ENV, DEFAULT_ADDR),
                        help="server address, host:port or unix:/path (default %(default)s)")
    common.add_argument("--json", action="store_true", help="machine-readable output")
    common.add_argument("-v", "--verbose", action="store_true")

    device = argparse.ArgumentParser(add_help=False)
    device.add_argument("--device", required=True, help="device profile JSON file")
    device.add_argument("--user", required=True)
    device.add_argument("--password-stdin", action="store_true",
                        help="read passwords from stdin, one per line, instead of prompting")

    p = argparse.ArgumentParser(prog="dualpass", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("serve", parents=[common], help="run the authentication server")
    s.add_argument("--store", help=f"store file (default ${STORE_ENV})")
    s.add_argument("--listen", default=DEFAULT_ADDR)
    s.add_argument("--config", help="server config JSON")
    s.add_argument("--seed", type=int, help="deterministic RNG (test mode only)")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("register", parents=[common, device], help="register an account from a smartphone")
    s.add_argument("--info", action="append", metavar="KEY=VALUE", help="personal information")
    s.set_defaults(func=cmd_register)

    s = sub.add_parser("login", parents=[common, device])
    s.set_defaults(func=cmd_login)

    s = sub.add_parser("modify-login", parents=[common, device], help="log in, then change the login password")
    s.set_defaults(func=cmd_modify_login)

    s = sub.add_parser("modify-auth", parents=[common, device],
                       help="log in, then answer the authentication-password renewal request")
    g = s.add_mutually_exclusive_group()
    g.add_argument("--accept", dest="accept", action="store_true", default=None)
    g.add_argument("--decline", dest="accept", action="store_false")
    s.set_defaults(func=cmd_modify_auth)

    link = sub.add_parser("link", help="log a non-smartphone device in via the registered smartphone")
    lsub = link.add_subparsers(dest="link_command", required=True)
    s = lsub.add_parser("issue", parents=[common])
    s.add_argument("--device", required=True)
    s.add_argument("--wait", type=float, default=120.0, help="seconds to wait for redemption (0: don't)")
    s.set_defaults(func=cmd_link_issue)
    s = lsub.add_parser("redeem", parents=[common, device])
    s.add_argument("--token", required=True, help="token or dualpass-link: payload shown by the desktop")
    s.set_defaults(func=cmd_link_redeem)

    admin = sub.add_parser("admin")
    asub = admin.add_subparsers(dest="admin_command", required=True)
    s = asub.add_parser("unlock", parents=[common])
    s.add_argument("--user", required=True)
    s.add_argument("--admin-token", help=f"default ${ADMIN_ENV}")
    s.set_defaults(func=cmd_admin_unlock)

    scen = sub.add_parser("scenario")
    ssub = scen.add_subparsers(dest="scenario_command", required=True)
    s = ssub.add_parser("run", parents=[common])
    s.add_argument("scenario", help="builtin:NAME or scenario JSON file")
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_scenario_run)
    s = ssub.add_parser("list", parents=[common])
    s.set_defaults(func=cmd_scenario_list)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO if args.func is cmd_serve else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        return args.func(args)
    except CommandFailed as exc:
        if args.json:
            print(json.dumps({"result": "failed", "detail": str(exc)}))
        else:
            print(str(exc), file=sys.stderr)
        return 1
    except (OSError, ValueError, UnknownScenario) as exc:
        print(f"dualpass: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
