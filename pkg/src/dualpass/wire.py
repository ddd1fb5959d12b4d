"""Newline-delimited JSON transport for :class:`~dualpass.server.AuthServer`.

Every request is one JSON object on one line::

    {"type": "username_entry", "request_id": "7", "username": "alice"}

and gets exactly one response line echoing ``type`` and ``request_id`` with
``status`` set to ``"ok"`` or ``"error"``. A connection owns at most one
session, opened by ``hello``.
"""

from __future__ import annotations

import json
import logging
import os
import socket
import socketserver
import stat
import threading
from typing import Any, Callable

from .credstore import DeviceDescriptor
from .errors import DualPassError, PolicyViolation, ProtocolError
from .server import AuthServer, PasswordResult

log = logging.getLogger(__name__)

DEFAULT_ADDR = "127.0.0.1:7341"
MAX_LINE = 64 * 1024


def encode(msg: dict[str, Any]) -> bytes:
    return (json.dumps(msg, ensure_ascii=False, separators=(",", ":")) + "\n").encode("utf-8")


def decode(line: bytes | str) -> dict[str, Any]:
    if isinstance(line, bytes):
        line = line.decode("utf-8")
    try:
        msg = json.loads(line)
    except ValueError as exc:
        raise ProtocolError(f"not JSON: {exc}") from None
    if not isinstance(msg, dict):
        raise ProtocolError("message must be a JSON object")
    return msg


def _str(msg: dict, key: str, required: bool = True) -> str | None:
    val = msg.get(key)
    if val is None and not required:
        return None
    if not isinstance(val, str):
        raise ProtocolError(f"field {key!r} must be a string")
    return val


class Connection:
    """Per-client protocol state. Transport code feeds it decoded messages."""

    def __init__(self, server: AuthServer) -> None:
        self.server = server
        self.session = None
        self._handlers: dict[str, Callable[[dict], dict]] = {
            "hello": self._hello,
            "register": self._register,
            "username_entry": self._username_entry,
            "password_entry": self._password_entry,
            "modify_login": self._modify_login,
            "modify_auth": self._modify_auth,
            "issue_link": self._issue_link,
            "redeem_link": self._redeem_link,
            "session_status": self._session_status,
            "admin_unlock": self._admin_unlock,
        }

    def close(self) -> None:
        if self.session is not None:
            self.server.close_session(self.session)
            self.session = None

    def handle_line(self, line: bytes | str) -> bytes:
        try:
            msg = decode(line)
        except ProtocolError as exc:
            return encode({"status": "error", "error": exc.code, "detail": str(exc)})
        return encode(self.handle(msg))

    def handle(self, msg: dict[str, Any]) -> dict[str, Any]:
        mtype = msg.get("type")
        head = {"type": mtype, "request_id": msg.get("request_id")}
        handler = self._handlers.get(mtype)
        try:
            if handler is None:
                raise ProtocolError(f"unknown message type {mtype!r}")
            if mtype not in ("hello", "admin_unlock") and self.session is None:
                raise ProtocolError("send hello first")
            body = handler(msg)
        except PolicyViolation as exc:
            return {**head, "status": "error", "error": exc.code, "detail": str(exc),
                    "violations": [v.to_dict() for v in exc.violations]}
        except DualPassError as exc:
            return {**head, "status": "error", "error": exc.code, "detail": str(exc)}
        except (KeyError, TypeError, ValueError) as exc:
            return {**head, "status": "error", "error": "ProtocolError", "detail": f"malformed payload: {exc}"}
        return {**head, "status": "ok", **body}

    # -- handlers ---------------------------------------------------------

    def _hello(self, msg):
        if self.session is not None:
            raise ProtocolError("session already open on this connection")
        device = msg.get("device")
        if not isinstance(device, dict):
            raise ProtocolError("hello needs a device object")
        self.session = self.server.open_session(DeviceDescriptor.from_dict(device))
        out = {"session_id": self.session.session_id}
        # client-side convenience only; the server re-checks at username entry
        bound = self.server.store.find_by_device(self.session.device)
        if bound is not None:
            out["username_hint"] = bound.username
        return out

    def _register(self, msg):
        info = msg.get("personal_info") or {}
        if not isinstance(info, dict):
            raise ProtocolError("personal_info must be an object")
        return self.server.register(
            self.session, _str(msg, "username"), info, _str(msg, "login_password")
        )

    def _username_entry(self, msg):
        state = self.server.handle_username_entry(self.session, _str(msg, "username"))
        return {"field_state": state.value}

    def _password_entry(self, msg):
        result, token = self.server.handle_password_entry(self.session, _str(msg, "password"))
        out = {"result": result.value}
        if result is PasswordResult.GRANTED:
            out["session_token"] = token
        return out

    def _modify_login(self, msg):
        return self.server.modify_login_password(self.session, _str(msg, "new_login_password"))

    def _modify_auth(self, msg):
        accept = msg.get("accept")
        if not isinstance(accept, bool):
            raise ProtocolError("field 'accept' must be a boolean")
        changed = self.server.modify_auth_password(self.session, accept)
        return {"changed": changed}

    def _issue_link(self, msg):
        tok = self.server.issue_link_token(self.session)
        return {
            "link_token": tok.token,
            "link_payload": f"dualpass-link:{tok.token}",
            "expires_at": tok.expires_at,
        }

    def _redeem_link(self, msg):
        token = _str(msg, "link_token")
        if token.startswith("dualpass-link:"):
            token = token[len("dualpass-link:"):]
        desktop_token = self.server.redeem_link_token(
            self.session, token, _str(msg, "username", required=False)
        )
        return {"result": "granted", "session_token": desktop_token}

    def _session_status(self, msg):
        s = self.session
        out = {"phase": s.phase.value, "username": s.username}
        if s.session_token is not None:
            out["session_token"] = s.session_token
        return out

    def _admin_unlock(self, msg):
        self.server.admin_unlock(_str(msg, "username"), _str(msg, "admin_token", required=False))
        return {"unlocked": msg["username"]}


# -- socket server ----------------------------------------------------------


class _Handler(socketserver.StreamRequestHandler):
    def handle(self) -> None:
        conn = Connection(self.server.auth)
        try:
            while True:
                line = self.rfile.readline(MAX_LINE + 1)
                if not line:
                    break
                if len(line) > MAX_LINE:
                    self.wfile.write(encode({"status": "error", "error": "ProtocolError",
                                             "detail": "line too long"}))
                    break
                if not line.strip():
                    continue
                self.wfile.write(conn.handle_line(line))
                self.wfile.flush()
        except (ConnectionError, OSError) as exc:
            log.debug("connection dropped: %s", exc)
        finally:
            conn.close()


class _TCPServer(socketserver.ThreadingMixIn, socketserver.TCPServer):
    daemon_threads = True
    allow_reuse_address = True


class _UnixServer(socketserver.ThreadingMixIn, socketserver.UnixStreamServer):
    daemon_threads = True


def parse_addr(addr: str):
    """``host:port`` or ``unix:/path/to.sock``."""
    if addr.startswith("unix:"):
        return socket.AF_UNIX, addr[len("unix:"):]
    host, _, port = addr.rpartition(":")
    return socket.AF_INET, (host or "127.0.0.1", int(port))


def make_server(auth: AuthServer, addr: str = DEFAULT_ADDR) -> socketserver.BaseServer:
    family, target = parse_addr(addr)
    if family == socket.AF_UNIX and os.path.exists(target) and stat.S_ISSOCK(os.stat(target).st_mode):
        os.unlink(target)  # left over from a server that was killed
    cls = _UnixServer if family == socket.AF_UNIX else _TCPServer
    srv = cls(target, _Handler)
    srv.auth = auth
    return srv


def serve_in_thread(auth: AuthServer, addr: str = "127.0.0.1:0"):
    """Start a server on a daemon thread; returns (server, "host:port")."""
    srv = make_server(auth, addr)
    threading.Thread(target=srv.serve_forever, daemon=True).start()
    if isinstance(srv.server_address, tuple):
        host, port = srv.server_address[:2]
        return srv, f"{host}:{port}"
    return srv, f"unix:{srv.server_address}"


# -- client -----------------------------------------------------------------


class WireClient:
    def __init__(self, addr: str = DEFAULT_ADDR, timeout: float | None = 10.0) -> None:
        family, target = parse_addr(addr)
        self.sock = socket.socket(family, socket.SOCK_STREAM)
        self.sock.settimeout(timeout)
        self.sock.connect(target)
        self._rfile = self.sock.makefile("rb")
        self._next_id = 0

    def request(self, mtype: str, **fields) -> dict[str, Any]:
        self._next_id += 1
        self.sock.sendall(encode({"type": mtype, "request_id": str(self._next_id), **fields}))
        line = self._rfile.readline()
        if not line:
            raise ConnectionError("server closed the connection")
        return decode(line)

    def close(self) -> None:
        self._rfile.close()
        self.sock.close()

    def __enter__(self) -> "WireClient":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
