"""Durable account store.

The whole store is one canonical JSON document followed by a checksum line::

    { ...json... }
    sha256:<hex digest of the JSON bytes>

Saves go to a temp file in the same directory, get fsynced, then replace the
live file, so a crash at any point leaves either the old or the new state.
The server is the only writer; it serializes mutations with ``self._lock``.
"""

from __future__ import annotations

import hashlib
import hmac
import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Any, Callable

from .convcore import ConverterSpec, spec_from_dict, spec_to_dict
from .errors import DeviceAlreadyBound, DuplicateUsername, StoreCorrupt, UnknownAccount
from .identity import ProcessIdentifier

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
STORE_ENV = "DUALPASS_STORE"


class DeviceKind(Enum):
    SMARTPHONE = "smartphone"
    DESKTOP = "desktop"
    LAPTOP = "laptop"
    TABLET = "tablet"


@dataclass(frozen=True)
class DeviceDescriptor:
    phone_number: str = ""
    imei: str = ""
    sim_id: str = ""
    device_kind: DeviceKind = DeviceKind.SMARTPHONE

    def __post_init__(self) -> None:
        if self.device_kind is DeviceKind.SMARTPHONE and not self.phone_number:
            raise ValueError("a smartphone descriptor needs a phone number")

    def to_dict(self) -> dict[str, str]:
        return {
            "phone_number": self.phone_number,
            "imei": self.imei,
            "sim_id": self.sim_id,
            "device_kind": self.device_kind.value,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "DeviceDescriptor":
        return cls(
            phone_number=data.get("phone_number", ""),
            imei=data.get("imei", ""),
            sim_id=data.get("sim_id", ""),
            device_kind=DeviceKind(data.get("device_kind", "smartphone")),
        )


class LockState(Enum):
    UNLOCKED = "unlocked"
    LOCKED = "locked"


class Outcome(Enum):
    SUCCESS = "success"
    FAILURE = "failure"


@dataclass
class AuthVerifier:
    salt: bytes
    digest: str

    @classmethod
    def create(cls, auth_password: str, salt: bytes) -> "AuthVerifier":
        return cls(salt, _hash(salt, auth_password))

    def matches(self, auth_password: str) -> bool:
        return hmac.compare_digest(self.digest, _hash(self.salt, auth_password))


def _hash(salt: bytes, auth_password: str) -> str:
    return hashlib.sha256(salt + auth_password.encode("utf-8")).hexdigest()


@dataclass
class AccountRecord:
    username: str
    device: DeviceDescriptor
    converter: ConverterSpec
    auth_verifier: AuthVerifier
    process_identifier: ProcessIdentifier
    personal_info: dict[str, str] = field(default_factory=dict)
    failed_attempts: int = 0
    locked_since: float | None = None
    version: int = 1

    @property
    def user_identifier(self) -> str:
        return self.device.phone_number

    @property
    def lock_state(self) -> LockState:
        return LockState.UNLOCKED if self.locked_since is None else LockState.LOCKED

    def copy(self) -> "AccountRecord":
        # converter, identifier and device are immutable and can be shared
        return replace(
            self,
            auth_verifier=replace(self.auth_verifier),
            personal_info=dict(self.personal_info),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "username": self.username,
            "user_identifier": self.user_identifier,
            "device": self.device.to_dict(),
            "personal_info": dict(sorted(self.personal_info.items())),
            "converter": spec_to_dict(self.converter),
            "auth_verifier": {
                "salt": self.auth_verifier.salt.hex(),
                "sha256": self.auth_verifier.digest,
            },
            "process_identifier": self.process_identifier.to_dict(),
            "failed_attempts": self.failed_attempts,
            "locked_since": self.locked_since,
            "version": self.version,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "AccountRecord":
        v = data["auth_verifier"]
        return cls(
            username=data["username"],
            device=DeviceDescriptor.from_dict(data["device"]),
            converter=spec_from_dict(data["converter"]),
            auth_verifier=AuthVerifier(bytes.fromhex(v["salt"]), v["sha256"]),
            process_identifier=ProcessIdentifier.from_dict(data["process_identifier"]),
            personal_info=dict(data.get("personal_info", {})),
            failed_attempts=data.get("failed_attempts", 0),
            locked_since=data.get("locked_since"),
            version=data.get("version", 1),
        )


@dataclass
class LinkToken:
    token: str
    desktop_session: str
    expires_at: float
    used: bool = False
    account: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "token": self.token,
            "desktop_session": self.desktop_session,
            "expires_at": self.expires_at,
            "used": self.used,
            "account": self.account,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "LinkToken":
        return cls(**data)


def encode_store(accounts: dict[str, AccountRecord], link_tokens: dict[str, LinkToken]) -> bytes:
    doc = {
        "format_version": FORMAT_VERSION,
        "accounts": {name: rec.to_dict() for name, rec in sorted(accounts.items())},
        "link_tokens": {t: tok.to_dict() for t, tok in sorted(link_tokens.items())},
    }
    body = json.dumps(doc, sort_keys=True, indent=2, ensure_ascii=False).encode("utf-8") + b"\n"
    return body + b"sha256:" + hashlib.sha256(body).hexdigest().encode("ascii") + b"\n"


def decode_store(raw: bytes) -> tuple[dict[str, AccountRecord], dict[str, LinkToken]]:
    body, sep, trailer = raw.rstrip(b"\n").rpartition(b"\n")
    if not sep or not trailer.startswith(b"sha256:"):
        raise StoreCorrupt("missing checksum line")
    body += b"\n"
    if hashlib.sha256(body).hexdigest().encode("ascii") != trailer[len(b"sha256:"):]:
        raise StoreCorrupt("checksum mismatch")
    try:
        doc = json.loads(body.decode("utf-8"))
    except ValueError as exc:
        raise StoreCorrupt(f"unreadable store: {exc}") from exc
    if doc.get("format_version") != FORMAT_VERSION:
        raise StoreCorrupt(f"unsupported format_version {doc.get('format_version')!r}")
    accounts = {k: AccountRecord.from_dict(v) for k, v in doc["accounts"].items()}
    tokens = {k: LinkToken.from_dict(v) for k, v in doc.get("link_tokens", {}).items()}
    return accounts, tokens


def atomic_write(path: Path, data: bytes, before_replace: Callable[[Path], None] | None = None) -> None:
    tmp = path.with_name(f".{path.name}.{os.getpid()}.{threading.get_ident()}.tmp")
    try:
        with open(tmp, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        if before_replace is not None:
            before_replace(tmp)
        os.replace(tmp, path)
    except BaseException:
        try:
            tmp.unlink()
        except OSError:
            pass
        raise
    try:
        dir_fd = os.open(path.parent, os.O_RDONLY)
    except OSError:
        return
    try:
        os.fsync(dir_fd)
    finally:
        os.close(dir_fd)


class CredentialStore:
    """Accounts, device bindings and link tokens.

    ``path=None`` keeps everything in memory (used by the bulk tests). Every
    getter returns a deep copy; callers write back through the mutators.
    """

    def __init__(
        self,
        path: str | os.PathLike | None = None,
        max_attempts: int = 3,
        lock_expiry: float | None = None,
    ) -> None:
        self.path = Path(path) if path is not None else None
        self.max_attempts = max_attempts
        self.lock_expiry = lock_expiry
        self._lock = threading.RLock()
        self._accounts: dict[str, AccountRecord] = {}
        self._tokens: dict[str, LinkToken] = {}
        # test hook: runs between the temp-file fsync and the rename
        self.before_replace: Callable[[Path], None] | None = None
        if self.path is not None and self.path.exists():
            self._accounts, self._tokens = decode_store(self.path.read_bytes())

    @classmethod
    def from_env(cls, **kwargs) -> "CredentialStore":
        return cls(os.environ[STORE_ENV], **kwargs)

    def __len__(self) -> int:
        return len(self._accounts)

    def _save(self) -> None:
        if self.path is None:
            return
        self.path.parent.mkdir(parents=True, exist_ok=True)
        atomic_write(self.path, encode_store(self._accounts, self._tokens), self.before_replace)

    def snapshot(self) -> bytes:
        with self._lock:
            return encode_store(self._accounts, self._tokens)

    # -- accounts ---------------------------------------------------------

    def create_account(self, record: AccountRecord) -> None:
        with self._lock:
            if record.username in self._accounts:
                raise DuplicateUsername(f"username {record.username!r} already registered")
            if record.device.device_kind is DeviceKind.SMARTPHONE:
                for other in self._accounts.values():
                    if other.device == record.device:
                        raise DeviceAlreadyBound("this smartphone is already bound to an account")
            self._accounts[record.username] = record.copy()
            try:
                self._save()
            except BaseException:
                del self._accounts[record.username]
                raise
        log.info("account created: %s", record.username)

    def find_by_username(self, username: str) -> AccountRecord | None:
        with self._lock:
            rec = self._accounts.get(username)
            return rec.copy() if rec is not None else None

    def find_by_device(self, device: DeviceDescriptor) -> AccountRecord | None:
        with self._lock:
            for rec in self._accounts.values():
                if rec.device == device:
                    return rec.copy()
        return None

    def usernames(self) -> list[str]:
        with self._lock:
            return sorted(self._accounts)

    def update_account(self, record: AccountRecord, bump_version: bool = True) -> AccountRecord:
        with self._lock:
            old = self._accounts.get(record.username)
            if old is None:
                raise UnknownAccount(record.username)
            new = record.copy()
            if bump_version:
                new.version = old.version + 1
            self._accounts[record.username] = new
            try:
                self._save()
            except BaseException:
                self._accounts[record.username] = old
                raise
            return new.copy()

    # -- lockout ----------------------------------------------------------

    def _expire(self, rec: AccountRecord, now: float) -> bool:
        if (
            rec.locked_since is not None
            and self.lock_expiry is not None
            and now - rec.locked_since >= self.lock_expiry
        ):
            rec.locked_since = None
            rec.failed_attempts = 0
            return True
        return False

    def lock_state(self, username: str, now: float) -> LockState:
        with self._lock:
            rec = self._accounts.get(username)
            if rec is None:
                raise UnknownAccount(username)
            if self._expire(rec, now):
                self._save()
            return rec.lock_state

    def record_attempt(self, username: str, outcome: Outcome, now: float) -> LockState:
        with self._lock:
            rec = self._accounts.get(username)
            if rec is None:
                raise UnknownAccount(username)
            self._expire(rec, now)
            if rec.locked_since is not None:
                return LockState.LOCKED
            if outcome is Outcome.SUCCESS:
                rec.failed_attempts = 0
            else:
                rec.failed_attempts = min(rec.failed_attempts + 1, self.max_attempts)
                if rec.failed_attempts >= self.max_attempts:
                    rec.locked_since = now
                    log.warning("account locked after %d failures: %s", rec.failed_attempts, username)
            self._save()
            return rec.lock_state

    def unlock(self, username: str) -> None:
        with self._lock:
            rec = self._accounts.get(username)
            if rec is None:
                raise UnknownAccount(username)
            rec.locked_since = None
            rec.failed_attempts = 0
            self._save()

    # -- link tokens ------------------------------------------------------

    def put_link_token(self, token: LinkToken) -> None:
        with self._lock:
            self._tokens[token.token] = replace(token)
            self._save()

    def get_link_token(self, token: str) -> LinkToken | None:
        with self._lock:
            tok = self._tokens.get(token)
            return replace(tok) if tok is not None else None

    def mark_token_used(self, token: str, account: str) -> None:
        with self._lock:
            tok = self._tokens[token]
            tok.used = True
            tok.account = account
            self._save()
