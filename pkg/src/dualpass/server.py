"""Login routines: username gating, password gating, isolated authentication,
registration, modification and smartphone-to-desktop link tokens.

``AuthServer`` is transport-agnostic. ``dualpass.wire`` puts it behind a
newline-delimited JSON socket protocol.
"""

from __future__ import annotations

import hmac
import json
import logging
import random
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

from .convcore import GeneratorConfig, generate_auth_password, generate_converter, rekey_converter
from .credstore import (
    AccountRecord,
    AuthVerifier,
    CredentialStore,
    DeviceDescriptor,
    DeviceKind,
    LinkToken,
    LockState,
    Outcome,
)
from .errors import (
    AccountMismatch,
    AlphabetViolation,
    LengthMismatch,
    NotASmartphone,
    NotAuthenticated,
    NotRegisteredDevice,
    PolicyViolation,
    ProtocolError,
    TokenExpired,
    TokenUnknown,
    TokenUsed,
    Unauthorized,
    UnknownAccount,
)
from .identity import DEFAULT_STRATEGY, IdentifierStrategy, Verdict, derive_identifier, verify_identifier
from .policy import FieldClass, PolicyConfig, classify_field_input, validate_login_password

log = logging.getLogger(__name__)


class SystemClock:
    def now(self) -> float:
        return time.time()


class MockClock:
    def __init__(self, start: float = 1_700_000_000.0) -> None:
        self._now = start

    def now(self) -> float:
        return self._now

    def advance(self, seconds: float) -> None:
        self._now += seconds


class Phase(Enum):
    FRESH = "fresh"
    USERNAME_ACCEPTED = "username_accepted"
    FIELD_DISABLED = "field_disabled"
    AUTHENTICATED = "authenticated"


class FieldState(Enum):
    ENABLED = "enabled"
    DISABLED = "disabled"


class PasswordResult(Enum):
    GRANTED = "granted"
    DENIED = "denied"
    LOCKED_OUT = "locked_out"
    DISABLED = "disabled"


@dataclass
class Session:
    session_id: str
    device: DeviceDescriptor
    phase: Phase = Phase.FRESH
    username: str | None = None
    session_token: str | None = None
    issued_token: str | None = None


@dataclass
class ServerConfig:
    policy: PolicyConfig = field(default_factory=PolicyConfig)
    generator: GeneratorConfig = field(default_factory=GeneratorConfig)
    identifier_strategy: IdentifierStrategy = DEFAULT_STRATEGY
    max_attempts: int = 3
    lock_expiry: float | None = None
    link_ttl: float = 120.0
    admin_token: str | None = None
    seed: int | None = None

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ServerConfig":
        data = dict(data)
        if "policy" in data:
            data["policy"] = PolicyConfig.from_dict(data["policy"])
        if "generator" in data:
            data["generator"] = GeneratorConfig(**data["generator"])
        if "identifier_strategy" in data:
            data["identifier_strategy"] = IdentifierStrategy.parse(data["identifier_strategy"])
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "ServerConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


class AuthServer:
    def __init__(
        self,
        store: CredentialStore,
        config: ServerConfig | None = None,
        clock=None,
    ) -> None:
        self.store = store
        self.config = config or ServerConfig()
        self.clock = clock or SystemClock()
        seed = self.config.seed if self.config.seed is not None else self.config.generator.rng_seed
        self.rng: random.Random = random.Random(seed) if seed is not None else random.SystemRandom()
        self._rng_lock = threading.Lock()
        self._sessions: dict[str, Session] = {}
        self._sessions_lock = threading.Lock()
        self._account_locks: defaultdict[str, threading.Lock] = defaultdict(threading.Lock)
        self._account_locks_guard = threading.Lock()
        # isolated-authentication runs; nonlocal attempts must never move this
        self.authentication_initiations = 0

    @classmethod
    def open(cls, store_path, config: ServerConfig | None = None, clock=None) -> "AuthServer":
        """Build a server and its store with the lockout settings from ``config``."""
        config = config or ServerConfig()
        store = CredentialStore(store_path, config.max_attempts, config.lock_expiry)
        return cls(store, config, clock)

    # -- helpers ----------------------------------------------------------

    def _token(self) -> str:
        with self._rng_lock:
            return f"{self.rng.getrandbits(128):032x}"

    def _salt(self) -> bytes:
        with self._rng_lock:
            return self.rng.randbytes(16)

    def _account_lock(self, username: str) -> threading.Lock:
        with self._account_locks_guard:
            return self._account_locks[username]

    def _new_converter(self, login_password: str):
        with self._rng_lock:
            spec = generate_converter(
                login_password, self.config.generator, self.rng, self.config.policy
            )
            ident = derive_identifier(
                spec, login_password, self.config.identifier_strategy, self.rng
            )
        return spec, ident

    def _require_authenticated(self, session: Session) -> AccountRecord:
        if session.phase is not Phase.AUTHENTICATED or session.username is None:
            raise NotAuthenticated("session is not authenticated")
        rec = self.store.find_by_username(session.username)
        if rec is None:
            raise UnknownAccount(session.username)
        return rec

    # -- sessions ---------------------------------------------------------

    def open_session(self, device: DeviceDescriptor) -> Session:
        session = Session(self._token(), device)
        with self._sessions_lock:
            self._sessions[session.session_id] = session
        return session

    def close_session(self, session: Session) -> None:
        with self._sessions_lock:
            self._sessions.pop(session.session_id, None)

    def get_session(self, session_id: str) -> Session | None:
        with self._sessions_lock:
            return self._sessions.get(session_id)

    # -- login routines ---------------------------------------------------

    def handle_username_entry(self, session: Session, username: str) -> FieldState:
        """Enable the password field only for the smartphone bound to ``username``."""
        if session.phase is not Phase.FRESH:
            raise ProtocolError(f"username entry not allowed in phase {session.phase.value}")
        rec = self.store.find_by_username(username)
        if rec is not None and rec.device == session.device:
            session.phase = Phase.USERNAME_ACCEPTED
            session.username = username
            return FieldState.ENABLED
        session.phase = Phase.FIELD_DISABLED
        log.info("nonlocal username entry for %r; password field disabled", username)
        return FieldState.DISABLED

    def handle_password_entry(
        self, session: Session, password_input: str
    ) -> tuple[PasswordResult, str | None]:
        """Run the password-field pipeline. Returns (result, session token if granted)."""
        if session.phase is not Phase.USERNAME_ACCEPTED or session.username is None:
            return PasswordResult.DISABLED, None
        if classify_field_input(password_input, self.config.policy) is FieldClass.STRENGTH_VIOLATION:
            log.info("strength violation on %r; authentication not initiated", session.username)
            return PasswordResult.LOCKED_OUT, None

        username = session.username
        with self._account_lock(username):
            now = self.clock.now()
            rec = self.store.find_by_username(username)
            if rec is None:
                return PasswordResult.DENIED, None
            if self.store.lock_state(username, now) is LockState.LOCKED:
                return PasswordResult.LOCKED_OUT, None
            # no identifier is bound to any device but the registered smartphone
            if rec.device != session.device:
                log.info("no process identifier for this device on %r", username)
                return PasswordResult.DENIED, None
            if verify_identifier(rec.converter, password_input, rec.process_identifier) is Verdict.MISMATCH:
                self.store.record_attempt(username, Outcome.FAILURE, now)
                return PasswordResult.DENIED, None

            self.authentication_initiations += 1
            ok = self._authenticate(rec, password_input)
            if not ok:
                self.store.record_attempt(username, Outcome.FAILURE, now)
                return PasswordResult.DENIED, None
            self.store.record_attempt(username, Outcome.SUCCESS, now)

        session.phase = Phase.AUTHENTICATED
        session.session_token = self._token()
        log.info("login granted for %r", username)
        return PasswordResult.GRANTED, session.session_token

    @staticmethod
    def _authenticate(rec: AccountRecord, login_password: str) -> bool:
        # the regenerated password lives only in this frame
        try:
            temp = generate_auth_password(rec.converter, login_password)
        except (LengthMismatch, AlphabetViolation):
            return False
        ok = rec.auth_verifier.matches(temp)
        del temp
        return ok

    # -- registration -----------------------------------------------------

    def register(
        self,
        session: Session,
        username: str,
        personal_info: dict[str, str] | None,
        login_password: str,
    ) -> dict[str, Any]:
        if session.device.device_kind is not DeviceKind.SMARTPHONE:
            raise NotASmartphone("registration must happen on a smartphone")
        if not username:
            raise ProtocolError("username must be non-empty")
        violations = validate_login_password(login_password, self.config.policy)
        if violations:
            raise PolicyViolation(violations)
        spec, ident = self._new_converter(login_password)
        verifier = AuthVerifier.create(generate_auth_password(spec, login_password), self._salt())
        rec = AccountRecord(
            username=username,
            device=session.device,
            converter=spec,
            auth_verifier=verifier,
            process_identifier=ident,
            personal_info=dict(personal_info or {}),
        )
        with self._account_lock(username):
            self.store.create_account(rec)
        return {"target_length": spec.target_length, "strategy": ident.strategy.kind.value}

    # -- modification -----------------------------------------------------

    def modify_login_password(self, session: Session, new_login_password: str) -> dict[str, Any]:
        rec = self._require_authenticated(session)
        violations = validate_login_password(new_login_password, self.config.policy)
        if violations:
            raise PolicyViolation(violations)
        with self._account_lock(rec.username):
            rec = self.store.find_by_username(rec.username)
            regenerated = len(new_login_password) != len(rec.converter)
            if regenerated:
                spec, ident = self._new_converter(new_login_password)
                rec.auth_verifier = AuthVerifier.create(
                    generate_auth_password(spec, new_login_password), self._salt()
                )
            else:
                spec = rekey_converter(rec.converter, new_login_password)
                with self._rng_lock:
                    ident = derive_identifier(
                        spec, new_login_password, rec.process_identifier.strategy, self.rng
                    )
            rec.converter = spec
            rec.process_identifier = ident
            self.store.update_account(rec)
        return {"regenerated": regenerated}

    def modify_auth_password(self, session: Session, accept: bool) -> bool:
        """Regenerate strings and labels for the same login password if accepted."""
        rec = self._require_authenticated(session)
        if rec.device != session.device:
            raise NotRegisteredDevice("only the registered smartphone can accept this")
        if not accept:
            return False
        with self._account_lock(rec.username):
            rec = self.store.find_by_username(rec.username)
            login_password = rec.converter.expected_password
            spec, ident = self._new_converter(login_password)
            rec.converter = spec
            rec.process_identifier = ident
            rec.auth_verifier = AuthVerifier.create(
                generate_auth_password(spec, login_password), self._salt()
            )
            self.store.update_account(rec)
        return True

    # -- link tokens ------------------------------------------------------

    def issue_link_token(self, session: Session) -> LinkToken:
        if session.device.device_kind is DeviceKind.SMARTPHONE:
            raise ProtocolError("link tokens are issued to non-smartphone devices")
        token = LinkToken(
            token=self._token(),
            desktop_session=session.session_id,
            expires_at=self.clock.now() + self.config.link_ttl,
        )
        self.store.put_link_token(token)
        session.issued_token = token.token
        return token

    def redeem_link_token(self, session: Session, token: str, username: str | None = None) -> str:
        """Log the token's desktop session into the phone's own account."""
        rec = self._require_authenticated(session)
        if session.device.device_kind is not DeviceKind.SMARTPHONE or rec.device != session.device:
            raise NotRegisteredDevice("tokens are redeemed by the registered smartphone")
        if username is not None and username != rec.username:
            raise AccountMismatch("a phone can only link devices into its own account")
        tok = self.store.get_link_token(token)
        if tok is None:
            raise TokenUnknown("unknown link token")
        if tok.used:
            raise TokenUsed("link token already used")
        if self.clock.now() >= tok.expires_at:
            raise TokenExpired("link token expired")
        self.store.mark_token_used(token, rec.username)
        desktop = self.get_session(tok.desktop_session)
        if desktop is None:
            raise TokenUnknown("the issuing session is gone")
        desktop.phase = Phase.AUTHENTICATED
        desktop.username = rec.username
        desktop.session_token = self._token()
        log.info("desktop session linked into %r", rec.username)
        return desktop.session_token

    # -- admin ------------------------------------------------------------

    def admin_unlock(self, username: str, admin_token: str | None) -> None:
        expected = self.config.admin_token
        if not expected or not admin_token or not hmac.compare_digest(expected, admin_token):
            raise Unauthorized("admin token missing or wrong")
        with self._account_lock(username):
            self.store.unlock(username)
