"""Password length/complexity rules and password-field input classification."""

from __future__ import annotations

import string
from dataclasses import dataclass
from enum import Enum


class CharClass(Enum):
    UPPER = "upper"
    LOWER = "lower"
    DIGIT = "digit"
    SYMBOL = "symbol"


# printable ASCII minus alphanumerics minus space
SYMBOLS = frozenset(string.punctuation)


class ViolationKind(Enum):
    TOO_SHORT = "TooShort"
    TOO_LONG = "TooLong"
    INVALID_CHARACTER = "InvalidCharacter"
    MISSING_CLASSES = "MissingClasses"
    FIRST_WINDOW_RULE = "FirstWindowRule"
    WRONG_LENGTH = "WrongLength"


@dataclass(frozen=True)
class Violation:
    kind: ViolationKind
    detail: str
    position: int | None = None  # 1-based, INVALID_CHARACTER only

    def to_dict(self) -> dict:
        out = {"kind": self.kind.value, "detail": self.detail}
        if self.position is not None:
            out["position"] = self.position
        return out


class FieldClass(Enum):
    LOCAL_CANDIDATE = "local_candidate"
    STRENGTH_VIOLATION = "strength_violation"


@dataclass(frozen=True)
class PolicyConfig:
    login_min: int = 5
    login_max: int = 15
    login_classes: frozenset = frozenset({CharClass.LOWER, CharClass.DIGIT})
    auth_min_classes: int = 4
    auth_length: int = 20
    first_window: int = 4

    def __post_init__(self) -> None:
        if self.login_min > self.login_max:
            raise ValueError("login_min must not exceed login_max")
        if not 0 <= self.auth_min_classes <= len(CharClass):
            raise ValueError("auth_min_classes must be within 0..4")

    @classmethod
    def from_dict(cls, data: dict) -> "PolicyConfig":
        data = dict(data)
        if "login_classes" in data:
            data["login_classes"] = frozenset(CharClass(c) for c in data["login_classes"])
        return cls(**data)


def char_class(ch: str) -> CharClass | None:
    if ch in string.ascii_uppercase:
        return CharClass.UPPER
    if ch in string.ascii_lowercase:
        return CharClass.LOWER
    if ch in string.digits:
        return CharClass.DIGIT
    if ch in SYMBOLS:
        return CharClass.SYMBOL
    return None


def char_classes(s: str) -> set[CharClass]:
    found = {char_class(ch) for ch in s}
    found.discard(None)
    return found


def validate_login_password(s: str, cfg: PolicyConfig = PolicyConfig()) -> list[Violation]:
    """Return every violation; an empty list means the password is acceptable."""
    out = []
    if len(s) < cfg.login_min:
        out.append(Violation(ViolationKind.TOO_SHORT, f"length {len(s)} < {cfg.login_min}"))
    if len(s) > cfg.login_max:
        out.append(Violation(ViolationKind.TOO_LONG, f"length {len(s)} > {cfg.login_max}"))
    for pos, ch in enumerate(s, start=1):
        if char_class(ch) not in cfg.login_classes:
            out.append(
                Violation(
                    ViolationKind.INVALID_CHARACTER,
                    f"character at position {pos} is not allowed",
                    position=pos,
                )
            )
    return out


def validate_auth_password(s: str, cfg: PolicyConfig = PolicyConfig()) -> list[Violation]:
    out = []
    if len(s) != cfg.auth_length:
        out.append(
            Violation(ViolationKind.WRONG_LENGTH, f"length {len(s)} != {cfg.auth_length}")
        )
    classes = char_classes(s)
    if len(classes) < cfg.auth_min_classes:
        out.append(
            Violation(
                ViolationKind.MISSING_CLASSES,
                f"{len(classes)} character classes, need {cfg.auth_min_classes}",
            )
        )
    head = char_classes(s[: cfg.first_window])
    if not head & {CharClass.UPPER, CharClass.SYMBOL}:
        out.append(
            Violation(
                ViolationKind.FIRST_WINDOW_RULE,
                f"first {cfg.first_window} characters need an uppercase letter or a symbol",
            )
        )
    return out


def classify_field_input(s: str, cfg: PolicyConfig = PolicyConfig()) -> FieldClass:
    if validate_login_password(s, cfg):
        return FieldClass.STRENGTH_VIOLATION
    return FieldClass.LOCAL_CANDIDATE
