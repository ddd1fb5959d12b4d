"""Quasi-matrix password converter.

A converter is an ordered list of single-character conversion units plus one
shuffling label per unit after the first. Each unit maps an entered login
character to a fixed-length random string; the labels then insert those
strings, one after another, into a growing temporary string. The final
temporary string is the authentication password.

Everything here is a pure function of its inputs. Randomness only enters via
the ``rng`` handed to :func:`generate_converter`.
"""

from __future__ import annotations

import random
import re
import string
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from types import MappingProxyType
from typing import Any, Mapping, Sequence

from .errors import (
    AlphabetViolation,
    ArityMismatch,
    GenerationExhausted,
    InfeasibleBudget,
    InvalidConverter,
    LengthMismatch,
    MalformedLabel,
)
from .policy import PolicyConfig, validate_auth_password

LOGIN_ALPHABET = string.ascii_lowercase + string.digits
STRING_ALPHABET = "".join(chr(c) for c in range(0x21, 0x7F))

SPEC_FORMAT = "dualpass.converter"
SPEC_VERSION = 1

_LABEL_RE = re.compile(r"([0-9]+)([FR])")


class Order(Enum):
    FORWARD = "F"
    REVERSE = "R"


@dataclass(frozen=True)
class Label:
    """Insertion rule: 1-based insertion point plus character order."""

    point: int
    order: Order = Order.FORWARD

    def __post_init__(self) -> None:
        if self.point < 1:
            raise MalformedLabel(f"insertion point must be >= 1, got {self.point}")

    def __str__(self) -> str:
        return f"{self.point}{self.order.value}"


def parse_label(text: str) -> Label:
    """Parse ``"4F"`` / ``"16R"`` style labels."""
    m = _LABEL_RE.fullmatch(text or "")
    if m is None:
        raise MalformedLabel(f"not a label: {text!r}")
    point = int(m.group(1))
    if point == 0:
        raise MalformedLabel(f"insertion points are 1-based: {text!r}")
    return Label(point, Order(m.group(2)))


def format_label(label: Label) -> str:
    return str(label)


def insert_string(base: str, piece: str, label: Label) -> str:
    """Insert ``piece`` whole into ``base`` at the label's insertion point.

    ``base`` of length n has n+1 insertion points; a point beyond n+1 is
    clamped to n+1 (append).
    """
    if not piece:
        raise ValueError("piece must be non-empty")
    cut = min(label.point, len(base) + 1) - 1
    text = piece[::-1] if label.order is Order.REVERSE else piece
    return base[:cut] + text + base[cut:]


def shuffle_strings(strings: Sequence[str], labels: Sequence[Label]) -> str:
    if not strings:
        raise ArityMismatch("need at least one string")
    if len(labels) != len(strings) - 1:
        raise ArityMismatch(
            f"{len(strings)} strings need {len(strings) - 1} labels, got {len(labels)}"
        )
    temp = strings[0]
    for piece, label in zip(strings[1:], labels):
        temp = insert_string(temp, piece, label)
    return temp


@dataclass(frozen=True)
class ConversionUnit:
    """One converter row: expected login character, digit, substitution table.

    Immutable; the table is exposed as a read-only mapping.
    """

    position: int
    expected_char: str
    digit: int
    table: Mapping[str, str]

    def __post_init__(self) -> None:
        object.__setattr__(self, "table", MappingProxyType(dict(self.table)))
        if self.expected_char not in self.table:
            raise InvalidConverter(
                f"unit {self.position}: expected char {self.expected_char!r} not in table"
            )
        for ch, s in self.table.items():
            if len(s) != self.digit:
                raise InvalidConverter(
                    f"unit {self.position}: table[{ch!r}] has length {len(s)}, digit is {self.digit}"
                )
        if len(set(self.table.values())) != len(self.table):
            raise InvalidConverter(f"unit {self.position}: table values are not distinct")

    @property
    def registered_string(self) -> str:
        return self.table[self.expected_char]

    def convert(self, ch: str) -> str:
        try:
            return self.table[ch]
        except KeyError:
            raise AlphabetViolation(
                f"character at position {self.position} is outside the login alphabet"
            ) from None


@dataclass(frozen=True)
class ConverterSpec:
    units: tuple[ConversionUnit, ...]
    labels: tuple[Label, ...]
    target_length: int = field(default=0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "units", tuple(self.units))
        object.__setattr__(self, "labels", tuple(self.labels))
        if not self.units:
            raise InvalidConverter("converter has no units")
        if [u.position for u in self.units] != list(range(1, len(self.units) + 1)):
            raise InvalidConverter("unit positions must be 1..L without gaps")
        if len(self.labels) != len(self.units) - 1:
            raise InvalidConverter("converter needs exactly L-1 labels")
        total = sum(u.digit for u in self.units)
        if not self.target_length:
            object.__setattr__(self, "target_length", total)
        elif total != self.target_length:
            raise InvalidConverter(f"digits sum to {total}, target is {self.target_length}")

    def __len__(self) -> int:
        return len(self.units)

    @property
    def digits(self) -> list[int]:
        return [u.digit for u in self.units]

    @property
    def expected_password(self) -> str:
        return "".join(u.expected_char for u in self.units)


def convert_chars(spec: ConverterSpec, entered: str) -> list[str]:
    if len(entered) != len(spec.units):
        raise LengthMismatch(f"expected {len(spec.units)} characters, got {len(entered)}")
    return [unit.convert(ch) for unit, ch in zip(spec.units, entered)]


def generate_auth_password(spec: ConverterSpec, entered: str) -> str:
    return shuffle_strings(convert_chars(spec, entered), spec.labels)


# -- generation -------------------------------------------------------------


@dataclass(frozen=True)
class GeneratorConfig:
    login_alphabet: str = LOGIN_ALPHABET
    string_alphabet: str = STRING_ALPHABET
    target_length: int = 20
    max_digit: int = 6
    max_regeneration_attempts: int = 1000
    rng_seed: int | None = None

    def make_rng(self) -> random.Random:
        """Seeded PRNG in test mode, OS entropy otherwise."""
        if self.rng_seed is None:
            return random.SystemRandom()
        return random.Random(self.rng_seed)


@lru_cache(maxsize=None)
def _compositions(parts: int, total: int, max_part: int) -> int:
    """Ways to write ``total`` as ``parts`` ordered integers in [1, max_part]."""
    if parts == 0:
        return 1 if total == 0 else 0
    if total < parts or total > parts * max_part:
        return 0
    return sum(
        _compositions(parts - 1, total - d, max_part)
        for d in range(1, min(max_part, total) + 1)
    )


def sample_digits(length: int, total: int, max_digit: int, rng: random.Random) -> list[int]:
    """Uniform draw over compositions of ``total`` into ``length`` digits."""
    if _compositions(length, total, max_digit) == 0:
        raise InfeasibleBudget(
            f"{length} digits in [1, {max_digit}] cannot sum to {total}"
        )
    digits = []
    remaining = total
    for k in range(length, 0, -1):
        choices = range(1, min(max_digit, remaining) + 1)
        weights = [_compositions(k - 1, remaining - d, max_digit) for d in choices]
        d = rng.choices(choices, weights=weights)[0]
        digits.append(d)
        remaining -= d
    return digits


def _random_table(alphabet: str, digit: int, pool: str, rng: random.Random) -> dict[str, str]:
    if len(pool) ** digit < len(alphabet):
        raise InfeasibleBudget(f"cannot draw {len(alphabet)} distinct strings of length {digit}")
    seen: set[str] = set()
    table = {}
    for ch in alphabet:
        while True:
            s = "".join(rng.choice(pool) for _ in range(digit))
            if s not in seen:
                break
        seen.add(s)
        table[ch] = s
    return table


def generate_converter(
    login_password: str,
    config: GeneratorConfig | None = None,
    rng: random.Random | None = None,
    policy: PolicyConfig | None = None,
) -> ConverterSpec:
    """Draw a fresh converter whose registered authentication password is policy-valid.

    Digits, table strings and labels are all system-selected. Candidates whose
    authentication password fails the complexity rules are thrown away and
    redrawn, up to ``config.max_regeneration_attempts`` times.
    """
    config = config or GeneratorConfig()
    rng = rng or config.make_rng()
    policy = policy or PolicyConfig(auth_length=config.target_length)
    n = len(login_password)
    if n == 0:
        raise LengthMismatch("login password is empty")
    bad = [ch for ch in login_password if ch not in config.login_alphabet]
    if bad:
        raise AlphabetViolation("login password contains characters outside the login alphabet")
    if _compositions(n, config.target_length, config.max_digit) == 0:
        raise InfeasibleBudget(
            f"{n} digits in [1, {config.max_digit}] cannot sum to {config.target_length}"
        )

    for _ in range(config.max_regeneration_attempts):
        digits = sample_digits(n, config.target_length, config.max_digit, rng)
        units = [
            ConversionUnit(
                position=i,
                expected_char=ch,
                digit=d,
                table=_random_table(config.login_alphabet, d, config.string_alphabet, rng),
            )
            for i, (ch, d) in enumerate(zip(login_password, digits), start=1)
        ]
        labels = [
            Label(rng.randint(1, config.target_length), rng.choice((Order.FORWARD, Order.REVERSE)))
            for _ in range(n - 1)
        ]
        spec = ConverterSpec(units, labels, config.target_length)
        if not validate_auth_password(generate_auth_password(spec, login_password), policy):
            return spec
    raise GenerationExhausted(
        f"no policy-valid authentication password after {config.max_regeneration_attempts} attempts"
    )


def rekey_converter(spec: ConverterSpec, new_login_password: str) -> ConverterSpec:
    """Swap in new expected characters without touching the registered strings.

    Each unit's table is permuted (a single transposition) so the new
    expected character maps to the string the old one did. Digits, labels and
    therefore the registered authentication password are unchanged.
    """
    if len(new_login_password) != len(spec.units):
        raise LengthMismatch(
            f"expected {len(spec.units)} characters, got {len(new_login_password)}"
        )
    units = []
    for unit, ch in zip(spec.units, new_login_password):
        if ch not in unit.table:
            raise AlphabetViolation(
                f"character at position {unit.position} is outside the login alphabet"
            )
        table = dict(unit.table)
        old = unit.expected_char
        table[ch], table[old] = unit.table[old], unit.table[ch]
        units.append(ConversionUnit(unit.position, ch, unit.digit, table))
    return ConverterSpec(units, list(spec.labels), spec.target_length)


# -- persistence ------------------------------------------------------------


def spec_to_dict(spec: ConverterSpec) -> dict[str, Any]:
    return {
        "format": SPEC_FORMAT,
        "version": SPEC_VERSION,
        "target_length": spec.target_length,
        "units": [
            {
                "position": u.position,
                "expected_char": u.expected_char,
                "digit": u.digit,
                "table": dict(sorted(u.table.items())),
            }
            for u in spec.units
        ],
        "labels": [str(label) for label in spec.labels],
    }


def spec_from_dict(data: dict[str, Any]) -> ConverterSpec:
    if data.get("format") != SPEC_FORMAT or data.get("version") != SPEC_VERSION:
        raise InvalidConverter(
            f"unsupported converter format {data.get('format')!r} v{data.get('version')!r}"
        )
    units = [
        ConversionUnit(u["position"], u["expected_char"], u["digit"], dict(u["table"]))
        for u in data["units"]
    ]
    labels = [parse_label(t) for t in data["labels"]]
    return ConverterSpec(units, labels, data["target_length"])
