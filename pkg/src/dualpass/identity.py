"""Login-process identifiers picked out of converter elements.

An identifier is a handful of converter cells (row, column) together with the
values they held when the account was registered. At login the same cells are
recomputed from the entered password; the identifier matches only if every
value comes out the same.
"""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import dataclass
from enum import Enum
from typing import Any

from .convcore import ConverterSpec
from .errors import AlphabetViolation, InvalidStrategy, RowOutOfRange


class Column(Enum):
    LOGIN_CHAR = "login_char"
    DIGIT = "digit"
    STRING = "string"
    LABEL = "label"

    @property
    def rank(self) -> int:
        return _COLUMN_RANK[self]


_COLUMN_RANK = {c: i for i, c in enumerate(Column)}


@dataclass(frozen=True, order=False)
class CellRef:
    row: int
    column: Column

    def __post_init__(self) -> None:
        if self.row < 1:
            raise InvalidStrategy(f"rows are 1-based, got {self.row}")
        if self.row == 1 and self.column is Column.LABEL:
            raise InvalidStrategy("the first row carries no label")

    @property
    def sort_key(self) -> tuple[int, int]:
        return self.row, self.column.rank


class StrategyKind(Enum):
    ROW = "row"
    COLUMN = "column"
    COMBO = "combo"


@dataclass(frozen=True)
class IdentifierStrategy:
    kind: StrategyKind
    row: int | None = None
    column: Column | None = None
    k: int | None = None

    @classmethod
    def parse(cls, text: str) -> "IdentifierStrategy":
        """``row:N``, ``column:NAME`` or ``combo:K``."""
        kind, _, arg = text.partition(":")
        try:
            kind = StrategyKind(kind)
            if kind is StrategyKind.ROW:
                return cls(kind, row=int(arg))
            if kind is StrategyKind.COLUMN:
                return cls(kind, column=Column(arg))
            return cls(kind, k=int(arg))
        except ValueError:
            raise InvalidStrategy(f"bad identifier strategy {text!r}") from None

    def __str__(self) -> str:
        if self.kind is StrategyKind.ROW:
            return f"row:{self.row}"
        if self.kind is StrategyKind.COLUMN:
            return f"column:{self.column.value}"
        return f"combo:{self.k}"


DEFAULT_STRATEGY = IdentifierStrategy(StrategyKind.COMBO, k=4)


@dataclass(frozen=True)
class ProcessIdentifier:
    """Recorded converter cells plus a salted fingerprint over them.

    There is deliberately no field for usernames, phone numbers or device IDs.
    """

    strategy: IdentifierStrategy
    cells: tuple[tuple[CellRef, str], ...]
    salt: bytes
    fingerprint: str

    def to_dict(self) -> dict[str, Any]:
        return {
            "strategy": str(self.strategy),
            "cells": canonical_cells(self.cells),
            "salt": self.salt.hex(),
            "fingerprint": self.fingerprint,
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ProcessIdentifier":
        cells = tuple((CellRef(r, Column(c)), v) for r, c, v in data["cells"])
        return cls(
            IdentifierStrategy.parse(data["strategy"]),
            cells,
            bytes.fromhex(data["salt"]),
            data["fingerprint"],
        )


def all_cells(length: int) -> list[CellRef]:
    cells = []
    for row in range(1, length + 1):
        for col in Column:
            if row == 1 and col is Column.LABEL:
                continue
            cells.append(CellRef(row, col))
    return cells


def canonical_cells(cells) -> list[list[Any]]:
    """JSON-ready ``[row, column, value]`` triples sorted by (row, column)."""
    ordered = sorted(cells, key=lambda cv: cv[0].sort_key)
    return [[ref.row, ref.column.value, value] for ref, value in ordered]


def compute_fingerprint(cells, salt: bytes) -> str:
    body = json.dumps(canonical_cells(cells), separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(salt + body.encode("utf-8")).hexdigest()


def cell_value(spec: ConverterSpec, ref: CellRef, entered: str) -> str:
    """Value of ``ref`` when ``entered`` is pushed through the converter."""
    if ref.row > len(spec.units):
        raise RowOutOfRange(f"row {ref.row} outside a {len(spec.units)}-row converter")
    unit = spec.units[ref.row - 1]
    ch = entered[ref.row - 1]
    if ref.column is Column.LOGIN_CHAR:
        return ch
    if ref.column is Column.DIGIT:
        return str(unit.digit)
    if ref.column is Column.STRING:
        return unit.convert(ch)
    return str(spec.labels[ref.row - 2])


def select_cells(length: int, strategy: IdentifierStrategy, rng: random.Random) -> list[CellRef]:
    if strategy.kind is StrategyKind.ROW:
        if strategy.row is None or not 1 <= strategy.row <= length:
            raise InvalidStrategy(f"row {strategy.row} outside 1..{length}")
        return [c for c in all_cells(length) if c.row == strategy.row]
    if strategy.kind is StrategyKind.COLUMN:
        if strategy.column in (None, Column.LOGIN_CHAR):
            raise InvalidStrategy("the login-character column cannot serve as an identifier")
        return [c for c in all_cells(length) if c.column is strategy.column]
    pool = all_cells(length)
    k = strategy.k or 0
    if not 1 <= k <= len(pool):
        raise InvalidStrategy(f"combo size {k} outside 1..{len(pool)}")
    while True:
        picked = rng.sample(pool, k)
        if any(c.column is Column.STRING for c in picked):
            return sorted(picked, key=lambda c: c.sort_key)


def derive_identifier(
    spec: ConverterSpec,
    login_password: str,
    strategy: IdentifierStrategy = DEFAULT_STRATEGY,
    rng: random.Random | None = None,
) -> ProcessIdentifier:
    rng = rng or random.SystemRandom()
    if len(login_password) != len(spec.units):
        raise InvalidStrategy("login password length does not match the converter")
    refs = select_cells(len(spec.units), strategy, rng)
    cells = tuple((ref, cell_value(spec, ref, login_password)) for ref in refs)
    salt = rng.randbytes(16)
    return ProcessIdentifier(strategy, cells, salt, compute_fingerprint(cells, salt))


class Verdict(Enum):
    MATCH = "match"
    MISMATCH = "mismatch"


def verify_identifier(spec: ConverterSpec, entered: str, stored: ProcessIdentifier) -> Verdict:
    """MATCH iff every stored cell recomputes to the same value from ``entered``."""
    for ref, _ in stored.cells:
        if ref.row > len(spec.units):
            raise RowOutOfRange(f"row {ref.row} outside a {len(spec.units)}-row converter")
    if len(entered) != len(spec.units):
        return Verdict.MISMATCH
    try:
        cells = tuple((ref, cell_value(spec, ref, entered)) for ref, _ in stored.cells)
    except AlphabetViolation:
        return Verdict.MISMATCH
    if cells == stored.cells and compute_fingerprint(cells, stored.salt) == stored.fingerprint:
        return Verdict.MATCH
    return Verdict.MISMATCH
