"""Low-level helpers for the line-oriented interchange formats.

Every file starts with ``format <name> <version>``. Numbers are written
with Python's shortest round-tripping repr, so save/load is lossless.
"""
from __future__ import annotations

from typing import Iterator

import numpy as np


class ParseError(ValueError):
    """Malformed file; carries the offending line number and field."""

    def __init__(self, path: str, line_no: int, field: str, message: str):
        self.path = path
        self.line_no = line_no
        self.field = field
        super().__init__(f"{path}:{line_no}: field '{field}': {message}")


def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        raise TypeError("no boolean fields in the interchange formats")
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return str(x)


def fmt_seq(xs) -> str:
    return " ".join(fmt(x) for x in xs)


class LineReader:
    """Tokenized line iterator that reports positions in parse errors."""

    def __init__(self, path: str, text: str):
        self.path = path
        self._lines = text.splitlines()
        self._pos = 0
        self.line_no = 0

    def __iter__(self) -> Iterator[list[str]]:
        return self

    def __next__(self) -> list[str]:
        while self._pos < len(self._lines):
            raw = self._lines[self._pos]
            self._pos += 1
            self.line_no = self._pos
            stripped = raw.strip()
            if not stripped or stripped.startswith("#"):
                continue
            return stripped.split()
        raise StopIteration

    def next_record(self, expected: str | None = None) -> list[str]:
        try:
            tokens = next(self)
        except StopIteration:
            raise ParseError(
                self.path, self.line_no + 1, expected or "record", "unexpected end of file"
            )
        if expected is not None and tokens[0] != expected:
            raise ParseError(
                self.path, self.line_no, expected, f"expected '{expected}' record, got '{tokens[0]}'"
            )
        return tokens

    def error(self, field: str, message: str) -> ParseError:
        return ParseError(self.path, self.line_no, field, message)

    def to_int(self, token: str, field: str) -> int:
        try:
            return int(token)
        except ValueError:
            raise self.error(field, f"expected integer, got '{token}'")

    def to_float(self, token: str, field: str) -> float:
        try:
            return float(token)
        except ValueError:
            raise self.error(field, f"expected number, got '{token}'")


def check_header(reader: LineReader, name: str, version: int) -> None:
    tokens = reader.next_record("format")
    if len(tokens) != 3:
        raise reader.error("format", "expected 'format <name> <version>'")
    if tokens[1] != name:
        raise reader.error("format", f"expected format '{name}', got '{tokens[1]}'")
    if reader.to_int(tokens[2], "version") != version:
        raise reader.error("version", f"unsupported version '{tokens[2]}'")
