"""Parsing of Microsoft-challenge style ``.bytes`` hexdumps.

A hexdump line looks like ``00401000 4D 5A 90 00 ...``: an address token
followed by up to sixteen two-digit hex byte tokens. ``??`` marks a byte
the dumper could not read.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np

from .errors import AllUnknown, EmptyInput, MalformedToken

_HEX = frozenset("0123456789abcdefABCDEF")
UNKNOWN_POLICIES = ("zero", "skip")


@dataclass(frozen=True)
class ByteSequence:
    """Decoded byte stream of one sample.

    ``values[i]`` holds the byte at position ``i``; where ``unknown[i]`` is
    set the cell is an unreadable ``??`` byte and ``values[i]`` is 0.
    """

    source_id: str
    values: np.ndarray
    unknown: np.ndarray

    def __len__(self):
        return int(self.values.shape[0])

    @property
    def unknown_count(self) -> int:
        return int(self.unknown.sum())

    def cells(self) -> list:
        """Cells as Python objects: an int for a known byte, ``None`` for ``??``."""
        return [None if u else int(v) for v, u in zip(self.values, self.unknown)]

    @classmethod
    def from_cells(cls, cells, source_id: str = "") -> "ByteSequence":
        unknown = np.array([c is None for c in cells], dtype=bool)
        values = np.array([0 if c is None else c for c in cells], dtype=np.uint8)
        return cls(source_id, values, unknown)


def _bad_line(lineno: int, line: str) -> MalformedToken:
    # Only called once a fast path failed; locate the first bad token.
    col = 0
    for idx, tok in enumerate(line.split()):
        col = line.index(tok, col) + 1
        if idx == 0:
            if not tok or not set(tok) <= _HEX:
                return MalformedToken(lineno, col, tok)
        elif tok != "??" and not (len(tok) == 2 and set(tok) <= _HEX):
            return MalformedToken(lineno, col, tok)
        col += len(tok) - 1
    return MalformedToken(lineno, 1, line.strip())


def _iter_lines(text) -> Iterable[str]:
    if isinstance(text, (bytes, bytearray)):
        text = text.decode("utf-8")
    if isinstance(text, str):
        return io.StringIO(text, newline=None)
    return text


def parse_hexdump(text: Union[str, bytes, Iterable[str]], source_id: str = "") -> ByteSequence:
    """Decode a hexdump into a :class:`ByteSequence`.

    ``text`` may be a whole string or any iterable of lines (an open text
    file streams line by line). Blank lines are skipped, the leading address
    token of every line is validated as hex and discarded, and short lines
    are accepted.

    Raises:
        MalformedToken: a token is neither hex address, two hex digits nor ``??``.
        EmptyInput: no byte tokens at all.
    """
    values = bytearray()
    unknown_at: list[int] = []
    for lineno, raw in enumerate(_iter_lines(text), start=1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        toks = raw.split()
        if not toks:
            continue
        head = toks.pop(0)
        if not set(head) <= _HEX:
            raise _bad_line(lineno, raw)
        if not toks:
            continue
        if "??" in toks:
            base = len(values)
            for i, tok in enumerate(toks):
                if tok == "??":
                    unknown_at.append(base + i)
                    toks[i] = "00"
        if any(len(t) != 2 for t in toks):
            raise _bad_line(lineno, raw)
        try:
            values += bytes.fromhex("".join(toks))
        except ValueError:
            raise _bad_line(lineno, raw) from None
    if not values:
        raise EmptyInput("no byte tokens found")
    arr = np.frombuffer(bytes(values), dtype=np.uint8).copy()
    mask = np.zeros(arr.shape[0], dtype=bool)
    if unknown_at:
        mask[np.asarray(unknown_at, dtype=np.int64)] = True
    return ByteSequence(source_id, arr, mask)


def read_hexdump(path: Union[str, os.PathLike]) -> ByteSequence:
    """Stream-parse a ``.bytes`` file (LF or CRLF)."""
    sid = os.path.splitext(os.path.basename(os.fspath(path)))[0]
    with open(path, "r", encoding="utf-8", newline=None) as fh:
        return parse_hexdump(fh, source_id=sid)


def resolve_unknown(seq: ByteSequence, policy: str = "zero") -> np.ndarray:
    """Replace (``zero``) or drop (``skip``) the ``??`` cells; returns uint8 array."""
    if policy == "zero":
        out = seq.values.copy()
        out[seq.unknown] = 0
    elif policy == "skip":
        out = seq.values[~seq.unknown]
    else:
        raise ValueError(f"unknown policy {policy!r}; expected one of {UNKNOWN_POLICIES}")
    if out.shape[0] == 0:
        raise AllUnknown(f"{seq.source_id or 'sequence'}: every byte is unknown")
    return out


def render_hexdump(seq: ByteSequence, per_line: int = 16, base_address: int = 0x00401000) -> str:
    """Inverse of :func:`parse_hexdump`, using synthetic addresses."""
    lines = []
    cells = seq.cells()
    for start in range(0, len(cells), per_line):
        chunk = cells[start:start + per_line]
        toks = ["??" if c is None else f"{c:02X}" for c in chunk]
        lines.append(f"{base_address + start:08X} " + " ".join(toks))
    return "\n".join(lines) + "\n"
