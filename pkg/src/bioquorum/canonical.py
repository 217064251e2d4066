"""Canonical byte encoding used for every hash and signature.

The encoding is JSON with map keys sorted by their UTF-8 bytes, no
whitespace, integers in shortest decimal form and byte strings rendered as
lowercase hex. Floats and nulls are refused outright.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Any

from .errors import MalformedEncoding, UnsupportedValue

__all__ = ["canonicalize", "decode_canonical", "parse_hex", "sha256_canonical"]

_HEX_RE = re.compile(r"[0-9a-f]*")


def canonicalize(value: Any) -> bytes:
    parts: list[str] = []
    _encode(value, parts)
    try:
        return "".join(parts).encode("utf-8")
    except UnicodeEncodeError as exc:
        raise UnsupportedValue("string is not valid unicode") from exc


def _encode(value: Any, out: list[str]) -> None:
    # bool before int: bool is an int subclass
    if isinstance(value, bool):
        out.append("true" if value else "false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, (bytes, bytearray, memoryview)):
        out.append('"' + bytes(value).hex() + '"')
    elif isinstance(value, dict):
        items = []
        for key in value:
            if not isinstance(key, str):
                raise UnsupportedValue(f"map keys must be strings, got {type(key).__name__}")
            items.append((key.encode("utf-8"), key))
        items.sort()
        out.append("{")
        for i, (_, key) in enumerate(items):
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    elif value is None:
        raise UnsupportedValue("null is not canonicalizable")
    elif isinstance(value, float):
        raise UnsupportedValue("floats are never canonicalized")
    else:
        raise UnsupportedValue(f"unsupported type {type(value).__name__}")


def decode_canonical(data: bytes) -> Any:
    """Parse *data* and insist it is already in canonical form.

    Any input that would not re-encode to the identical bytes (extra
    whitespace, unsorted or duplicate keys, floats, escapes written
    differently) raises :class:`MalformedEncoding`.
    """
    try:
        text = bytes(data).decode("utf-8")
        doc = json.loads(text)
        again = canonicalize(doc)
    except (UnicodeDecodeError, json.JSONDecodeError, UnsupportedValue, RecursionError) as exc:
        raise MalformedEncoding(str(exc)) from exc
    if again != bytes(data):
        raise MalformedEncoding("input is not in canonical form")
    return doc


def parse_hex(text: Any, nbytes: int | None = None) -> bytes:
    """Decode strictly lowercase hex, optionally checking the decoded length."""
    if not isinstance(text, str) or len(text) % 2 or not _HEX_RE.fullmatch(text):
        raise MalformedEncoding("expected lowercase hex string")
    raw = bytes.fromhex(text)
    if nbytes is not None and len(raw) != nbytes:
        raise MalformedEncoding(f"expected {nbytes} bytes, got {len(raw)}")
    return raw


def sha256_canonical(value: Any) -> bytes:
    return hashlib.sha256(canonicalize(value)).digest()
