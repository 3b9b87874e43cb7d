"""Order-preserving, lossless JSON object model.

Scalars are kept as their verbatim source lexemes, so a number such as
``0.10`` or ``12345678901234567890`` is written back exactly as it was read.
Only the top-level object is interpreted; nested objects and arrays are kept
as ordered subtrees and are never reordered.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, NamedTuple, Sequence

from .errors import (
    DuplicateTopLevelKey,
    InvalidPermutation,
    MalformedJson,
    TopLevelNotObject,
)

__all__ = [
    "Entry",
    "OrderedDocument",
    "RawValue",
    "parse",
    "reorder",
    "serialize",
    "sort_key",
]

SCALAR_KINDS = ("string", "number", "boolean", "null")
KINDS = SCALAR_KINDS + ("object", "array")

_WS = re.compile(r"[ \t\n\r]*")
_STRING = re.compile(r'"(?:[^"\\\x00-\x1f]|\\["\\/bfnrt]|\\u[0-9a-fA-F]{4})*"')
_NUMBER = re.compile(r"-?(?:0|[1-9][0-9]*)(?:\.[0-9]+)?(?:[eE][+-]?[0-9]+)?")
_LITERALS = {"true": "boolean", "false": "boolean", "null": "null"}
# text with no whitespace outside string tokens (one char per step, so no backtracking blowup)
_COMPACT = re.compile(r'(?:[^" \t\n\r]|"(?:[^"\\]|\\.)*")*')
_STRING_SPLIT = re.compile(r'("(?:[^"\\]|\\.)*")')
_DROP_WS = str.maketrans("", "", " \t\n\r")


def _compact(raw: str) -> str:
    if not (" " in raw or "\n" in raw or "\t" in raw or "\r" in raw) or _COMPACT.fullmatch(raw):
        return raw
    parts = _STRING_SPLIT.split(raw)
    parts[::2] = [p.translate(_DROP_WS) for p in parts[::2]]
    return "".join(parts)


def _reject_constant(name: str):
    raise ValueError(f"{name} is not JSON")


# The C scanner validates a nested container and finds its end; the hooks
# skip building numbers and keep huge integers legal.
_SCAN = json.JSONDecoder(
    object_pairs_hook=len, parse_float=len, parse_int=len, parse_constant=_reject_constant
).scan_once


def sort_key(key: str) -> bytes:
    """Byte-wise UTF-8 ordering key used for every lexicographic comparison."""
    return key.encode("utf-8", "surrogatepass")


def _decode_string(token: str) -> str:
    if "\\" not in token:
        return token[1:-1]
    return json.loads(token)


class RawValue:
    """A JSON value with lossless scalar lexemes.

    ``lexeme`` is set for scalar kinds; ``children`` holds :class:`Entry`
    items for objects and :class:`RawValue` items for arrays. Containers read
    from text keep their compact source and only build ``children`` when
    someone looks inside.
    """

    __slots__ = ("kind", "lexeme", "_children")

    def __init__(self, kind: str, lexeme: str | None = None, children: Iterable | None = None):
        if kind not in KINDS:
            raise ValueError(f"unknown kind {kind!r}")
        if kind in SCALAR_KINDS:
            if lexeme is None:
                raise ValueError(f"{kind} value needs a lexeme")
            children = ()
        elif lexeme is None:
            children = tuple(children or ())
        elif children is not None:
            raise ValueError("give a container either its source text or its children")
        object.__setattr__(self, "kind", kind)
        object.__setattr__(self, "lexeme", lexeme)
        object.__setattr__(self, "_children", children)

    def __setattr__(self, name, value):
        raise AttributeError("RawValue is immutable")

    def __delattr__(self, name):
        raise AttributeError("RawValue is immutable")

    def __eq__(self, other):
        if not isinstance(other, RawValue):
            return NotImplemented
        return self.kind == other.kind and self.to_json() == other.to_json()

    def __hash__(self):
        return hash((self.kind, self.to_json()))

    def __repr__(self):
        return f"RawValue({self.kind!r}, {self.to_json()!r})"

    @property
    def children(self) -> tuple:
        if self._children is None:
            parsed = _Parser(self.lexeme).value()
            object.__setattr__(self, "_children", parsed._children)
        return self._children

    @property
    def is_scalar(self) -> bool:
        return self.kind in SCALAR_KINDS

    def to_json(self) -> str:
        if self.lexeme is None:
            if self.kind == "object":
                text = "{" + ",".join(e.token + ":" + e.value.to_json() for e in self._children) + "}"
            else:
                text = "[" + ",".join(v.to_json() for v in self._children) + "]"
            object.__setattr__(self, "lexeme", text)
        return self.lexeme

    @classmethod
    def from_python(cls, obj: Any) -> RawValue:
        """Build a value from plain Python data (dict order is kept)."""
        if obj is None:
            return cls("null", "null")
        if obj is True or obj is False:
            return cls("boolean", "true" if obj else "false")
        if isinstance(obj, float) and not math.isfinite(obj):
            raise ValueError(f"{obj!r} has no JSON representation")
        if isinstance(obj, (int, float)):
            return cls("number", json.dumps(obj))
        if isinstance(obj, str):
            return cls("string", json.dumps(obj, ensure_ascii=False))
        if isinstance(obj, dict):
            return cls("object", children=tuple(Entry.of(k, cls.from_python(v)) for k, v in obj.items()))
        if isinstance(obj, (list, tuple)):
            return cls("array", children=tuple(cls.from_python(v) for v in obj))
        raise TypeError(f"cannot convert {type(obj).__name__} to a JSON value")

    def to_python(self) -> Any:
        return json.loads(self.to_json())


class Entry(NamedTuple):
    """One key-value pair; ``token`` is the key's verbatim JSON string lexeme."""

    key: str
    value: RawValue
    token: str

    @classmethod
    def of(cls, key: str, value: RawValue) -> Entry:
        return cls(key, value, json.dumps(key, ensure_ascii=False))


@dataclass(frozen=True)
class OrderedDocument:
    """A top-level JSON object as an ordered sequence of unique-key entries."""

    entries: tuple[Entry, ...] = ()
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        entries = tuple(self.entries)
        object.__setattr__(self, "entries", entries)
        index = {}
        for i, e in enumerate(entries):
            if e.key in index:
                raise DuplicateTopLevelKey(e.key)
            index[e.key] = i
        object.__setattr__(self, "_index", index)

    @property
    def N(self) -> int:
        return len(self.entries)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def keys(self) -> list[str]:
        return [e.key for e in self.entries]

    def __contains__(self, key: str) -> bool:
        return key in self._index

    def __getitem__(self, key: str) -> RawValue:
        return self.entries[self._index[key]].value

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[str, Any]]) -> OrderedDocument:
        """Convenience constructor from ``(key, python value)`` pairs."""
        return cls(tuple(
            Entry.of(k, v if isinstance(v, RawValue) else RawValue.from_python(v))
            for k, v in pairs
        ))

    def reorder(self, new_order: Sequence[int]) -> OrderedDocument:
        return reorder(self, new_order)

    def to_json(self) -> str:
        return serialize(self)


class _Parser:
    __slots__ = ("text", "pos")

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def fail(self, message: str):
        raise MalformedJson(message, self.pos)

    def skip_ws(self):
        self.pos = _WS.match(self.text, self.pos).end()

    def string(self) -> str:
        m = _STRING.match(self.text, self.pos)
        if m is None:
            self.fail("invalid string")
        self.pos = m.end()
        return m.group()

    def value(self) -> RawValue:
        text, pos = self.text, self.pos
        if pos >= len(text):
            self.fail("unexpected end of input")
        c = text[pos]
        if c == '"':
            return RawValue("string", self.string())
        if c == "{":
            return RawValue("object", children=tuple(self.members()))
        if c == "[":
            return RawValue("array", children=tuple(self.elements()))
        if c == "-" or "0" <= c <= "9":
            m = _NUMBER.match(text, pos)
            if m is None:
                self.fail("invalid number")
            self.pos = m.end()
            return RawValue("number", m.group())
        for word, kind in _LITERALS.items():
            if text.startswith(word, pos):
                self.pos = pos + len(word)
                return RawValue(kind, word)
        self.fail(f"unexpected character {c!r}")

    def opaque(self) -> RawValue:
        """A nested container, validated but left as compact text."""
        text, pos = self.text, self.pos
        try:
            _, end = _SCAN(text, pos)
        except StopIteration:
            self.fail("invalid value")
        except json.JSONDecodeError as exc:
            self.pos = exc.pos
            self.fail(exc.msg)
        except (ValueError, RecursionError) as exc:
            self.fail(str(exc) or "nesting too deep")
        self.pos = end
        return RawValue("object" if text[pos] == "{" else "array", _compact(text[pos:end]))

    def members(self, opaque: bool = False):
        # caller has checked text[pos] == "{"
        text = self.text
        self.pos += 1
        self.skip_ws()
        if text.startswith("}", self.pos):
            self.pos += 1
            return
        while True:
            if not text.startswith('"', self.pos):
                self.fail("expected object key")
            token = self.string()
            self.skip_ws()
            if not text.startswith(":", self.pos):
                self.fail("expected ':'")
            self.pos += 1
            self.skip_ws()
            if opaque and text.startswith(("{", "["), self.pos):
                val = self.opaque()
            else:
                val = self.value()
            yield Entry(_decode_string(token), val, token)
            self.skip_ws()
            if text.startswith(",", self.pos):
                self.pos += 1
                self.skip_ws()
            elif text.startswith("}", self.pos):
                self.pos += 1
                return
            else:
                self.fail("expected ',' or '}'")

    def elements(self):
        text = self.text
        self.pos += 1
        self.skip_ws()
        if text.startswith("]", self.pos):
            self.pos += 1
            return
        while True:
            yield self.value()
            self.skip_ws()
            if text.startswith(",", self.pos):
                self.pos += 1
                self.skip_ws()
            elif text.startswith("]", self.pos):
                self.pos += 1
                return
            else:
                self.fail("expected ',' or ']'")


def parse(data: bytes | str) -> OrderedDocument:
    """Parse UTF-8 JSON text whose top level is an object.

    Raises MalformedJson, DuplicateTopLevelKey or TopLevelNotObject.
    """
    if isinstance(data, (bytes, bytearray, memoryview)):
        try:
            text = bytes(data).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedJson("invalid UTF-8", exc.start) from None
    else:
        text = data
    p = _Parser(text)
    p.skip_ws()
    if p.pos >= len(text):
        p.fail("empty document")
    if text[p.pos] != "{":
        # still reject garbage as malformed rather than as a non-object
        try:
            p.value()
        except RecursionError:
            p.fail("nesting too deep")
        p.skip_ws()
        if p.pos != len(text):
            p.fail("trailing data")
        raise TopLevelNotObject("top-level JSON value is not an object")
    try:
        entries = tuple(p.members(opaque=True))
    except RecursionError:
        p.fail("nesting too deep")
    p.skip_ws()
    if p.pos != len(text):
        p.fail("trailing data")
    return OrderedDocument(entries)


def serialize(doc: OrderedDocument) -> str:
    """Compact JSON text with entries in stored order and lexemes untouched."""
    return "{" + ",".join(e.token + ":" + e.value.to_json() for e in doc.entries) + "}"


def reorder(doc: OrderedDocument, new_order: Sequence[int]) -> OrderedDocument:
    """Return a document whose i-th entry is ``doc.entries[new_order[i]]``."""
    n = doc.N
    order = list(new_order)
    if len(order) != n or sorted(order) != list(range(n)):
        raise InvalidPermutation(f"not a permutation of 0..{n - 1}: {order!r}")
    entries = doc.entries
    return OrderedDocument(tuple(entries[i] for i in order))
