"""Watermark embedding and blind extraction over top-level key order.

The document's top-level entries are cut into consecutive groups of ``T``.
Every complete group is rewritten so that its keys, relative to their
byte-wise sorted order, spell the watermark integer as a Lehmer code.
Extraction reads each complete group back and takes a bitwise majority vote.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Iterable, Sequence

from .errors import (
    DuplicateItems,
    DuplicateKeysInGroup,
    EmptyInput,
    GroupSizeExceedsCapacity,
    LengthMismatch,
    NoCompleteGroups,
    ValueTooLarge,
)
from .ordered_doc import Entry, OrderedDocument, RawValue, sort_key
from .permcode import (
    code_to_permutation,
    factorial,
    factorial_decompose,
    min_threshold,
    permutation_to_integer,
)

__all__ = [
    "DECOY_POLICIES",
    "EmbedConfig",
    "ExtractionReport",
    "GroupLayout",
    "Watermark",
    "embed",
    "extract",
    "generate_decoys",
    "plan_groups",
    "reorder_groups",
    "vote",
]

DECOY_POLICIES = ("none", "pad_final_group")


@dataclass(frozen=True)
class Watermark:
    """An ``L``-bit watermark; ``bits`` are most-significant first."""

    value: int
    L: int

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("watermark length must be at least 1 bit")
        if not 0 <= self.value < (1 << self.L):
            raise ValueTooLarge(f"value {self.value:#x} does not fit in {self.L} bits")

    @property
    def bits(self) -> tuple[int, ...]:
        L, v = self.L, self.value
        return tuple((v >> (L - 1 - i)) & 1 for i in range(L))

    @property
    def hex(self) -> str:
        return format(self.value, f"0{(self.L + 3) // 4}x")

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> Watermark:
        value = 0
        for b in bits:
            if b not in (0, 1):
                raise ValueError(f"not a bit: {b!r}")
            value = (value << 1) | b
        return cls(value, len(bits))

    @classmethod
    def from_hex(cls, text: str, L: int) -> Watermark:
        text = text.strip()
        if text[:2].lower() == "0x":
            text = text[2:]
        if not text:
            raise ValueError("empty hex watermark")
        return cls(int(text, 16), L)

    @classmethod
    def random(cls, L: int, rng: random.Random) -> Watermark:
        return cls(rng.getrandbits(L), L)


@dataclass(frozen=True)
class EmbedConfig:
    L: int
    T: int | None = None
    decoy_policy: str = "none"
    decoy_seed: int = 0
    tie_break: str = "zero"

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("watermark length must be at least 1 bit")
        need = min_threshold(self.L)
        if self.T is None:
            object.__setattr__(self, "T", need)
        elif self.T < need:
            raise GroupSizeExceedsCapacity(
                f"T={self.T} is below the capacity threshold {need} for {self.L}-bit watermarks"
            )
        if self.decoy_policy not in DECOY_POLICIES:
            raise ValueError(f"unknown decoy policy {self.decoy_policy!r}")
        if self.tie_break != "zero":
            raise ValueError("only the 'zero' tie-break is supported")


@dataclass(frozen=True)
class GroupLayout:
    g: int
    group_spans: tuple[range, ...]
    leftover_span: range


@dataclass(frozen=True)
class ExtractionReport:
    per_group_bits: tuple[tuple[int, ...], ...]
    per_group_values: tuple[int, ...]
    final_bits: tuple[int, ...]
    votes_per_bit: tuple[int, ...]
    groups_used: int

    @property
    def watermark(self) -> Watermark:
        return Watermark.from_bits(self.final_bits)


def plan_groups(doc: OrderedDocument | int, T: int) -> GroupLayout:
    """Consecutive groups of ``T`` entries in current order, plus the remainder."""
    if T < 2:
        raise ValueError("group size must be at least 2")
    n = doc if isinstance(doc, int) else doc.N
    g = n // T
    spans = tuple(range(i * T, (i + 1) * T) for i in range(g))
    return GroupLayout(g, spans, range(g * T, n))


def _sorted_group(entries: Sequence[Entry]) -> list[Entry]:
    return sorted(entries, key=lambda e: sort_key(e.key))


def reorder_groups(
    doc: OrderedDocument,
    value: int,
    T: int,
    pad: Sequence[Entry] = (),
) -> OrderedDocument:
    """Permute every complete group of ``T`` entries so it encodes ``value``.

    Leftover entries follow in their original order; when ``pad`` is given
    they are merged with it into one more encoded group instead.
    """
    if value >= factorial(T):
        raise GroupSizeExceedsCapacity(f"value needs more than {T} keys per group")
    layout = plan_groups(doc, T)
    order = code_to_permutation(factorial_decompose(value, T), range(T))
    entries = doc.entries
    out: list[Entry] = []
    for span in layout.group_spans:
        group = _sorted_group(entries[span.start:span.stop])
        out.extend(group[i] for i in order)
    leftover = list(entries[layout.leftover_span.start:])
    if pad:
        if len(leftover) + len(pad) != T:
            raise ValueError(f"{len(leftover)} leftover + {len(pad)} padding entries do not make a group of {T}")
        group = _sorted_group(leftover + list(pad))
        out.extend(group[i] for i in order)
    else:
        out.extend(leftover)
    return OrderedDocument(tuple(out))


def embed(doc: OrderedDocument, wm: Watermark, cfg: EmbedConfig) -> OrderedDocument:
    """Write ``wm`` into every complete group of ``doc`` (values are untouched)."""
    if wm.L != cfg.L:
        raise ValueError(f"watermark has {wm.L} bits but config expects {cfg.L}")
    leftover = doc.N % cfg.T
    pad = ()
    if leftover and cfg.decoy_policy == "pad_final_group":
        pad = generate_decoys(cfg.T - leftover, cfg.decoy_seed, doc.keys)
    return reorder_groups(doc, wm.value, cfg.T, pad)


def extract(doc: OrderedDocument, L: int, T: int | None = None) -> ExtractionReport:
    """Blindly recover an ``L``-bit watermark from ``doc``'s key order."""
    if T is None:
        T = min_threshold(L)
    elif T < min_threshold(L):
        raise GroupSizeExceedsCapacity(f"T={T} cannot carry {L}-bit watermarks")
    layout = plan_groups(doc, T)
    if layout.g == 0:
        raise NoCompleteGroups(f"{doc.N} keys, need at least {T}")
    mask = (1 << L) - 1
    keys = doc.keys
    values, bits = [], []
    for i, span in enumerate(layout.group_spans):
        try:
            m = permutation_to_integer(keys[span.start:span.stop])
        except DuplicateItems:
            raise DuplicateKeysInGroup(f"group {i} repeats a key") from None
        # only a damaged group can decode to 2**L or more
        m &= mask
        values.append(m)
        bits.append(Watermark(m, L).bits)
    final, ones = _vote(bits)
    return ExtractionReport(tuple(bits), tuple(values), final, ones, layout.g)


def _vote(per_group_bits: Sequence[Sequence[int]]):
    if not per_group_bits:
        raise EmptyInput("no groups to vote over")
    width = len(per_group_bits[0])
    if any(len(b) != width for b in per_group_bits):
        raise LengthMismatch("groups disagree on watermark length")
    ones = tuple(sum(col) for col in zip(*per_group_bits)) if width else ()
    G = len(per_group_bits)
    # a tie yields 0
    final = tuple(1 if 2 * c > G else 0 for c in ones)
    return final, ones


def vote(per_group_bits: Sequence[Sequence[int]]) -> tuple[int, ...]:
    """Position-wise majority; exact ties resolve to 0."""
    return _vote(per_group_bits)[0]


_DECOY_WORDS = (
    "trace", "ref", "seq", "tag", "meta", "rev", "node", "slot",
    "epoch", "token", "batch", "shard", "zone", "span", "hint", "mark",
)


def generate_decoys(count: int, seed: int, existing_keys: Iterable[str]) -> list[Entry]:
    """Deterministic filler pairs whose keys avoid ``existing_keys``."""
    if count < 1:
        raise ValueError("decoy count must be at least 1")
    rng = random.Random(seed)
    taken = set(existing_keys)
    out = []
    while len(out) < count:
        key = f"{rng.choice(_DECOY_WORDS)}_{rng.getrandbits(24):06x}"
        if key in taken:
            continue
        taken.add(key)
        kind = rng.randrange(3)
        if kind == 0:
            value = RawValue("string", f'"{rng.choice(_DECOY_WORDS)}-{rng.randrange(10**6)}"')
        elif kind == 1:
            value = RawValue("number", str(rng.randrange(10**6)))
        else:
            value = RawValue("null", "null")
        out.append(Entry.of(key, value))
    return out
