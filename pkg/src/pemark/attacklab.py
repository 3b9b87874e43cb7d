"""Synthetic datasets, attack operators and the robustness / timing experiments."""

from __future__ import annotations

import csv
import math
import random
import statistics
import time
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

from .core import EmbedConfig, Watermark, embed, extract
from .errors import IntensityOutOfRange, InvalidConfig, LengthMismatch, NoCompleteGroups
from .ordered_doc import Entry, OrderedDocument, RawValue, parse, serialize

__all__ = [
    "ATTACK_KINDS",
    "AttackSpec",
    "DatasetConfig",
    "PLACEMENTS",
    "ROBUSTNESS_COLUMNS",
    "SimilarityReport",
    "DATASETS",
    "TIMING_COLUMNS",
    "TimingRow",
    "affected_count",
    "append_keeps_majority",
    "apply_attack",
    "generate_dataset",
    "generate_document",
    "hash_seed",
    "run_robustness_sweep",
    "run_timing_bench",
    "similarity",
    "summarize_timing",
    "write_gnuplot",
    "write_robustness_csv",
    "write_timing_csv",
]

ATTACK_KINDS = ("delete", "tamper", "insert")
PLACEMENTS = ("append", "scatter")


@dataclass(frozen=True)
class DatasetConfig:
    id: int
    key_count: tuple[int, int]
    max_depth: int
    nesting_probability: float

    def __post_init__(self):
        lo, hi = self.key_count
        if lo < 0 or hi < lo:
            raise InvalidConfig(f"bad key count range {self.key_count}")
        if self.max_depth < 1:
            raise InvalidConfig("max_depth must be at least 1")
        if not 0.0 <= self.nesting_probability <= 1.0:
            raise InvalidConfig("nesting_probability must lie in [0, 1]")

    @classmethod
    def from_id(cls, dataset_id: int) -> DatasetConfig:
        try:
            return DATASETS[dataset_id]
        except KeyError:
            raise InvalidConfig(f"no dataset with id {dataset_id}; known ids are 1..9") from None


# id: (keys, max depth, nesting probability)
DATASETS = {
    1: DatasetConfig(1, (5, 25), 1, 0.0),
    2: DatasetConfig(2, (5, 25), 3, 0.3),
    3: DatasetConfig(3, (5, 25), 3, 0.7),
    4: DatasetConfig(4, (50, 250), 1, 0.0),
    5: DatasetConfig(5, (50, 250), 3, 0.3),
    6: DatasetConfig(6, (50, 250), 3, 0.7),
    7: DatasetConfig(7, (50, 50), 3, 0.3),
    8: DatasetConfig(8, (100, 100), 3, 0.3),
    9: DatasetConfig(9, (200, 200), 3, 0.3),
}


# -- dataset generation -------------------------------------------------------

_FIELDS = (
    "voltage", "current", "power", "energy", "meter", "station", "feeder",
    "load", "phase", "status", "tariff", "region", "customer", "device",
    "reading", "frequency", "factor", "transformer", "line", "substation",
    "alarm", "outage", "capacity", "demand", "billing", "account", "sensor",
    "breaker", "grid", "unit",
)
_SUFFIXES = ("id", "kw", "kwh", "a", "b", "c", "max", "min", "avg", "code", "name", "time", "level", "rate")
_WORDS = ("normal", "offline", "Wuhan", "north", "peak", "valley", "active", "standby", "fault", "ok")


def _fresh_key(rng: random.Random, taken: set) -> str:
    while True:
        key = f"{rng.choice(_FIELDS)}_{rng.choice(_SUFFIXES)}"
        if key in taken:
            key = f"{key}_{rng.randrange(10_000)}"
        if key not in taken:
            taken.add(key)
            return key


def _number(rng: random.Random) -> str:
    r = rng.random()
    if r < 0.4:
        return str(rng.randrange(-1000, 100_000))
    if r < 0.85:
        # fixed decimals keep trailing zeros like 220.50
        return f"{rng.uniform(-500, 5000):.{rng.randint(1, 4)}f}"
    if r < 0.95:
        return f"{rng.randint(1, 9)}.{rng.randrange(100):02d}e{rng.choice(['-', '+', ''])}{rng.randint(1, 12)}"
    return str(rng.randrange(10**18, 10**21))


def _string(rng: random.Random) -> str:
    if rng.random() < 0.5:
        return f'"{rng.choice(_WORDS)}"'
    return f'"{rng.choice(_FIELDS).upper()}-{rng.randrange(10**6):06d}"'


def _scalar(rng: random.Random) -> RawValue:
    r = rng.random()
    if r < 0.5:
        return RawValue("number", _number(rng))
    if r < 0.8:
        return RawValue("string", _string(rng))
    if r < 0.92:
        return RawValue("boolean", rng.choice(("true", "false")))
    return RawValue("null", "null")


def _value(rng: random.Random, depth: int, cfg: DatasetConfig) -> RawValue:
    if depth < cfg.max_depth and rng.random() < cfg.nesting_probability:
        taken: set = set()
        children = tuple(
            Entry.of(_fresh_key(rng, taken), _value(rng, depth + 1, cfg))
            for _ in range(rng.randint(2, 6))
        )
        return RawValue("object", children=children)
    return _scalar(rng)


def generate_document(cfg: DatasetConfig, rng: random.Random) -> OrderedDocument:
    lo, hi = cfg.key_count
    n = rng.randint(lo, hi)
    taken: set = set()
    return OrderedDocument(tuple(Entry.of(_fresh_key(rng, taken), _value(rng, 1, cfg)) for _ in range(n)))


def generate_dataset(cfg: DatasetConfig, documents: int, seed: int) -> list[OrderedDocument]:
    """``documents`` deterministic documents; document i depends only on (seed, id, i)."""
    if documents < 0:
        raise InvalidConfig("document count must be non-negative")
    return [generate_document(cfg, random.Random(f"dataset/{seed}/{cfg.id}/{i}")) for i in range(documents)]


# -- attacks ------------------------------------------------------------------

@dataclass(frozen=True)
class AttackSpec:
    kind: str
    intensity: float
    placement: str = "append"
    rng_seed: int = 0

    def __post_init__(self):
        if self.kind not in ATTACK_KINDS:
            raise ValueError(f"unknown attack kind {self.kind!r}")
        if self.placement not in PLACEMENTS:
            raise ValueError(f"unknown placement {self.placement!r}")
        if not 0 <= self.intensity <= 100:
            raise IntensityOutOfRange(f"intensity {self.intensity} outside [0, 100]")


def affected_count(intensity: float, n: int) -> int:
    """Number of pairs an attack touches, rounded half up."""
    return math.floor(intensity / 100 * n + 0.5)


def _tamper_number(lexeme: str, rng: random.Random) -> str:
    while True:
        if "." in lexeme and "e" not in lexeme.lower():
            decimals = len(lexeme.split(".", 1)[1])
            new = f"{rng.uniform(-10_000, 10_000):.{decimals}f}"
        else:
            new = str(rng.randrange(-10**6, 10**6))
        if new != lexeme:
            return new


def _tamper(value: RawValue, rng: random.Random) -> RawValue:
    kind = value.kind
    if kind == "number":
        return RawValue("number", _tamper_number(value.lexeme, rng))
    if kind == "string":
        while True:
            new = f'"tampered-{rng.randrange(10**9)}"'
            if new != value.lexeme:
                return RawValue("string", new)
    if kind == "boolean":
        return RawValue("boolean", "false" if value.lexeme == "true" else "true")
    if kind == "null":
        # null has no other value of its kind
        return RawValue("string", f'"tampered-{rng.randrange(10**9)}"')
    children = list(value.children)
    if not children:
        if kind == "object":
            return RawValue("object", children=(Entry.of("tampered", _scalar(rng)),))
        return RawValue("array", children=(_scalar(rng),))
    i = rng.randrange(len(children))
    if kind == "object":
        e = children[i]
        children[i] = Entry(e.key, _tamper(e.value, rng), e.token)
    else:
        children[i] = _tamper(children[i], rng)
    return RawValue(kind, children=tuple(children))


def apply_attack(doc: OrderedDocument, spec: AttackSpec) -> OrderedDocument:
    """Delete, tamper or insert ``round(intensity% * N)`` top-level pairs."""
    rng = random.Random(spec.rng_seed)
    entries = list(doc.entries)
    m = affected_count(spec.intensity, len(entries))
    if m == 0:
        return doc
    if spec.kind == "delete":
        drop = set(rng.sample(range(len(entries)), m))
        return OrderedDocument(tuple(e for i, e in enumerate(entries) if i not in drop))
    if spec.kind == "tamper":
        for i in rng.sample(range(len(entries)), m):
            e = entries[i]
            entries[i] = Entry(e.key, _tamper(e.value, rng), e.token)
        return OrderedDocument(tuple(entries))
    taken = set(doc.keys)
    fresh = [Entry.of(_fresh_key(rng, taken), _scalar(rng)) for _ in range(m)]
    if spec.placement == "append":
        entries.extend(fresh)
    else:
        for e in fresh:
            entries.insert(rng.randint(0, len(entries)), e)
    return OrderedDocument(tuple(entries))


def append_keeps_majority(n: int, m: int, T: int) -> bool:
    """True when ``m`` appended pairs create fewer spurious groups than genuine ones."""
    genuine = n // T
    spurious = (n + m) // T - genuine
    return spurious < genuine


# -- metrics ------------------------------------------------------------------

def similarity(original: Watermark | Sequence[int], recovered: Sequence[int]) -> float:
    """Percentage of bit positions on which the two watermarks agree."""
    bits = original.bits if isinstance(original, Watermark) else tuple(original)
    if len(bits) != len(recovered):
        raise LengthMismatch(f"{len(bits)} bits vs {len(recovered)} bits")
    if not bits:
        raise LengthMismatch("empty watermark")
    same = sum(1 for a, b in zip(bits, recovered) if a == b)
    return same * 100 / len(bits)


@dataclass(frozen=True)
class SimilarityReport:
    dataset_id: int
    attack: str
    placement: str
    intensity: float
    similarities: tuple[float, ...]

    @property
    def trials(self) -> int:
        return len(self.similarities)

    @property
    def mean(self) -> float:
        return statistics.fmean(self.similarities)

    @property
    def min(self) -> float:
        return min(self.similarities)

    @property
    def max(self) -> float:
        return max(self.similarities)


def _recover(doc: OrderedDocument, cfg: EmbedConfig) -> tuple[int, ...]:
    try:
        return extract(doc, cfg.L, cfg.T).final_bits
    except NoCompleteGroups:
        # nothing to vote on: every bit falls to the tie value
        return (0,) * cfg.L


def run_robustness_sweep(
    dataset: DatasetConfig,
    attack_kind: str,
    intensities: Iterable[float],
    trials: int = 10,
    embed_cfg: EmbedConfig | None = None,
    seed: int = 0,
    placement: str = "append",
) -> list[SimilarityReport]:
    """Embed, attack, extract and score; one report per intensity.

    Trial ``t`` uses the same document and watermark at every intensity, so
    the curve reflects the attack rather than resampling noise.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    cfg = embed_cfg or EmbedConfig(64)
    marked = []
    for t in range(trials):
        rng = random.Random(f"sweep/{seed}/{dataset.id}/{t}")
        doc = generate_document(dataset, rng)
        wm = Watermark.random(cfg.L, rng)
        marked.append((wm, embed(doc, wm, cfg)))
    reports = []
    for intensity in intensities:
        scores = []
        for t, (wm, doc) in enumerate(marked):
            spec = AttackSpec(attack_kind, intensity, placement, rng_seed=hash_seed(seed, dataset.id, attack_kind, intensity, t))
            scores.append(similarity(wm, _recover(apply_attack(doc, spec), cfg)))
        reports.append(SimilarityReport(dataset.id, attack_kind, placement, intensity, tuple(scores)))
    return reports


def hash_seed(*parts) -> int:
    """Stable 64-bit seed derived from arbitrary parts."""
    return random.Random("/".join(map(str, parts))).getrandbits(64)


# -- timing -------------------------------------------------------------------

@dataclass(frozen=True)
class TimingRow:
    dataset_id: int
    doc_index: int
    n_keys: int
    embed_ms: float
    extract_ms: float


def run_timing_bench(
    dataset: DatasetConfig,
    trials: int = 100,
    embed_cfg: EmbedConfig | None = None,
    seed: int = 0,
) -> list[TimingRow]:
    """Wall-clock embed and extract time for ``trials`` documents.

    Embedding is timed from source text to watermarked text (parse, reorder,
    serialize); extraction from watermarked text to the voted bits.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    cfg = embed_cfg or EmbedConfig(64, decoy_policy="pad_final_group")
    docs = generate_dataset(dataset, trials, seed)
    rng = random.Random(f"timing/{seed}/{dataset.id}")
    clock = time.perf_counter
    # warm caches so the first row is not an outlier
    _time_one(serialize(docs[0]), Watermark.random(cfg.L, rng), cfg, clock)
    rows = []
    for i, doc in enumerate(docs):
        wm = Watermark.random(cfg.L, rng)
        e_ms, x_ms = _time_one(serialize(doc), wm, cfg, clock)
        rows.append(TimingRow(dataset.id, i, doc.N, e_ms, x_ms))
    return rows


def _time_one(text: str, wm: Watermark, cfg: EmbedConfig, clock) -> tuple[float, float]:
    t0 = clock()
    marked = serialize(embed(parse(text), wm, cfg))
    t1 = clock()
    try:
        extract(parse(marked), cfg.L, cfg.T)
    except NoCompleteGroups:
        pass
    t2 = clock()
    return (t1 - t0) * 1000, (t2 - t1) * 1000


def _percentile(values: Sequence[float], q: float) -> float:
    xs = sorted(values)
    if len(xs) == 1:
        return xs[0]
    pos = (len(xs) - 1) * q / 100
    lo = math.floor(pos)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (xs[hi] - xs[lo]) * (pos - lo)


def summarize_timing(rows: Sequence[TimingRow]) -> dict[str, dict[str, float]]:
    out = {}
    for name in ("embed_ms", "extract_ms"):
        xs = [getattr(r, name) for r in rows]
        out[name] = {
            "mean": statistics.fmean(xs),
            "p50": _percentile(xs, 50),
            "p95": _percentile(xs, 95),
        }
    return out


# -- output -------------------------------------------------------------------

ROBUSTNESS_COLUMNS = ("dataset_id", "attack", "placement", "intensity_pct", "trial", "similarity_pct")
TIMING_COLUMNS = ("dataset_id", "doc_index", "n_keys", "embed_ms", "extract_ms")


def _fmt(x: float) -> str:
    return f"{x:g}" if float(x).is_integer() else f"{x:.6g}"


def write_robustness_csv(reports: Iterable[SimilarityReport], fp: IO[str], header: bool = True) -> None:
    w = csv.writer(fp, lineterminator="\n")
    if header:
        w.writerow(ROBUSTNESS_COLUMNS)
    for r in reports:
        for t, s in enumerate(r.similarities):
            w.writerow((r.dataset_id, r.attack, r.placement, _fmt(r.intensity), t, f"{s:.4f}"))


def write_timing_csv(rows: Iterable[TimingRow], fp: IO[str], header: bool = True) -> None:
    w = csv.writer(fp, lineterminator="\n")
    if header:
        w.writerow(TIMING_COLUMNS)
    for r in rows:
        w.writerow((r.dataset_id, r.doc_index, r.n_keys, f"{r.embed_ms:.4f}", f"{r.extract_ms:.4f}"))


def write_gnuplot(reports: Iterable[SimilarityReport], fp: IO[str]) -> None:
    """Whitespace-separated ``intensity mean min max`` blocks, one per dataset/attack."""
    current = None
    for r in reports:
        block = (r.dataset_id, r.attack, r.placement)
        if block != current:
            if current is not None:
                fp.write("\n\n")
            fp.write(f"# dataset {r.dataset_id} {r.attack} {r.placement}\n# intensity mean min max\n")
            current = block
        fp.write(f"{_fmt(r.intensity)} {r.mean:.4f} {r.min:.4f} {r.max:.4f}\n")
