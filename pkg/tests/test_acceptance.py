"""End-to-end acceptance checks; each prints one pass/fail line per criterion.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also collected into the terminal summary.
"""

import http.client
import itertools
import math
import random
import time
from collections import Counter

import pytest
from scipy.stats import spearmanr

from pemark.attacklab import (
    DATASETS,
    affected_count,
    append_keeps_majority,
    generate_document,
    run_robustness_sweep,
    run_timing_bench,
    similarity,
    summarize_timing,
)
from pemark.core import EmbedConfig, Watermark, embed, extract
from pemark.gateway import Gateway, GatewayConfig, LogSink, RouteRule, measure_overhead
from pemark.ordered_doc import Entry, OrderedDocument, RawValue, parse, serialize
from pemark.permcode import factorial, integer_to_permutation, min_threshold, permutation_to_integer
from pemark.stub import GITHUB_USER, StubResponse, StubUpstream

pytestmark = pytest.mark.acceptance

ROBUST_DATASETS = (7, 8, 9)
INTENSITIES = tuple(range(5, 55, 5))
TRIALS = 10
SEED = 0


def flat_document(n, rng):
    keys = set()
    while len(keys) < n:
        keys.add(f"key_{rng.getrandbits(40):010x}")
    keys = list(keys)
    rng.shuffle(keys)
    return OrderedDocument(tuple(Entry.of(k, RawValue("number", str(rng.randrange(10**9)))) for k in keys))


def test_1_round_trip(acceptance):
    rng = random.Random(SEED)
    cfg = EmbedConfig(64, 21)
    docs = [(flat_document(rng.randint(21, 250), rng), Watermark.random(64, rng)) for _ in range(1000)]
    t0 = time.perf_counter()
    exact = sum(extract(embed(doc, wm, cfg), 64, 21).final_bits == wm.bits for doc, wm in docs)
    elapsed = time.perf_counter() - t0
    acceptance.check(1, exact == 1000 and elapsed < 10, f"{exact}/1000 exact in {elapsed:.2f} s")


def test_2_lehmer_bijection(acceptance):
    t0 = time.perf_counter()
    ok = True
    for T in range(2, 9):
        items = list(range(T))
        perms = set()
        for m in range(factorial(T)):
            p = integer_to_permutation(m, items)
            perms.add(tuple(p))
            ok &= permutation_to_integer(p) == m
        ok &= len(perms) == factorial(T) and perms == set(itertools.permutations(items))
    elapsed = time.perf_counter() - t0
    acceptance.check(2, ok and elapsed < 5, f"T=2..8 exhaustive in {elapsed:.2f} s")


def test_3_capacity(acceptance):
    t64, t128 = min_threshold(64), min_threshold(128)
    # 34! < 2^128 <= 35!, so 34 keys cannot hold every 128-bit value
    oracle = math.factorial(34) < 2**128 <= math.factorial(35)
    acceptance.check(3, t64 == 21 and t128 == 35 and oracle, f"64 -> {t64}, 128 -> {t128}")


def grid(kind, placement="append"):
    return {
        d: run_robustness_sweep(DATASETS[d], kind, INTENSITIES, TRIALS, EmbedConfig(64), SEED, placement)
        for d in ROBUST_DATASETS
    }


def test_4_tamper_immunity(acceptance):
    cells = [r for reports in grid("tamper").values() for r in reports]
    worst = min(s for r in cells for s in r.similarities)
    ok = len(cells) == 30 and all(s == 100.0 for r in cells for s in r.similarities)
    acceptance.check(4, ok, f"{len(cells)} cells, worst trial {worst:.1f}%")


def test_5_insert_append_immunity(acceptance):
    for d in ROBUST_DATASETS:
        n = DATASETS[d].key_count[0]
        assert all(append_keeps_majority(n, affected_count(i, n), 21) for i in INTENSITIES)
    cells = [r for reports in grid("insert").values() for r in reports]
    worst = min(s for r in cells for s in r.similarities)
    scatter = grid("insert", "scatter")
    scatter_note = ", ".join(f"ds{d}@50%={reports[-1].mean:.1f}" for d, reports in scatter.items())
    ok = all(s == 100.0 for r in cells for s in r.similarities)
    acceptance.check(5, ok, f"append worst trial {worst:.1f}%; scatter (not asserted) {scatter_note}")


@pytest.fixture(scope="module")
def delete_curves():
    xs = (0,) + INTENSITIES
    return xs, {
        d: [r.mean for r in run_robustness_sweep(DATASETS[d], "delete", xs, TRIALS, EmbedConfig(64), SEED)]
        for d in ROBUST_DATASETS
    }


def test_6a_delete_low_intensity(acceptance, delete_curves):
    xs, curves = delete_curves
    low = {(d, x): m for d, means in curves.items() for x, m in zip(xs, means) if 0 < x <= 15}
    worst = min(low, key=low.get)
    detail = ", ".join(f"ds{d}@{x}%={m:.1f}" for (d, x), m in sorted(low.items()))
    acceptance.check("6a", low[worst] >= 90.0, f"need >= 90.0: {detail}")


def test_6b_delete_at_half(acceptance, delete_curves):
    _, curves = delete_curves
    at_half = {d: means[-1] for d, means in curves.items()}
    ok = all(40.0 <= m <= 75.0 for m in at_half.values())
    acceptance.check("6b", ok, ", ".join(f"ds{d}={m:.1f}" for d, m in at_half.items()))


def test_6c_delete_trend(acceptance, delete_curves):
    xs, curves = delete_curves
    pooled_x = [x for _ in curves for x in xs]
    pooled_y = [m for means in curves.values() for m in means]
    down = spearmanr(pooled_x, pooled_y, alternative="less")
    # no single curve may rise significantly
    up = {d: spearmanr(xs, means, alternative="greater").pvalue for d, means in curves.items()}
    ok = down.pvalue < 0.05 and all(p >= 0.05 for p in up.values())
    acceptance.check(
        "6c", ok,
        f"pooled rho={down.statistic:.2f} p={down.pvalue:.2g}; "
        + ", ".join(f"ds{d} rise p={p:.2f}" for d, p in up.items()),
    )


def test_7_timing(acceptance):
    summary = {}
    for d in (4, 5, 6):
        s = summarize_timing(run_timing_bench(DATASETS[d], trials=100, seed=SEED))
        summary[d] = (s["embed_ms"]["mean"], s["extract_ms"]["mean"])
    ok = all(e < 5 and x < 5 for e, x in summary.values())
    acceptance.check(7, ok, ", ".join(f"ds{d} embed {e:.3f} ms extract {x:.3f} ms" for d, (e, x) in summary.items()))


PNG = b"\x89PNG\r\n\x1a\n" + bytes(range(256)) * 16


def pairs(doc):
    return Counter((e.key, e.value.to_json()) for e in doc.entries)


def test_8_gateway_transparency(acceptance):
    wm = Watermark.from_hex("5eed0ddba11c0ffe", 64)
    with StubUpstream({"/api/user": StubResponse(GITHUB_USER), "/img/logo.png": StubResponse(PNG, "image/png")}) as up:
        cfg = EmbedConfig(64)
        routes = (RouteRule("/api", up.url, wm, cfg), RouteRule("/img", up.url, wm, cfg))
        sink = LogSink(None)
        embed_ms = []
        sink.listeners.append(lambda rec: embed_ms.append(rec.embed_ms) if rec.outcome == "watermarked" else None)
        original = pairs(parse(GITHUB_USER))
        json_ok = image_ok = 0
        with Gateway(GatewayConfig(("127.0.0.1", 0), routes), sink) as gw:
            conn = http.client.HTTPConnection(*gw.address, timeout=10)
            for _ in range(100):
                conn.request("GET", "/api/user")
                body = conn.getresponse().read()
                doc = parse(body)
                json_ok += pairs(doc) == original and extract(doc, 64).watermark == wm
                conn.request("GET", "/img/logo.png")
                image_ok += conn.getresponse().read() == PNG
            conn.close()
        overhead = measure_overhead(routes[0], 100, path="/api/user")
    mean_embed = sum(embed_ms) / len(embed_ms)
    ok = json_ok == 100 and image_ok == 100 and mean_embed < 5 and overhead.overhead_ms < 5
    acceptance.check(
        8, ok,
        f"json {json_ok}/100, non-json {image_ok}/100, embed {mean_embed:.3f} ms, "
        f"client overhead {overhead.overhead_ms:.3f} ms",
    )


PATHOLOGICAL = ("0.10", "1e-7", "12345678901234567890", "-0", "-0.0", "1E+07", "100.000", "2.50e-300", "98765432109876543210123")


def sprinkle(value, rng):
    """Replace some numeric leaves with hand-picked awkward lexemes."""
    if value.kind == "number":
        return RawValue("number", rng.choice(PATHOLOGICAL)) if rng.random() < 0.5 else value
    if value.kind == "object":
        return RawValue("object", children=tuple(Entry(e.key, sprinkle(e.value, rng), e.token) for e in value.children))
    return value


def test_9_zero_distortion(acceptance):
    rng = random.Random(SEED)
    cfg = EmbedConfig(64, decoy_policy="pad_final_group")
    bad = seen = 0
    for i in range(10_000):
        base = generate_document(DATASETS[1 + i % 9], rng)
        doc = OrderedDocument(tuple(Entry(e.key, sprinkle(e.value, rng), e.token) for e in base.entries))
        text = serialize(doc)
        before = parse(text)
        after = parse(serialize(embed(before, Watermark.random(64, rng), cfg)))
        for e in before.entries:
            seen += 1
            bad += after[e.key].to_json() != e.value.to_json()
        bad += not set(before.keys) <= set(after.keys)
    acceptance.check(9, bad == 0, f"{seen} value tokens across 10000 documents, {bad} changed")


def test_10_similarity(acceptance):
    wm = Watermark.random(64, random.Random(SEED))
    flipped = [1 - b for b in wm.bits]
    half = list(wm.bits[:32]) + flipped[32:]
    got = (similarity(wm, wm.bits), similarity(wm, flipped), similarity(wm, half))
    acceptance.check(10, got == (100.0, 0.0, 50.0), f"{got}")
