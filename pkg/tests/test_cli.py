import csv
import io
import json
import os
import signal
import subprocess
import sys
import time
import urllib.request

import pytest

from pemark.attacklab import ROBUSTNESS_COLUMNS
from pemark.cli import main
from pemark.stub import StubResponse, StubUpstream

WIDE = json.dumps({f"k{i:02d}": i for i in reversed(range(50))})


@pytest.fixture
def run(monkeypatch, capsys):
    def _run(*argv, stdin=""):
        data = stdin.encode() if isinstance(stdin, str) else stdin
        monkeypatch.setattr(sys, "stdin", io.TextIOWrapper(io.BytesIO(data)))
        code = main(list(argv))
        out, err = capsys.readouterr()
        return code, out, err
    return _run


def test_embed_value_zero_sorts(run):
    doc = '{"f":6,"b":2,"d":4,"a":1,"e":5,"c":3}'
    code, out, _ = run("embed", "--watermark", "00", "--length", "8", stdin=doc)
    assert code == 0
    assert list(json.loads(out)) == ["a", "b", "c", "d", "e", "f"]


def test_embed_then_extract(run):
    code, marked, _ = run("embed", "-w", "00c0ffee", "-L", "32", stdin=WIDE)
    assert code == 0
    code, out, _ = run("extract", "-L", "32", stdin=marked)
    lines = out.splitlines()
    assert code == 0
    assert lines[0] == "00c0ffee"
    assert lines[1] == "groups 3"
    assert lines[2:] == ["group 0 00c0ffee", "group 1 00c0ffee", "group 2 00c0ffee"]


def test_extract_verbose_and_json(run):
    _, marked, _ = run("embed", "-w", "a5", "-L", "8", stdin=WIDE)
    _, out, _ = run("extract", "-L", "8", "--verbose", stdin=marked)
    g = 50 // 6
    ones = [g * int(b) for b in format(0xA5, "08b")]
    assert out.splitlines()[-1] == "votes " + ",".join(map(str, ones))
    _, out, _ = run("extract", "-L", "8", "--json", stdin=marked)
    report = json.loads(out)
    assert report["watermark"] == "a5"
    assert report["groups"] == g
    assert report["votes_per_bit"] == ones


def test_file_argument(run, tmp_path):
    path = tmp_path / "doc.json"
    path.write_text(WIDE)
    code, out, _ = run("embed", str(path), "-w", "1", "-L", "64")
    assert code == 0
    assert json.loads(out) == json.loads(WIDE)


def test_extract_sorted_is_zero(run):
    doc = json.dumps({f"k{i:02d}": i for i in range(21)})
    code, out, _ = run("extract", "-L", "64", stdin=doc)
    assert code == 0
    assert out.splitlines()[0] == "0" * 16


@pytest.mark.parametrize("argv, stdin, code", [
    (["embed", "-w", "1", "-L", "8"], '{"a":', 1),
    (["embed", "-w", "1", "-L", "8"], '[1,2]', 1),
    (["embed", "-w", "1", "-L", "8"], '{"a":1,"a":2}', 1),
    (["embed", "-w", "100", "-L", "8"], WIDE, 2),
    (["embed", "-w", "1", "-L", "64"], '{"b":1,"a":2}', 2),
    (["embed", "-w", "1", "-L", "64", "-T", "20"], WIDE, 2),
    (["extract", "-L", "64"], '{"b":1,"a":2}', 3),
    (["extract", "-L", "64"], "not json", 1),
])
def test_exit_codes(run, argv, stdin, code):
    got, out, err = run(*argv, stdin=stdin)
    assert got == code
    assert out == ""
    assert err.startswith("pemark:")


def test_embed_with_decoys_on_short_doc(run):
    code, out, _ = run("embed", "-w", "1", "-L", "64", "--decoys", "pad_final_group", stdin='{"b":1,"a":2}')
    assert code == 0
    assert len(json.loads(out)) == 21


@pytest.mark.parametrize("length, T", [(64, 21), (1, 2), (8, 6), (128, 35)])
def test_capacity(run, length, T):
    code, out, err = run("capacity", str(length))
    assert code == 0
    assert out == f"{T}\n"
    assert err.startswith(f"{T - 1}! = ")


def test_capacity_note_for_128(run):
    _, _, err = run("capacity", "128")
    # 34 keys fall short of 2^128
    assert "34! = 2.952e+38 < 2^128 = 3.403e+38" in err


def test_gen_dataset_deterministic(run, tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("gen-dataset", "--config", "7", "--count", "10", "--seed", "1", "-o", str(a))[0] == 0
    assert run("gen-dataset", "--config", "7", "--count", "10", "--seed", "1", "-o", str(b))[0] == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().splitlines()
    assert len(lines) == 10
    assert all(len(json.loads(ln)) == 50 for ln in lines)


def test_tamper_keeps_watermark(run):
    _, doc, _ = run("gen-dataset", "--config", "8", "--count", "1", "--seed", "3")
    _, marked, _ = run("embed", "-w", "0123456789abcdef", "-L", "64", stdin=doc)
    code, attacked, _ = run("attack", "--type", "tamper", "--intensity", "50", "--seed", "9", stdin=marked)
    assert code == 0
    assert attacked != marked
    _, out, _ = run("extract", "-L", "64", stdin=attacked)
    assert out.splitlines()[0] == "0123456789abcdef"


def test_attack_intensity_checked(run):
    assert run("attack", "--type", "delete", "--intensity", "120", stdin=WIDE)[0] == 2


def test_bench_robust_csv(run, tmp_path):
    gp = tmp_path / "plot.dat"
    code, out, err = run("bench-robust", "--dataset", "8", "--attack", "delete", "--intensities", "0:10:5",
                         "--trials", "2", "--gnuplot", str(gp))
    assert code == 0
    rows = list(csv.reader(io.StringIO(out)))
    assert tuple(rows[0]) == ROBUSTNESS_COLUMNS
    assert len(rows) == 1 + 3 * 2
    assert {r[3] for r in rows[1:]} == {"0", "5", "10"}
    assert "dataset 8 delete/append" in err
    assert gp.read_text().strip()


def test_bench_time_csv(run):
    code, out, err = run("bench-time", "--dataset", "1", "4", "--trials", "3")
    assert code == 0
    rows = list(csv.DictReader(io.StringIO(out)))
    assert [r["dataset_id"] for r in rows] == ["1"] * 3 + ["4"] * 3
    assert "dataset 4: embed mean" in err


def test_serve_invalid_config(run, tmp_path):
    path = tmp_path / "gw.yaml"
    path.write_text("routes:\n  - path_prefix: /\n    watermark: {hex: '1', length: 8}\n")
    code, _, err = run("serve", "--config", str(path))
    assert code == 2
    assert "routes[0].upstream_url" in err


def test_serve_missing_config(run, tmp_path):
    assert run("serve", "--config", str(tmp_path / "nope.yaml"))[0] == 2


def test_serve_until_sigint(tmp_path):
    with StubUpstream({"/api/x": StubResponse(WIDE.encode())}) as stub:
        cfg = tmp_path / "gw.yaml"
        cfg.write_text(
            "listen: 127.0.0.1:0\n"
            "routes:\n"
            f"  - {{path_prefix: /api, upstream_url: '{stub.url}', watermark: {{hex: '2a', length: 8}}}}\n"
        )
        proc = subprocess.Popen(
            [sys.executable, "-m", "pemark", "serve", "--config", str(cfg)],
            stderr=subprocess.PIPE, text=True, env={**os.environ, "PEMARK_LOG": "stderr"},
        )
        try:
            started = json.loads(proc.stderr.readline())
            assert started["event"] == "listening"
            with urllib.request.urlopen(started["url"] + "/api/x", timeout=5) as resp:
                body = resp.read()
            assert json.loads(body) == json.loads(WIDE)
            record = json.loads(proc.stderr.readline())
            assert record["outcome"] == "watermarked"
            time.sleep(0.1)
            proc.send_signal(signal.SIGINT)
            assert proc.wait(timeout=10) == 0
            assert json.loads(proc.stderr.readline())["event"] == "shutdown"
        finally:
            if proc.poll() is None:
                proc.kill()
