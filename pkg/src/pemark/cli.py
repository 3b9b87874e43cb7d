"""``pemark`` command line.

Exit codes: 0 success, 1 unparseable input, 2 capacity or configuration
problem, 3 watermark cannot be extracted, 4 upstream/network failure.
"""

from __future__ import annotations

import argparse
import json
import signal
import sys
import threading

from . import attacklab
from .core import EmbedConfig, Watermark, embed, extract, plan_groups
from .errors import (
    ConfigInvalid,
    ConfigSyntax,
    DuplicateTopLevelKey,
    GroupSizeExceedsCapacity,
    IntensityOutOfRange,
    InvalidConfig,
    MalformedJson,
    NoCompleteGroups,
    TopLevelNotObject,
    UpstreamUnreachable,
    ValueTooLarge,
)
from .ordered_doc import parse, serialize
from .permcode import factorial, min_threshold

EXIT_OK, EXIT_INPUT, EXIT_CAPACITY, EXIT_EXTRACT, EXIT_NETWORK = 0, 1, 2, 3, 4

_EXIT_FOR = (
    ((MalformedJson, DuplicateTopLevelKey, TopLevelNotObject), EXIT_INPUT),
    ((GroupSizeExceedsCapacity, ValueTooLarge, ConfigInvalid, ConfigSyntax, InvalidConfig, IntensityOutOfRange), EXIT_CAPACITY),
    ((NoCompleteGroups,), EXIT_EXTRACT),
    ((UpstreamUnreachable,), EXIT_NETWORK),
)


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _read_input(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    with open(path, "rb") as fp:
        return fp.read()


def _open_output(path: str | None):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8", newline=""), True


def _watermark(args) -> Watermark:
    try:
        return Watermark.from_hex(args.watermark, args.length)
    except ValueTooLarge:
        raise CliError(f"watermark {args.watermark} does not fit in {args.length} bits", EXIT_CAPACITY) from None
    except ValueError as exc:
        raise CliError(f"bad watermark: {exc}", EXIT_CAPACITY) from None


def _int_range(text: str) -> list[float]:
    """``0:50:5`` (inclusive) or ``0,5,10``."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        out, x = [], start
        while x <= stop + 1e-9:
            out.append(x)
            x += step
        return out
    return [float(x) for x in text.split(",") if x.strip()]


# -- commands -----------------------------------------------------------------

def cmd_embed(args) -> int:
    wm = _watermark(args)
    cfg = EmbedConfig(args.length, args.threshold, decoy_policy=args.decoys, decoy_seed=args.decoy_seed)
    doc = parse(_read_input(args.input))
    if plan_groups(doc, cfg.T).g == 0 and cfg.decoy_policy == "none":
        raise CliError(f"document has {doc.N} top-level keys; a {args.length}-bit watermark needs {cfg.T}", EXIT_CAPACITY)
    sys.stdout.write(serialize(embed(doc, wm, cfg)) + "\n")
    return EXIT_OK


def cmd_extract(args) -> int:
    doc = parse(_read_input(args.input))
    report = extract(doc, args.length, args.threshold)
    wm = report.watermark
    if args.json:
        out = {
            "watermark": wm.hex,
            "length": args.length,
            "groups": report.groups_used,
            "per_group": [Watermark(v, args.length).hex for v in report.per_group_values],
            "votes_per_bit": list(report.votes_per_bit),
        }
        sys.stdout.write(json.dumps(out) + "\n")
        return EXIT_OK
    lines = [wm.hex, f"groups {report.groups_used}"]
    lines += [f"group {i} {Watermark(v, args.length).hex}" for i, v in enumerate(report.per_group_values)]
    if args.verbose:
        lines.append("votes " + ",".join(map(str, report.votes_per_bit)))
    sys.stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_capacity(args) -> int:
    T = min_threshold(args.length)
    sys.stdout.write(f"{T}\n")
    below = factorial(T - 1)
    print(
        f"{T - 1}! = {below:.4g} < 2^{args.length} = {2 ** args.length:.4g} <= {T}! = {factorial(T):.4g}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_attack(args) -> int:
    spec = attacklab.AttackSpec(args.type, args.intensity, args.placement, args.seed)
    doc = parse(_read_input(args.input))
    sys.stdout.write(serialize(attacklab.apply_attack(doc, spec)) + "\n")
    return EXIT_OK


def cmd_gen_dataset(args) -> int:
    cfg = attacklab.DatasetConfig.from_id(args.config)
    fp, close = _open_output(args.output)
    try:
        for doc in attacklab.generate_dataset(cfg, args.count, args.seed):
            fp.write(serialize(doc) + "\n")
    finally:
        if close:
            fp.close()
    return EXIT_OK


def cmd_bench_time(args) -> int:
    cfg = EmbedConfig(args.length, args.threshold, decoy_policy=args.decoys)
    fp, close = _open_output(args.output)
    try:
        for n, dataset_id in enumerate(args.dataset):
            rows = attacklab.run_timing_bench(attacklab.DatasetConfig.from_id(dataset_id), args.trials, cfg, args.seed)
            attacklab.write_timing_csv(rows, fp, header=n == 0)
            s = attacklab.summarize_timing(rows)
            print(
                f"dataset {dataset_id}: embed mean {s['embed_ms']['mean']:.3f} ms "
                f"p50 {s['embed_ms']['p50']:.3f} p95 {s['embed_ms']['p95']:.3f}; "
                f"extract mean {s['extract_ms']['mean']:.3f} ms "
                f"p50 {s['extract_ms']['p50']:.3f} p95 {s['extract_ms']['p95']:.3f}",
                file=sys.stderr,
            )
    finally:
        if close:
            fp.close()
    return EXIT_OK


def cmd_bench_robust(args) -> int:
    cfg = EmbedConfig(args.length, args.threshold)
    intensities = _int_range(args.intensities)
    all_reports = []
    fp, close = _open_output(args.output)
    try:
        first = True
        for dataset_id in args.dataset:
            ds = attacklab.DatasetConfig.from_id(dataset_id)
            for attack in args.attack:
                reports = attacklab.run_robustness_sweep(
                    ds, attack, intensities, args.trials, cfg, args.seed, args.placement
                )
                attacklab.write_robustness_csv(reports, fp, header=first)
                first = False
                all_reports.extend(reports)
                means = " ".join(f"{r.intensity:g}:{r.mean:.1f}" for r in reports)
                print(f"dataset {dataset_id} {attack}/{args.placement}: {means}", file=sys.stderr)
    finally:
        if close:
            fp.close()
    if args.gnuplot:
        with open(args.gnuplot, "w", encoding="utf-8") as gp:
            attacklab.write_gnuplot(all_reports, gp)
    return EXIT_OK


def cmd_serve(args) -> int:
    from .gateway import Gateway, load_config

    try:
        config = load_config(args.config)
    except OSError as exc:
        raise CliError(f"cannot read config: {exc}", EXIT_CAPACITY) from None
    try:
        gw = Gateway(config)
    except OSError as exc:
        raise CliError(f"cannot listen on {config.listen_address}: {exc}", EXIT_NETWORK) from None
    stop = threading.Event()

    def on_signal(signum, frame):
        stop.set()

    previous = {s: signal.signal(s, on_signal) for s in (signal.SIGINT, signal.SIGTERM)}
    try:
        gw.start()
        gw.sink.message(json.dumps({"event": "listening", "url": gw.url, "routes": len(config.routes)}))
        while not stop.wait(0.5):
            pass
        gw.sink.message(json.dumps({"event": "shutdown"}))
    finally:
        gw.shutdown()
        for s, h in previous.items():
            signal.signal(s, h)
    return EXIT_OK


# -- parser -------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pemark", description="Key-order watermarking for JSON API responses.")
    sub = p.add_subparsers(dest="command", required=True)

    def threshold(sp):
        sp.add_argument("--threshold", "-T", type=int, default=None,
                        help="keys per group (default: smallest T with T! >= 2^length)")

    sp = sub.add_parser("embed", help="watermark one JSON object")
    sp.add_argument("input", nargs="?", default="-", help="file to read, '-' for stdin")
    sp.add_argument("--watermark", "-w", required=True, help="watermark as hex")
    sp.add_argument("--length", "-L", type=int, required=True, help="watermark length in bits")
    threshold(sp)
    sp.add_argument("--decoys", choices=("none", "pad_final_group"), default="none")
    sp.add_argument("--decoy-seed", type=int, default=0)
    sp.set_defaults(func=cmd_embed)

    sp = sub.add_parser("extract", help="recover the watermark from one JSON object")
    sp.add_argument("input", nargs="?", default="-")
    sp.add_argument("--length", "-L", type=int, required=True)
    threshold(sp)
    sp.add_argument("--verbose", "-v", action="store_true", help="also print ones-votes per bit")
    sp.add_argument("--json", action="store_true", help="machine-readable report")
    sp.set_defaults(func=cmd_extract)

    sp = sub.add_parser("capacity", help="minimum group size for a watermark length")
    sp.add_argument("length", type=int)
    sp.set_defaults(func=cmd_capacity)

    sp = sub.add_parser("attack", help="delete, tamper with or insert top-level pairs")
    sp.add_argument("input", nargs="?", default="-")
    sp.add_argument("--type", choices=attacklab.ATTACK_KINDS, required=True)
    sp.add_argument("--intensity", type=float, required=True, help="percentage of N pairs affected")
    sp.add_argument("--placement", choices=attacklab.PLACEMENTS, default="append")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_attack)

    sp = sub.add_parser("gen-dataset", help="write synthetic documents as JSON lines")
    sp.add_argument("--config", type=int, required=True, choices=sorted(attacklab.DATASETS))
    sp.add_argument("--count", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", "-o", default=None)
    sp.set_defaults(func=cmd_gen_dataset)

    sp = sub.add_parser("bench-time", help="embed/extract timing as CSV")
    sp.add_argument("--dataset", type=int, nargs="+", default=[1, 2, 3, 4, 5, 6], choices=sorted(attacklab.DATASETS))
    sp.add_argument("--trials", type=int, default=100, help="documents per dataset")
    sp.add_argument("--length", "-L", type=int, default=64)
    threshold(sp)
    sp.add_argument("--decoys", choices=("none", "pad_final_group"), default="pad_final_group")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", "-o", default=None)
    sp.set_defaults(func=cmd_bench_time)

    sp = sub.add_parser("bench-robust", help="similarity vs attack intensity as CSV")
    sp.add_argument("--dataset", type=int, nargs="+", default=[7, 8, 9], choices=sorted(attacklab.DATASETS))
    sp.add_argument("--attack", nargs="+", choices=attacklab.ATTACK_KINDS, default=list(attacklab.ATTACK_KINDS))
    sp.add_argument("--intensities", default="0:50:5", help="start:stop:step (inclusive) or a comma list")
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--placement", choices=attacklab.PLACEMENTS, default="append")
    sp.add_argument("--length", "-L", type=int, default=64)
    threshold(sp)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--output", "-o", default=None)
    sp.add_argument("--gnuplot", default=None, help="also write intensity/mean/min/max blocks here")
    sp.set_defaults(func=cmd_bench_robust)

    sp = sub.add_parser("serve", help="run the watermarking gateway")
    sp.add_argument("--config", "-c", required=True)
    sp.set_defaults(func=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        print(f"pemark: {exc}", file=sys.stderr)
        return exc.code
    except Exception as exc:
        for types, code in _EXIT_FOR:
            if isinstance(exc, types):
                print(f"pemark: {type(exc).__name__}: {exc}", file=sys.stderr)
                return code
        raise


if __name__ == "__main__":
    sys.exit(main())
