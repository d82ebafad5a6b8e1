"""Command-line entry point: ``ghzlab embed|run|analyze|calcheck``.

Exit codes: 0 on success, 2 when a precondition fails (bad arguments,
config or fixtures, resource cap), 3 for archive or schema errors.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

from .analysis import CURVE_COLUMNS, SUMMARY_COLUMNS, write_csv
from .calcheck import (REPORT_COLUMNS, FixtureError, fixture_report, load_fixtures, locality_experiment,
                       qrem_overestimate_experiment)
from .circuit import mqc_circuit, population_circuit
from .device import (DeviceError, EMBEDDING_SIZES, EmbeddingError, PARITY_SIZES, build_embedding, load_device,
                     montreal27, reference_cell, schedule_layers)
from .experiment import (ArchiveError, ConfigError, ExperimentConfig, analyze_archive, read_archive,
                         run_experiment, write_archive)
from .mitigation import CalibrationError, EmptyResultError
from .simulator import ResourceError

EMBED_COLUMNS = ("embedding", "size", "variant", "depth", "count", "expected_depth", "expected_count", "status")


class PreconditionError(Exception):
    pass


def _embed_rows(graph, emb: int, size: int, parity: bool) -> list[dict]:
    plan = build_embedding(graph, emb, size, parity)
    suffix = "_parity" if parity else ""
    rows = []
    for name, circ in (("population", population_circuit(plan, parity)), ("coherence", mqc_circuit(plan, 0.0, parity))):
        variant = name + suffix
        depth, count = circ.cnot_depth(), circ.cnot_count()
        ref = reference_cell(emb, size, variant) if graph == montreal27() else None
        status = "" if ref is None else ("PASS" if ref == (depth, count) else "FAIL")
        rows.append({"embedding": emb, "size": size, "variant": variant, "depth": depth, "count": count,
                     "expected_depth": "" if ref is None else ref[0],
                     "expected_count": "" if ref is None else ref[1], "status": status})
    return rows


def cmd_embed(args) -> int:
    graph = load_device(args.device) if args.device else montreal27()
    if args.size is None:
        rows = []
        for emb in ([args.embedding] if args.embedding else sorted(EMBEDDING_SIZES)):
            for size in EMBEDDING_SIZES[emb]:
                for parity in (False, True):
                    if not parity or size in PARITY_SIZES[emb]:
                        rows += _embed_rows(graph, emb, size, parity)
    else:
        if args.embedding is None:
            raise PreconditionError("--size requires --embedding")
        plan = build_embedding(graph, args.embedding, args.size, args.parity)
        for k, layer in enumerate(schedule_layers(plan, include_parity_cnots=args.parity)):
            print(f"layer {k + 1}: " + " ".join(f"{c}->{t}" for c, t in layer))
        rows = _embed_rows(graph, args.embedding, args.size, args.parity)
    if args.csv:
        write_csv(args.csv, rows, EMBED_COLUMNS)
    w = csv.DictWriter(sys.stdout, fieldnames=list(EMBED_COLUMNS), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return 0


def cmd_run(args) -> int:
    cfg = ExperimentConfig.from_file(args.config)
    out = Path(args.out or cfg.output)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise PreconditionError(f"cannot create output directory {out}: {exc}") from exc
    archive = run_experiment(cfg)
    path = out / "archive.json"
    try:
        write_archive(path, archive)
    except OSError as exc:
        raise PreconditionError(f"cannot write {path}: {exc}") from exc
    print(f"wrote {path} ({len(archive['records'])} records)")
    return 0


def cmd_analyze(args) -> int:
    archive = read_archive(args.archive)
    parity = None if args.parity is None else [args.parity]
    result = analyze_archive(archive, qrem=args.qrem, parity=parity)
    out = Path(args.out or Path(args.archive).parent)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "summary.csv", result.summary, SUMMARY_COLUMNS)
    write_csv(out / "curves.csv", result.curves, CURVE_COLUMNS)
    for line in result.lines:
        print(line)
    return 0


def cmd_calcheck(args) -> int:
    fixtures = load_fixtures(args.fixtures)
    rows = fixture_report(fixtures)
    if args.out:
        write_csv(args.out, rows, REPORT_COLUMNS)
    w = csv.DictWriter(sys.stdout, fieldnames=list(REPORT_COLUMNS), lineterminator="\n")
    w.writeheader()
    w.writerows({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in r.items()} for r in rows)
    if args.locality:
        flips = [(r["A10"], r["A01"]) for r in rows[:args.qubits]]
        for label, corr in (("local", None), ("correlated", (0, 1, 0.05))):
            res = locality_experiment(flips, seed=args.seed, correlated=corr)
            print(f"locality {label}: distance {res.distance:.5f} null {res.null_mean:.5f} +/- "
                  f"{res.null_std:.5f} z = {res.z:.2f}")
    if args.overestimate:
        res = qrem_overestimate_experiment(args.qubits, samples=args.samples, seed=args.seed, shots=args.shots,
                                           fixtures=fixtures)
        for c in res.cells:
            print(f"overestimate p={c.p:.1f} {c.noise:<6} mean {c.mean_overestimate:+.2e} "
                  f"std {c.std_overestimate:.2e} qrem shift {c.mean_qrem_shift:+.2e}")
        print(f"max average overestimate {res.max_average_overestimate:.3e}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ghzlab", description="GHZ fidelity certification pipeline")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("embed", help="print the CNOT schedule and depth/count comparison")
    p.add_argument("--embedding", type=int, choices=sorted(EMBEDDING_SIZES))
    p.add_argument("--size", type=int)
    p.add_argument("--parity", action="store_true")
    p.add_argument("--device", help="device JSON (default: bundled 27-qubit graph)")
    p.add_argument("--csv", help="also write the comparison CSV here")
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("run", help="simulate every circuit of a config into an archive")
    p.add_argument("config")
    p.add_argument("--out", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("analyze", help="summaries and curves from an archive")
    p.add_argument("archive")
    p.add_argument("--qrem", dest="qrem", action="store_true", default=None)
    p.add_argument("--no-qrem", dest="qrem", action="store_false")
    p.add_argument("--parity", dest="parity", action="store_true", default=None)
    p.add_argument("--no-parity", dest="parity", action="store_false")
    p.add_argument("--out", help="output directory (default: next to the archive)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("calcheck", help="detector-tomography fixture report")
    p.add_argument("--fixtures", help="fixture JSON (default: bundled table)")
    p.add_argument("--out", help="write the report CSV here")
    p.add_argument("--locality", action="store_true", help="run the readout locality check")
    p.add_argument("--overestimate", action="store_true", help="run the QREM overestimate experiment")
    p.add_argument("--qubits", type=int, default=6)
    p.add_argument("--samples", type=int, default=100)
    p.add_argument("--shots", type=int, default=None, help="finite shots (default: exact probabilities)")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_calcheck)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ArchiveError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (PreconditionError, ConfigError, DeviceError, EmbeddingError, FixtureError, ResourceError,
            CalibrationError, EmptyResultError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
