"""Experiment configuration, execution into a JSON archive, and archive analysis."""
from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .analysis import OverlapCurve, curve_rows, fidelity_record, summary_row
from .circuit import mqc_circuit, phase_grid, population_circuit
from .device import EmbeddingError, EmbeddingPlan, build_embedding, load_device, montreal27, ring_embedding
from .mitigation import (CalibrationMatrix, CountsTable, DEFAULT_THRESHOLD_SHOTS, QuasiDistribution,
                         invert_readout, measure_calibration, post_select_parity, project_to_simplex)
from .simulator import DEFAULT_MAX_QUBITS, NoiseModel, _thread_count, run_shots

SCHEMA_VERSION = "1.0"


class ConfigError(ValueError):
    """Invalid experiment configuration (exit code 2)."""


class ArchiveError(ValueError):
    """Malformed, incomplete or incompatible archive (exit code 3)."""


@dataclass(frozen=True)
class ExperimentConfig:
    embedding: str = "ring"
    sizes: tuple[int, ...] = (5,)
    shots: int = 8192
    runs: int = 8
    seed: int = 0
    noise: NoiseModel = field(default_factory=NoiseModel)
    qrem: bool = True
    parity: tuple[bool, ...] = (False,)
    threshold_shots: float = DEFAULT_THRESHOLD_SHOTS
    device: str | None = None
    output: str = "results"
    max_qubits: int = DEFAULT_MAX_QUBITS

    def __post_init__(self):
        object.__setattr__(self, "embedding", str(self.embedding))
        object.__setattr__(self, "sizes", tuple(int(s) for s in self.sizes))
        object.__setattr__(self, "parity", tuple(bool(p) for p in self.parity))
        if self.embedding not in ("1", "2", "ring"):
            raise ConfigError(f"embedding must be 1, 2 or ring, got {self.embedding!r}")
        if self.shots < 1:
            raise ConfigError("shots must be at least 1")
        if self.runs < 2:
            raise ConfigError("at least two runs are needed for a confidence estimate")
        if not self.sizes:
            raise ConfigError("no sizes requested")
        if self.threshold_shots < 0:
            raise ConfigError("threshold_shots must be non-negative")
        for size in self.sizes:
            for parity in self.parity:
                try:
                    self.plan(size, parity)
                except EmbeddingError as exc:
                    raise ConfigError(str(exc)) from exc

    def plan(self, size: int, parity: bool) -> EmbeddingPlan:
        if self.embedding == "ring":
            return ring_embedding(size, parity)
        graph = load_device(self.device) if self.device else montreal27()
        return build_embedding(graph, int(self.embedding), size, parity)

    def to_json(self) -> dict:
        return {"embedding": self.embedding, "sizes": list(self.sizes), "shots": self.shots, "runs": self.runs,
                "seed": self.seed, "noise": self.noise.to_json(), "qrem": self.qrem, "parity": list(self.parity),
                "threshold_shots": self.threshold_shots, "device": self.device, "output": self.output,
                "max_qubits": self.max_qubits}

    @classmethod
    def from_json(cls, raw: dict) -> "ExperimentConfig":
        raw = dict(raw)
        try:
            noise_raw = dict(raw.pop("noise", {}))
            uniform = noise_raw.pop("readout_uniform", None)
            noise = NoiseModel.from_json(noise_raw)
            sizes = raw.pop("sizes", None)
            if sizes is None and "size_range" in raw:
                lo, hi = raw.pop("size_range")
                sizes = list(range(int(lo), int(hi) + 1))
            parity = raw.pop("parity", [False])
            parity = [parity] if isinstance(parity, bool) else parity
            known = {"embedding", "shots", "runs", "seed", "qrem", "threshold_shots", "device", "output",
                     "max_qubits"}
            unknown = set(raw) - known
            if unknown:
                raise ConfigError(f"unknown config keys {sorted(unknown)}")
            cfg = cls(sizes=tuple(sizes or (5,)), noise=noise, parity=tuple(parity),
                      **{k: raw[k] for k in raw})
        except (TypeError, KeyError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid configuration: {exc}") from exc
        if uniform is not None:
            qubits = sorted({q for s in cfg.sizes for p in cfg.parity
                             for q in cfg.plan(s, p).data_qubits + cfg.plan(s, p).ancillas})
            ro = {q: CalibrationMatrix.from_flips(uniform["p10"], uniform["p01"], q) for q in qubits}
            cfg = replace(cfg, noise=replace(cfg.noise, readout={**ro, **cfg.noise.readout}))
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        try:
            raw = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_json(raw)


def _task_seed(master: int, size: int, parity: bool, run: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(master, spawn_key=(size, int(parity), run, index))


def _run_record(cfg: ExperimentConfig, size: int, parity: bool, run: int) -> dict:
    plan = cfg.plan(size, parity)
    pop = population_circuit(plan, parity)
    counts = [run_shots(pop, cfg.noise, cfg.shots, _task_seed(cfg.seed, size, parity, run, 0),
                        max_qubits=cfg.max_qubits)]
    for j, phi in enumerate(phase_grid(size)):
        circ = mqc_circuit(plan, phi, parity)
        counts.append(run_shots(circ, cfg.noise, cfg.shots, _task_seed(cfg.seed, size, parity, run, 1 + j),
                                max_qubits=cfg.max_qubits))
    n_data = len(plan.data_qubits)
    rec = {"size": size, "parity": parity, "run": run, "embedding": cfg.embedding,
           "measured_qubits": list(pop.measured_qubits),
           "ancilla_positions": list(range(n_data, len(pop.measured_qubits))),
           "population": counts[0].to_json(), "mqc": [c.to_json() for c in counts[1:]],
           "calibration": None}
    if cfg.qrem:
        seed = _task_seed(cfg.seed, size, parity, run, 10_000)
        cals = measure_calibration(cfg.noise, plan.data_qubits, cfg.shots, seed, plan.graph.qubit_count)
        rec["calibration"] = [cals[q].to_json() for q in plan.data_qubits]
    return rec


def run_experiment(cfg: ExperimentConfig, timestamp: str | None = None) -> dict:
    tasks = [(s, p, r) for s in cfg.sizes for p in cfg.parity for r in range(cfg.runs)]
    workers = min(_thread_count(), len(tasks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            records = list(pool.map(lambda t: _run_record(cfg, *t), tasks))
    else:
        records = [_run_record(cfg, *t) for t in tasks]
    records.sort(key=lambda r: (r["size"], r["parity"], r["run"]))
    return {"schema_version": SCHEMA_VERSION, "version": __version__,
            "created": timestamp or time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
            "config": cfg.to_json(), "records": records}


def write_archive(path: str | Path, archive: dict) -> None:
    Path(path).write_text(json.dumps(archive, sort_keys=True, indent=1) + "\n")


def read_archive(path: str | Path) -> dict:
    try:
        archive = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"cannot read archive {path}: {exc}") from exc
    check_archive(archive)
    return archive


def check_archive(archive: dict) -> None:
    version = str(archive.get("schema_version", ""))
    if version.split(".")[0] != SCHEMA_VERSION.split(".")[0]:
        raise ArchiveError(f"unsupported archive schema {version!r}")
    for rec in archive.get("records", []):
        if len(rec.get("mqc", [])) != 2 * rec["size"] + 2:
            raise ArchiveError(f"incomplete phase grid for size {rec['size']} run {rec['run']}")
    if not archive.get("records"):
        raise ArchiveError("archive holds no records")


def _distribution(counts: CountsTable, cals, qrem: bool, threshold: float) -> QuasiDistribution:
    if qrem:
        return project_to_simplex(invert_readout(counts, cals, threshold))
    return QuasiDistribution.from_counts(counts)


def analyze_record(rec: dict, qrem: bool, threshold_shots: float = DEFAULT_THRESHOLD_SHOTS):
    """FidelityRecord and raw overlap curve of one archived run."""
    n = rec["size"]
    anc = rec["ancilla_positions"] if rec["parity"] else []
    cals = None
    if qrem:
        if rec.get("calibration") is None:
            raise ArchiveError("QREM requested but the archive holds no calibration")
        cals = [CalibrationMatrix(np.array(c["matrix"]), c["qubit"]) for c in rec["calibration"]]
    retentions = []

    def prepare(raw):
        counts = CountsTable.from_json(raw)
        if anc:
            counts, kept = post_select_parity(counts, anc)
            retentions.append(kept)
        return _distribution(counts, cals, qrem, threshold_shots)

    pop = prepare(rec["population"])
    p = pop.get_index(0) + pop.get_index((1 << n) - 1)
    s = np.array([prepare(raw).get_index(0) for raw in rec["mqc"]])
    curve = OverlapCurve(n, s)
    fr = fidelity_record(p, curve, embedding=str(rec["embedding"]), qrem=qrem, parity=bool(rec["parity"]),
                         run=rec["run"], retention=float(np.mean(retentions)) if retentions else 1.0)
    return fr, curve


@dataclass
class Analysis:
    summary: list[dict]
    curves: list[dict]
    records: list
    lines: list[str]


def analyze_archive(archive: dict, qrem: bool | None = None, parity: Sequence[bool] | None = None) -> Analysis:
    check_archive(archive)
    cfg = archive["config"]
    qrem = bool(cfg.get("qrem", False)) if qrem is None else qrem
    threshold = float(cfg.get("threshold_shots", DEFAULT_THRESHOLD_SHOTS))
    wanted = set(parity) if parity is not None else None
    groups: dict[tuple, list] = {}
    curves: dict[tuple, list] = {}
    for rec in archive["records"]:
        if wanted is not None and bool(rec["parity"]) not in wanted:
            continue
        fr, curve = analyze_record(rec, qrem, threshold)
        key = (rec["size"], bool(rec["parity"]))
        groups.setdefault(key, []).append(fr)
        curves.setdefault(key, []).append(curve)
    if not groups:
        raise ArchiveError("no records match the requested variant")
    summary, curve_out, lines, records = [], [], [], []
    for key in sorted(groups):
        recs = groups[key]
        row = summary_row(recs)
        summary.append(row)
        records.extend(recs)
        variant = f"{'qrem' if qrem else 'raw'}{'_parity' if key[1] else ''}"
        mean_curve = OverlapCurve(key[0], np.mean([c.s_values for c in curves[key]], axis=0))
        curve_out.extend(curve_rows(mean_curve, variant))
        lines.append(f"size {key[0]:>3} {variant:<12} F = {row['F_mean']:.4f} +/- {row['F_sem']:.4f}  "
                     f"{row['verdict']} (confidence {row['confidence']:.4f})")
    return Analysis(summary, curve_out, records, lines)
