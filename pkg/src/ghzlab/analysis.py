"""Population, overlap signals, MQC spectra, fidelity and run statistics."""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy import stats

CLAMP_TOL = 1e-9


class CoherenceClampWarning(UserWarning):
    pass


def _value(dist, key: str) -> float:
    if isinstance(dist, Mapping):
        return float(dist.get(key, 0.0))
    return float(np.asarray(dist)[int(key, 2)])


def _width(dist) -> int:
    if hasattr(dist, "num_bits"):
        return dist.num_bits
    if isinstance(dist, Mapping):
        return len(next(iter(dist)))
    return int(round(math.log2(len(dist))))


def population(dist) -> float:
    """p(0...0) + p(1...1); ``dist`` is a mapping over bit strings or a dense vector."""
    n = _width(dist)
    return _value(dist, "0" * n) + _value(dist, "1" * n)


def overlap_signal(dist) -> float:
    return _value(dist, "0" * _width(dist))


def phase_grid(n: int) -> np.ndarray:
    return np.pi * np.arange(2 * n + 2) / (n + 1)


def ideal_overlap(n: int, phis) -> np.ndarray:
    return 0.5 * (1 + np.cos(n * np.asarray(phis)))


@dataclass(frozen=True)
class OverlapCurve:
    n: int
    s_values: np.ndarray
    phis: np.ndarray = field(default=None)

    def __post_init__(self):
        s = np.asarray(self.s_values, dtype=float)
        if s.shape != (2 * self.n + 2,):
            raise ValueError(f"an N={self.n} curve needs {2 * self.n + 2} samples, got {s.shape}")
        object.__setattr__(self, "s_values", s)
        object.__setattr__(self, "phis", phase_grid(self.n))

    @classmethod
    def ideal(cls, n: int) -> "OverlapCurve":
        return cls(n, ideal_overlap(n, phase_grid(n)))


def mqc_amplitudes(curve: OverlapCurve) -> np.ndarray:
    """I_q = |sum_phi exp(i q phi) S_phi| / (2N+2) for q = 0..N+1."""
    q = np.arange(curve.n + 2)
    phase = np.exp(1j * np.outer(q, curve.phis))
    amp = np.abs(phase @ curve.s_values) / curve.s_values.size
    # roundoff of the phase sum is O(eps * sum|S|); sqrt would amplify it to ~1e-8 in C
    floor = 64 * np.finfo(float).eps * max(np.abs(curve.s_values).mean(), np.finfo(float).tiny)
    amp[amp < floor] = 0.0
    return amp


def coherence(i_n: float, record: list | None = None) -> float:
    """C = 2 sqrt(I_N), clamped to [0, 1]; clamps above tolerance warn and are recorded."""
    if i_n < 0:
        raise ValueError("I_N must be non-negative")
    c = 2.0 * math.sqrt(i_n)
    if c > 1.0:
        if c > 1.0 + CLAMP_TOL:
            warnings.warn(f"coherence {c:.6g} clamped to 1", CoherenceClampWarning, stacklevel=2)
            if record is not None:
                record.append(c)
        c = 1.0
    return c


def fidelity(p: float, c: float) -> float:
    return 0.5 * (p + c)


def noise_filter(curve: OverlapCurve) -> OverlapCurve:
    """Keep only the 0 and +/-N Fourier components of the curve."""
    m = curve.s_values.size
    spec = np.fft.fft(curve.s_values)
    keep = np.zeros(m, dtype=bool)
    keep[[0, curve.n % m, (m - curve.n) % m]] = True
    spec[~keep] = 0
    return OverlapCurve(curve.n, np.fft.ifft(spec).real)


@dataclass
class FidelityRecord:
    size: int
    P: float
    I_spectrum: np.ndarray
    C: float
    F: float
    embedding: str = ""
    qrem: bool = False
    parity: bool = False
    run: int = 0
    seed: int | None = None
    retention: float = 1.0
    clamped: int = 0

    @property
    def config(self) -> tuple:
        return (self.embedding, self.size, self.qrem, self.parity)


def fidelity_record(p: float, curve: OverlapCurve, **meta) -> FidelityRecord:
    clamps: list = []
    spec = mqc_amplitudes(curve)
    c = coherence(float(spec[curve.n]), clamps)
    return FidelityRecord(curve.n, float(p), spec, c, fidelity(p, c), clamped=len(clamps), **meta)


@dataclass(frozen=True)
class RunSummary:
    n_runs: int
    means: dict
    sems: dict

    @property
    def F_mean(self) -> float:
        return self.means["F"]

    @property
    def F_sem(self) -> float:
        return self.sems["F"]


def mean_sem(values: Sequence[float]) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size < 2:
        raise ValueError("need at least two values for a standard error")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(v.size))


def aggregate_runs(records: Sequence[FidelityRecord]) -> RunSummary:
    if len(records) < 2:
        raise ValueError("aggregation needs at least two runs")
    configs = {r.config for r in records}
    if len(configs) > 1:
        raise ValueError(f"mixed configurations: {sorted(configs)}")
    means, sems = {}, {}
    for key in ("P", "C", "F", "retention"):
        means[key], sems[key] = mean_sem([getattr(r, key) for r in records])
    return RunSummary(len(records), means, sems)


@dataclass(frozen=True)
class Confidence:
    confidence: float
    gme: bool
    degenerate: bool = False


def gme_confidence(mean_f: float, sem: float, n_runs: int) -> Confidence:
    """One-sided confidence that F > 1/2 from a Student-t with n_runs - 1 dof."""
    if n_runs < 2:
        raise ValueError("need at least two runs")
    if sem < 0:
        raise ValueError("standard error must be non-negative")
    gme = mean_f > 0.5
    if sem == 0:
        return Confidence(1.0 if gme else (0.5 if mean_f == 0.5 else 0.0), gme, degenerate=True)
    return Confidence(float(stats.t.cdf((mean_f - 0.5) / sem, df=n_runs - 1)), gme)


SUMMARY_COLUMNS = ("embedding", "size", "qrem", "parity", "run_count", "P_mean", "P_sem", "C_mean", "C_sem",
                   "F_mean", "F_sem", "confidence", "verdict", "retention_mean")
CURVE_COLUMNS = ("size", "variant", "phi_index", "phi", "S_raw", "S_filtered")


def summary_row(records: Sequence[FidelityRecord]) -> dict:
    agg = aggregate_runs(records)
    conf = gme_confidence(agg.F_mean, agg.F_sem, agg.n_runs)
    r0 = records[0]
    return {"embedding": r0.embedding, "size": r0.size, "qrem": int(r0.qrem), "parity": int(r0.parity),
            "run_count": agg.n_runs,
            "P_mean": agg.means["P"], "P_sem": agg.sems["P"], "C_mean": agg.means["C"], "C_sem": agg.sems["C"],
            "F_mean": agg.F_mean, "F_sem": agg.F_sem, "confidence": conf.confidence,
            "verdict": "GME" if conf.gme else "no-GME", "retention_mean": agg.means["retention"]}


def curve_rows(curve: OverlapCurve, variant: str) -> list[dict]:
    filt = noise_filter(curve)
    return [{"size": curve.n, "variant": variant, "phi_index": j, "phi": float(curve.phis[j]),
             "S_raw": float(curve.s_values[j]), "S_filtered": float(filt.s_values[j])}
            for j in range(curve.s_values.size)]


def write_csv(path, rows: Iterable[dict], columns: Sequence[str]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
