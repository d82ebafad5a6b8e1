"""Readout error mitigation and parity post-selection.

Calibration matrices are column-stochastic, ``A[x, y] = p(x | y)``. Counts
and quasi-distributions are keyed by bit strings whose leftmost character
is the first measured qubit; internally strings map to integers with
``int(s, 2)``, so bit position ``k`` of an M-bit string is integer bit
``M - 1 - k``.
"""
from __future__ import annotations

import json
from collections.abc import Mapping
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

DEFAULT_THRESHOLD_SHOTS = 0.1


class CalibrationError(ValueError):
    pass


class EmptyResultError(ValueError):
    """Raised when post-selection keeps no shots."""


@dataclass(frozen=True)
class CalibrationMatrix:
    matrix: np.ndarray
    qubit: int | None = None

    def __post_init__(self):
        m = np.array(self.matrix, dtype=float)
        if m.shape != (2, 2):
            raise CalibrationError(f"calibration matrix must be 2x2, got {m.shape}")
        if np.any(m < -1e-12) or np.any(m > 1 + 1e-12):
            raise CalibrationError("calibration entries must lie in [0, 1]")
        if not np.allclose(m.sum(axis=0), 1.0, atol=1e-9):
            raise CalibrationError(f"calibration columns must sum to 1, got {m.sum(axis=0)}")
        m.setflags(write=False)
        object.__setattr__(self, "matrix", m)

    @classmethod
    def identity(cls, qubit: int | None = None) -> "CalibrationMatrix":
        return cls(np.eye(2), qubit)

    @classmethod
    def from_flips(cls, p10: float, p01: float, qubit: int | None = None) -> "CalibrationMatrix":
        """From p(1|0) and p(0|1)."""
        return cls(np.array([[1 - p10, p01], [p10, 1 - p01]]), qubit)

    @property
    def p10(self) -> float:
        return float(self.matrix[1, 0])

    @property
    def p01(self) -> float:
        return float(self.matrix[0, 1])

    @property
    def determinant(self) -> float:
        (a, b), (c, d) = self.matrix
        return float(a * d - b * c)

    def inverse(self) -> np.ndarray:
        det = self.determinant
        if abs(det) < 1e-6:
            raise CalibrationError(f"calibration matrix for qubit {self.qubit} is singular")
        (a, b), (c, d) = self.matrix
        return np.array([[d, -b], [-c, a]]) / det

    def to_json(self) -> dict:
        return {"qubit": self.qubit, "matrix": self.matrix.tolist()}


@dataclass(frozen=True)
class CountsTable:
    """Shot histogram over bit strings, with the measured qubit labels."""

    counts: dict[str, int]
    shots: int
    qubits: tuple[int, ...] = ()

    def __post_init__(self):
        counts = {str(k): int(v) for k, v in self.counts.items() if int(v) != 0}
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "qubits", tuple(self.qubits))
        if any(v < 0 for v in counts.values()):
            raise ValueError("counts must be non-negative")
        if sum(counts.values()) != self.shots:
            raise ValueError(f"counts sum to {sum(counts.values())}, expected {self.shots} shots")
        widths = {len(k) for k in counts}
        if len(widths) > 1:
            raise ValueError(f"bit strings of mixed length {sorted(widths)}")
        if self.qubits and widths and widths != {len(self.qubits)}:
            raise ValueError("bit-string length does not match the measured qubits")

    @property
    def num_bits(self) -> int:
        if self.qubits:
            return len(self.qubits)
        return len(next(iter(self.counts))) if self.counts else 0

    def probabilities(self) -> dict[str, float]:
        return {k: v / self.shots for k, v in self.counts.items()}

    def to_json(self) -> dict:
        out = {"shots": self.shots, "counts": dict(sorted(self.counts.items()))}
        if self.qubits:
            out["qubits"] = list(self.qubits)
        return out

    @classmethod
    def from_json(cls, raw: dict) -> "CountsTable":
        return cls(dict(raw["counts"]), int(raw["shots"]), tuple(raw.get("qubits", ())))


class QuasiDistribution(Mapping):
    """Sparse real vector over M-bit strings; values may be negative."""

    def __init__(self, indices, values, num_bits: int):
        idx = np.asarray(indices, dtype=np.int64).ravel()
        val = np.asarray(values, dtype=float).ravel()
        if idx.shape != val.shape:
            raise ValueError("indices and values differ in length")
        if idx.size and (idx.min() < 0 or idx.max() >= 1 << num_bits):
            raise ValueError("index out of range for the bit width")
        order = np.argsort(idx, kind="stable")
        self.indices, self.probs, self.num_bits = idx[order], val[order], int(num_bits)

    @classmethod
    def from_counts(cls, counts: CountsTable) -> "QuasiDistribution":
        keys = list(counts.counts)
        idx = np.array([int(k, 2) for k in keys], dtype=np.int64)
        val = np.array([counts.counts[k] for k in keys], dtype=float) / counts.shots
        return cls(idx, val, counts.num_bits)

    @classmethod
    def from_dict(cls, probs: Mapping[str, float]) -> "QuasiDistribution":
        keys = list(probs)
        width = len(keys[0]) if keys else 0
        return cls([int(k, 2) for k in keys], [probs[k] for k in keys], width)

    def _key(self, i: int) -> str:
        return format(int(i), f"0{self.num_bits}b") if self.num_bits else ""

    def __getitem__(self, key: str) -> float:
        pos = np.searchsorted(self.indices, int(key, 2))
        if pos < self.indices.size and self.indices[pos] == int(key, 2):
            return float(self.probs[pos])
        raise KeyError(key)

    def get_index(self, i: int) -> float:
        pos = np.searchsorted(self.indices, i)
        if pos < self.indices.size and self.indices[pos] == i:
            return float(self.probs[pos])
        return 0.0

    def __iter__(self) -> Iterator[str]:
        return (self._key(i) for i in self.indices)

    def __len__(self) -> int:
        return int(self.indices.size)

    def total(self) -> float:
        return float(self.probs.sum())

    def to_dict(self) -> dict[str, float]:
        return {self._key(i): float(v) for i, v in zip(self.indices, self.probs)}

    def __repr__(self):
        return f"QuasiDistribution(num_bits={self.num_bits}, support={len(self)}, total={self.total():.6f})"


def _inverses(cals, qubits: Sequence[int] | None, num_bits: int) -> list[np.ndarray]:
    if isinstance(cals, Mapping):
        if qubits is None or len(qubits) != num_bits:
            raise CalibrationError("measured qubit labels are needed to look up calibrations")
        missing = [q for q in qubits if q not in cals]
        if missing:
            raise CalibrationError(f"no calibration for qubit(s) {missing}")
        seq = [cals[q] for q in qubits]
    else:
        seq = list(cals)
        if len(seq) != num_bits:
            raise CalibrationError(f"{len(seq)} calibrations for {num_bits} measured bits")
    return [(c if isinstance(c, CalibrationMatrix) else CalibrationMatrix(c)).inverse() for c in seq]


def apply_local_inverse(idx: np.ndarray, val: np.ndarray, inv: np.ndarray, bit: int):
    """Apply a 2x2 matrix on integer bit ``bit`` of a sparse vector; merge duplicate keys."""
    mask = np.int64(1) << bit
    b = (idx >> bit) & 1
    keys = np.concatenate([idx, idx ^ mask])
    vals = np.concatenate([inv[b, b] * val, inv[1 - b, b] * val])
    order = np.argsort(keys, kind="stable")
    keys, vals = keys[order], vals[order]
    first = np.empty(keys.size, dtype=bool)
    first[:1] = True
    np.not_equal(keys[1:], keys[:-1], out=first[1:])
    starts = np.flatnonzero(first)
    return keys[starts], np.add.reduceat(vals, starts) if starts.size else vals


def invert_readout(counts: CountsTable | QuasiDistribution, cals, threshold_shots: float = DEFAULT_THRESHOLD_SHOTS,
                   shots: int | None = None, qubits: Sequence[int] | None = None,
                   order: Sequence[int] | None = None) -> QuasiDistribution:
    """Apply per-qubit inverse calibrations sequentially on the sparse vector.

    ``cals`` is either a sequence aligned with bit positions or a mapping from
    physical qubit to calibration (the counts' ``qubits`` provide the labels).
    After each qubit, entries with magnitude below ``threshold_shots / shots``
    are dropped. No renormalisation is done. ``order`` permutes the bit
    positions visited (all orders agree when the threshold is 0).
    """
    if threshold_shots < 0:
        raise ValueError("threshold_shots must be non-negative")
    if isinstance(counts, CountsTable):
        shots = counts.shots if shots is None else shots
        qubits = counts.qubits or qubits
        quasi = QuasiDistribution.from_counts(counts)
    else:
        quasi = counts
        if shots is None and threshold_shots > 0:
            raise ValueError("shots must be given to threshold a quasi-distribution")
    m = quasi.num_bits
    invs = _inverses(cals, qubits, m)
    cut = threshold_shots / shots if threshold_shots > 0 else 0.0
    idx, val = quasi.indices, quasi.probs
    for pos in (range(m) if order is None else order):
        idx, val = apply_local_inverse(idx, val, invs[pos], m - 1 - pos)
        keep = np.abs(val) >= cut if cut > 0 else val != 0
        idx, val = idx[keep], val[keep]
    return QuasiDistribution(idx, val, m)


def simplex_projection(v) -> np.ndarray:
    """Euclidean projection of a vector onto the probability simplex (sort-based)."""
    v = np.asarray(v, dtype=float)
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("values must be finite")
    mu = np.sort(v)[::-1]
    css = np.cumsum(mu) - 1.0
    k = np.arange(1, v.size + 1)
    rho = np.nonzero(mu - css / k > 0)[0][-1]
    tau = css[rho] / (rho + 1)
    return np.maximum(v - tau, 0.0)


def project_to_simplex(quasi: QuasiDistribution | Sequence[float] | np.ndarray):
    """Closest probability vector; for a ``QuasiDistribution`` the support is kept."""
    if not isinstance(quasi, QuasiDistribution):
        return simplex_projection(quasi)
    p = simplex_projection(quasi.probs)
    keep = p > 0
    return QuasiDistribution(quasi.indices[keep], p[keep], quasi.num_bits)


def mitigate(counts: CountsTable, cals, threshold_shots: float = DEFAULT_THRESHOLD_SHOTS) -> QuasiDistribution:
    return project_to_simplex(invert_readout(counts, cals, threshold_shots))


def post_select_parity(counts: CountsTable, ancilla_positions: Sequence[int]) -> tuple[CountsTable, float]:
    """Keep shots whose ancilla bits are all 0 and drop those bits."""
    width = counts.num_bits
    pos = sorted(set(ancilla_positions))
    if any(not 0 <= p < width for p in pos):
        raise ValueError(f"ancilla positions {pos} out of range for {width} bits")
    keep_pos = [k for k in range(width) if k not in pos]
    kept: dict[str, int] = {}
    for key, n in counts.counts.items():
        if all(key[p] == "0" for p in pos):
            data = "".join(key[k] for k in keep_pos)
            kept[data] = kept.get(data, 0) + n
    total = sum(kept.values())
    if total == 0:
        raise EmptyResultError("post-selection discarded every shot")
    qubits = tuple(counts.qubits[k] for k in keep_pos) if counts.qubits else ()
    return CountsTable(kept, total, qubits), total / counts.shots


def measure_calibration(noise, qubits: Sequence[int], shots: int, seed=0,
                        qubit_count: int | None = None) -> dict[int, CalibrationMatrix]:
    """Estimate per-qubit confusion from all-zeros and all-ones preparations."""
    from .circuit import calibration_circuits
    from .simulator import run_shots

    if shots < 1:
        raise ValueError("shots must be positive")
    qs = tuple(qubits)
    n = qubit_count if qubit_count is not None else max(qs) + 1
    zero, one = calibration_circuits(n, qs)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    seeds = [np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (i,)) for i in (0, 1)]
    c0 = run_shots(zero, noise, shots, seeds[0])
    c1 = run_shots(one, noise, shots, seeds[1])
    out = {}
    for k, q in enumerate(qs):
        f10 = sum(v for key, v in c0.counts.items() if key[k] == "1") / shots
        f01 = sum(v for key, v in c1.counts.items() if key[k] == "0") / shots
        cal = CalibrationMatrix.from_flips(f10, f01, q)
        if abs(cal.determinant) < 1e-6:
            raise CalibrationError(f"degenerate calibration estimate for qubit {q}")
        out[q] = cal
    return out


def tensor_confusion(cals: Sequence[CalibrationMatrix | np.ndarray]) -> np.ndarray:
    """Dense tensor product; the first matrix acts on the leftmost bit."""
    full = np.ones((1, 1))
    for c in cals:
        full = np.kron(full, np.asarray(getattr(c, "matrix", c)))
    return full


def save_calibrations(path: str | Path, cals: Mapping[int, CalibrationMatrix]) -> None:
    Path(path).write_text(json.dumps([{"qubit": q, "matrix": c.matrix.tolist()} for q, c in sorted(cals.items())],
                                     indent=1))


def load_calibrations(path: str | Path) -> dict[int, CalibrationMatrix]:
    raw = json.loads(Path(path).read_text())
    return {int(e["qubit"]): CalibrationMatrix(np.array(e["matrix"]), int(e["qubit"])) for e in raw}


def save_counts(path: str | Path, counts: CountsTable) -> None:
    Path(path).write_text(json.dumps(counts.to_json()))


def load_counts(path: str | Path) -> CountsTable:
    return CountsTable.from_json(json.loads(Path(path).read_text()))
