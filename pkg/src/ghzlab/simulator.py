"""Dense statevector engine with Pauli-trajectory noise and shot sampling.

Qubits of a circuit are relabelled to local indices ``0..n-1`` in ascending
physical order; amplitude index bit ``k`` is local qubit ``k``. Batched
kernels act on arrays of shape ``(B, 2**n)``, one trajectory per row.

Noise (see ``NoiseModel``) is placed on the ASAP moments of the circuit:
after each single-qubit gate a uniformly random X/Y/Z with probability
``p1``; after each CNOT one of the 15 non-identity two-qubit Paulis with
probability ``p2``; on every active qubit idle in a moment a Z with
probability ``p_idle_z`` and a deterministic ``RZ(drift)``. Readout flips
each measured bit independently according to its confusion matrix.
"""
from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .circuit import Circuit, Gate
from .mitigation import CalibrationMatrix, CountsTable

DEFAULT_MAX_QUBITS = 24
CHUNK_SHOTS = 8192
_BATCH_AMPLITUDES = 1 << 21
_R2 = 1 / math.sqrt(2)

# two-qubit Pauli code c in 1..15: (c // 4, c % 4) with 0=I, 1=X, 2=Y, 3=Z
_PAULI_NAMES = "IXYZ"


class ResourceError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseModel:
    p1: float = 0.0
    p2: float = 0.0
    p_idle_z: float = 0.0
    drift: float = 0.0
    readout: Mapping[int, CalibrationMatrix] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("p1", "p2", "p_idle_z"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if not math.isfinite(self.drift):
            raise ValueError("drift must be finite")
        ro = {int(q): (c if isinstance(c, CalibrationMatrix) else CalibrationMatrix(np.asarray(c), int(q)))
              for q, c in dict(self.readout).items()}
        object.__setattr__(self, "readout", ro)

    @classmethod
    def demo(cls, readout: Mapping[int, CalibrationMatrix] | None = None) -> "NoiseModel":
        """Illustrative defaults; not fitted to any device."""
        return cls(0.001, 0.01, 0.002, 0.01, readout or {})

    @classmethod
    def uniform_readout(cls, qubits, p10: float, p01: float, **kw) -> "NoiseModel":
        return cls(readout={q: CalibrationMatrix.from_flips(p10, p01, q) for q in qubits}, **kw)

    def flip_probs(self, q: int) -> tuple[float, float]:
        """(p(1|0), p(0|1)) for physical qubit ``q``."""
        c = self.readout.get(q)
        return (0.0, 0.0) if c is None else (c.p10, c.p01)

    @property
    def is_noiseless(self) -> bool:
        return (self.p1 == self.p2 == self.p_idle_z == 0.0 and self.drift == 0.0
                and all(c.p10 == 0 and c.p01 == 0 for c in self.readout.values()))

    def to_json(self) -> dict:
        return {"p1": self.p1, "p2": self.p2, "p_idle_z": self.p_idle_z, "drift": self.drift,
                "readout": [c.to_json() | {"qubit": q} for q, c in sorted(self.readout.items())]}

    @classmethod
    def from_json(cls, raw: dict) -> "NoiseModel":
        ro = {int(e["qubit"]): CalibrationMatrix(np.array(e["matrix"]), int(e["qubit"]))
              for e in raw.get("readout", [])}
        return cls(float(raw.get("p1", 0)), float(raw.get("p2", 0)), float(raw.get("p_idle_z", 0)),
                   float(raw.get("drift", 0)), ro)


# ------------------------------------------------------------ noise schedule

@dataclass(frozen=True)
class Op:
    """One step of a compiled program on local qubits.

    kind: "gate" (gate on local operands), "pauli1"/"pauli2" (stochastic
    error location with probability ``p``), "dephase" (Z with probability
    ``p``) or "rz" (deterministic rotation by ``angle`` on each listed qubit).
    """

    kind: str
    qubits: tuple[int, ...]
    gate: Gate | None = None
    p: float = 0.0
    angle: float = 0.0


@dataclass(frozen=True)
class Program:
    num_qubits: int
    physical: tuple[int, ...]
    ops: tuple[Op, ...]
    measured: tuple[int, ...]  # local indices, leftmost output bit first

    @property
    def error_ops(self) -> list[int]:
        return [i for i, op in enumerate(self.ops) if op.kind in ("pauli1", "pauli2", "dephase")]


def compile_program(circuit: Circuit, noise: NoiseModel | None = None,
                    max_qubits: int = DEFAULT_MAX_QUBITS) -> Program:
    noise = noise or NoiseModel()
    physical = circuit.active_qubits
    n = len(physical)
    if n > max_qubits:
        raise ResourceError(f"circuit touches {n} qubits, above the cap of {max_qubits}")
    local = {q: i for i, q in enumerate(physical)}
    ops: list[Op] = []
    for moment in circuit.moments():
        busy = set()
        for g in moment:
            qs = tuple(local[q] for q in g.qubits)
            busy.update(qs)
            ops.append(Op("gate", qs, Gate(g.kind, qs, g.angle)))
            if len(qs) == 1 and noise.p1 > 0:
                ops.append(Op("pauli1", qs, p=noise.p1))
            elif len(qs) == 2 and noise.p2 > 0:
                ops.append(Op("pauli2", qs, p=noise.p2))
        idle = tuple(q for q in range(n) if q not in busy)
        if noise.p_idle_z > 0:
            ops.extend(Op("dephase", (q,), p=noise.p_idle_z) for q in idle)
        if noise.drift != 0 and idle:
            ops.append(Op("rz", idle, angle=noise.drift))
    return Program(n, physical, tuple(ops), tuple(local[q] for q in circuit.measured_qubits))


# -------------------------------------------------------------- gate kernels

def _views(t: np.ndarray, q: int, n: int):
    ax = 1 + (n - 1 - q)
    lead = (slice(None),) * ax
    return t[lead + (0,)], t[lead + (1,)]


def _k_h(t, q, n):
    a, b = _views(t, q, n)
    s = a + b
    b[...] = (a - b) * _R2
    a[...] = s * _R2


def _k_x(t, q, n):
    a, b = _views(t, q, n)
    tmp = a.copy()
    a[...] = b
    b[...] = tmp


def _k_y(t, q, n):
    a, b = _views(t, q, n)
    tmp = a.copy()
    a[...] = -1j * b
    b[...] = 1j * tmp


def _k_z(t, q, n):
    _views(t, q, n)[1][...] *= -1


def _k_rz(t, q, n, theta):
    a, b = _views(t, q, n)
    a *= complex(math.cos(theta / 2), -math.sin(theta / 2))
    b *= complex(math.cos(theta / 2), math.sin(theta / 2))


def _k_cnot(t, c, tq, n):
    _, sub = _views(t, c, n)
    # sub drops the control axis; re-index the target inside it
    ax_c, ax_t = 1 + (n - 1 - c), 1 + (n - 1 - tq)
    ax = ax_t - 1 if ax_t > ax_c else ax_t
    lead = (slice(None),) * ax
    a, b = sub[lead + (0,)], sub[lead + (1,)]
    tmp = a.copy()
    a[...] = b
    b[...] = tmp


_PAULI_KERNELS = {1: _k_x, 2: _k_y, 3: _k_z}


def apply_gate_batch(t: np.ndarray, gate: Gate, n: int) -> None:
    """In place on a ``(B, 2, ..., 2)`` tensor view."""
    k = gate.kind
    if k == "H":
        _k_h(t, gate.qubits[0], n)
    elif k == "X":
        _k_x(t, gate.qubits[0], n)
    elif k == "RZ":
        _k_rz(t, gate.qubits[0], n, gate.angle)
    elif k == "CNOT":
        _k_cnot(t, gate.qubits[0], gate.qubits[1], n)
    else:
        raise ValueError(f"unsupported gate {k}")


def apply_pauli_batch(t: np.ndarray, code: int, qubits: tuple[int, ...], n: int) -> None:
    if len(qubits) == 1:
        _PAULI_KERNELS[code](t, qubits[0], n)
        return
    pa, pb = divmod(code, 4)
    if pa:
        _PAULI_KERNELS[pa](t, qubits[0], n)
    if pb:
        _PAULI_KERNELS[pb](t, qubits[1], n)


# ------------------------------------------------------------- statevector

@dataclass
class StateVector:
    qubit_count: int
    amplitudes: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=complex).ravel()
        if self.amplitudes.size != 1 << self.qubit_count:
            raise ValueError("amplitude count must be 2**qubit_count")

    @classmethod
    def zero(cls, n: int) -> "StateVector":
        amp = np.zeros(1 << n, dtype=complex)
        amp[0] = 1.0
        return cls(n, amp)

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def probabilities(self) -> np.ndarray:
        return np.abs(self.amplitudes) ** 2


def apply_gate(state: StateVector, gate: Gate) -> StateVector:
    n = state.qubit_count
    for q in gate.qubits:
        if not 0 <= q < n:
            raise ValueError(f"operand {q} out of range for {n} qubits")
    amp = state.amplitudes.copy()
    apply_gate_batch(amp.reshape((1,) + (2,) * n), gate, n)
    return StateVector(n, amp)


def simulate_statevector(circuit: Circuit) -> StateVector:
    """Noiseless final state on the circuit's ``qubit_count`` qubits."""
    n = circuit.qubit_count
    if n > DEFAULT_MAX_QUBITS:
        raise ResourceError(f"{n} qubits exceeds the cap; use compile_program for active-qubit simulation")
    state = StateVector.zero(n)
    t = state.amplitudes.reshape((1,) + (2,) * n)
    for g in circuit.gates:
        apply_gate_batch(t, g, n)
    return state


def marginal_probabilities(probs: np.ndarray, n: int, measured: tuple[int, ...]) -> np.ndarray:
    """``(B, 2**n)`` probabilities to ``(B, 2**M)`` over the measured bits.

    Output index bit ``M-1-k`` is measured qubit ``measured[k]``.
    """
    b = probs.shape[0]
    t = probs.reshape((b,) + (2,) * n)
    axes = [1 + (n - 1 - q) for q in measured]
    drop = tuple(a for a in range(1, n + 1) if a not in axes)
    if drop:
        t = t.sum(axis=drop)
        remaining = [a for a in range(1, n + 1) if a not in drop]
        axes = [remaining.index(a) + 1 for a in axes]
    t = np.transpose(t, [0] + axes)
    return np.ascontiguousarray(t).reshape(b, 1 << len(measured))


def _diagonal_rz(n: int, qubits: tuple[int, ...], theta: float) -> np.ndarray:
    idx = np.arange(1 << n)
    ones = sum(((idx >> q) & 1) for q in qubits)
    return np.exp(1j * theta * (ones - len(qubits) / 2))


def run_program(program: Program, patterns: np.ndarray | None = None) -> np.ndarray:
    """Final amplitudes ``(B, 2**n)``; ``patterns[b, j]`` is the Pauli code at error op ``j``.

    Rows are processed in order of their first error: until then a row equals
    the error-free trajectory, so it is only materialised at that point.
    """
    n = program.num_qubits
    err = program.error_ops
    dim = 1 << n
    if patterns is None:
        patterns = np.zeros((1, len(err)), dtype=np.uint8)
    b = patterns.shape[0]
    err_col = {op_index: j for j, op_index in enumerate(err)}
    has = patterns != 0
    if len(err):
        first = np.where(has.any(axis=1), has.argmax(axis=1), len(err))
    else:
        first = np.zeros(b, dtype=np.int64)
    order = np.argsort(first, kind="stable")
    pats = patterns[order]
    first = first[order]
    # row 0 of the work array is always the error-free trajectory
    state = np.zeros((b + 1, dim), dtype=complex)
    state[0, 0] = 1.0
    start = np.searchsorted(first, np.arange(len(err) + 1))
    active = 1 + int(start[0])
    if active > 1:
        state[1:active] = state[0]
    diag_cache: dict[tuple, np.ndarray] = {}
    for i, op in enumerate(program.ops):
        view = state[:active].reshape((active,) + (2,) * n)
        if op.kind == "gate":
            apply_gate_batch(view, op.gate, n)
        elif op.kind == "rz":
            key = (op.qubits, op.angle)
            if key not in diag_cache:
                diag_cache[key] = _diagonal_rz(n, op.qubits, op.angle)
            state[:active] *= diag_cache[key]
        else:
            j = err_col[i]
            new_end = 1 + int(start[j + 1])
            if new_end > active:
                state[active:new_end] = state[0]
                active = new_end
            col = pats[:active - 1, j]
            hit = np.nonzero(col)[0]
            if hit.size == 0:
                continue
            for code in np.unique(col[hit]):
                rows = hit[col[hit] == code] + 1
                sub = state[rows].reshape((rows.size,) + (2,) * n)
                apply_pauli_batch(sub, 3 if op.kind == "dephase" else int(code), op.qubits, n)
                state[rows] = sub.reshape(rows.size, -1)
    if active < b + 1:
        state[active:] = state[0]
    out = np.empty((b, dim), dtype=complex)
    out[order] = state[1:]
    return out


def ideal_probabilities(circuit: Circuit, noise: NoiseModel | None = None,
                        max_qubits: int = DEFAULT_MAX_QUBITS) -> np.ndarray:
    """Exact outcome distribution over the measured bits with no stochastic errors.

    Deterministic drift from ``noise`` is kept; stochastic errors and readout
    are not applied.
    """
    program = compile_program(circuit, NoiseModel(drift=noise.drift) if noise else None, max_qubits)
    amp = run_program(program)
    return marginal_probabilities(np.abs(amp) ** 2, program.num_qubits, program.measured)[0]


def _thread_count() -> int:
    env = os.environ.get("GHZLAB_THREADS")
    if env:
        return max(1, int(env))
    return max(1, os.cpu_count() or 1)


def _chunk_rng(seed, k: int) -> np.random.Generator:
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.default_rng(np.random.SeedSequence(ss.entropy, spawn_key=tuple(ss.spawn_key) + (k,)))


def sample_patterns(program: Program, shots: int, rng: np.random.Generator) -> np.ndarray:
    err = [program.ops[i] for i in program.error_ops]
    if not err:
        return np.zeros((shots, 0), dtype=np.uint8)
    p = np.array([op.p for op in err])
    ncodes = np.array([3 if op.kind == "pauli1" else 15 if op.kind == "pauli2" else 1 for op in err])
    hit = rng.random((shots, len(err))) < p
    codes = 1 + (rng.random((shots, len(err))) * ncodes).astype(np.uint8)
    return np.where(hit, codes, 0).astype(np.uint8)


def dedup_patterns(patterns: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unique rows (first-occurrence order) and the row -> unique index map."""
    seen: dict[bytes, int] = {}
    inv = np.fromiter((seen.setdefault(row.tobytes(), len(seen)) for row in patterns),
                      dtype=np.int64, count=len(patterns))
    first = np.zeros(len(seen), dtype=np.int64)
    first[inv[::-1]] = np.arange(len(patterns))[::-1]
    return patterns[first], inv


def _pattern_distributions(program: Program, patterns: np.ndarray) -> np.ndarray:
    n, m = program.num_qubits, len(program.measured)
    rows = max(1, _BATCH_AMPLITUDES >> n)
    blocks = [patterns[i:i + rows] for i in range(0, max(len(patterns), 1), rows)]

    def work(block):
        amp = run_program(program, block)
        return marginal_probabilities(np.abs(amp) ** 2, n, program.measured)

    workers = min(_thread_count(), len(blocks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(work, blocks))
    else:
        parts = [work(b) for b in blocks]
    return np.concatenate(parts) if parts else np.zeros((0, 1 << m))


def run_shots(circuit: Circuit, noise: NoiseModel | None, shots: int, seed=0, dedup: bool = True,
              max_qubits: int = DEFAULT_MAX_QUBITS) -> CountsTable:
    """Sample ``shots`` trajectories and measure them.

    Each shot draws an error pattern and one uniform number for its outcome
    (inverse-CDF sampling from its trajectory's distribution), plus one per
    measured bit for readout flips. With ``dedup`` identical patterns are
    simulated once; the sampled shots are identical either way.
    """
    if shots < 1:
        raise ValueError("shots must be at least 1")
    noise = noise or NoiseModel()
    program = compile_program(circuit, noise, max_qubits)
    m = len(program.measured)
    flips = np.array([noise.flip_probs(q) for q in circuit.measured_qubits]).reshape(m, 2)
    outcomes = []
    for k, start in enumerate(range(0, shots, CHUNK_SHOTS)):
        s = min(CHUNK_SHOTS, shots - start)
        rng = _chunk_rng(seed, k)
        patterns = sample_patterns(program, s, rng)
        u = rng.random(s)
        r = rng.random((s, m))
        if dedup:
            uniq, inv = dedup_patterns(patterns)
        else:
            uniq, inv = patterns, np.arange(s)
        dist = _pattern_distributions(program, uniq)
        cdf = np.cumsum(dist, axis=1)
        out = np.empty(s, dtype=np.int64)
        order = np.argsort(inv, kind="stable")
        bounds = np.searchsorted(inv[order], np.arange(len(uniq) + 1))
        for j in range(len(uniq)):
            idx = order[bounds[j]:bounds[j + 1]]
            if idx.size:
                c = cdf[j]
                out[idx] = np.minimum(np.searchsorted(c, u[idx] * c[-1], side="right"), c.size - 1)
        bits = (out[:, None] >> (m - 1 - np.arange(m))) & 1
        p_flip = np.where(bits == 0, flips[:, 0], flips[:, 1])
        bits ^= (r < p_flip).astype(np.int64)
        outcomes.append((bits << (m - 1 - np.arange(m))).sum(axis=1))
    allout = np.concatenate(outcomes)
    keys, cnt = np.unique(allout, return_counts=True)
    counts = {format(int(k), f"0{m}b") if m else "": int(c) for k, c in zip(keys, cnt)}
    return CountsTable(counts, shots, circuit.measured_qubits)


def exact_density_fidelity(plan, noise: NoiseModel | None = None, with_parity: bool = False):
    """Exact density-matrix evaluation of the GHZ experiment; see ``density``."""
    from .density import exact_density_fidelity as _exact

    return _exact(plan, noise, with_parity)
