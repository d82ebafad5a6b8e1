"""Exact density-matrix evolution of the GHZ experiment for small registers.

The oracle shares only the noise *placement* with the trajectory engine
(``compile_program``); the evolution itself is independent: unitaries by
tensor contraction on both sides, depolarising noise through the identity
``(1-p) rho + p/3 sum_P P rho P = (1 - 4p/3) rho + 4p/3 Tr_q(rho) (x) 1/2``
(and its two-qubit analogue with 16/15), dephasing by damping coherences.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .analysis import OverlapCurve, fidelity, mqc_amplitudes, phase_grid
from .circuit import Circuit, mqc_circuit, population_circuit
from .simulator import NoiseModel, compile_program

MAX_DATA_QUBITS = 8
MAX_TOTAL_QUBITS = 10

_MATS = {
    "H": np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
}
_CNOT = np.array([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 0, 1], [0, 0, 1, 0]], dtype=complex)  # (control, target)


def _gate_matrix(gate) -> np.ndarray:
    if gate.kind == "RZ":
        return np.diag([np.exp(-0.5j * gate.angle), np.exp(0.5j * gate.angle)])
    if gate.kind == "CNOT":
        return _CNOT
    return _MATS[gate.kind]


class DensityMatrix:
    """rho as a tensor with axes (row bits, column bits); qubit q sits at row axis n-1-q."""

    def __init__(self, n: int):
        self.n = n
        rho = np.zeros((1 << n, 1 << n), dtype=complex)
        rho[0, 0] = 1.0
        self.t = rho.reshape((2,) * (2 * n))

    def _row(self, q):
        return self.n - 1 - q

    def _col(self, q):
        return 2 * self.n - 1 - q

    def matrix(self) -> np.ndarray:
        d = 1 << self.n
        return self.t.reshape(d, d)

    def _contract(self, mat, axes, conj=False):
        k = len(axes)
        m = mat.conj() if conj else mat
        m = m.reshape((2,) * (2 * k))
        out = np.tensordot(m, self.t, axes=(list(range(k, 2 * k)), list(axes)))
        self.t = np.moveaxis(out, list(range(k)), list(axes))

    def unitary(self, mat, qubits):
        self._contract(mat, [self._row(q) for q in qubits])
        self._contract(mat, [self._col(q) for q in qubits], conj=True)

    def depolarize(self, qubits, p):
        k = len(qubits)
        lam = p * 4 ** k / (4 ** k - 1)
        sel = [self._row(q) for q in qubits] + [self._col(q) for q in qubits]
        rest = [a for a in range(2 * self.n) if a not in sel]
        perm = rest + sel
        blocks = np.transpose(self.t, perm).reshape(-1, 2 ** k, 2 ** k)
        red = np.trace(blocks, axis1=1, axis2=2)
        full = red[:, None, None] * (np.eye(2 ** k) / 2 ** k)
        full = full.reshape([2] * len(rest) + [2] * (2 * k))
        self.t = (1 - lam) * self.t + lam * np.transpose(full, np.argsort(perm))

    def dephase(self, q, p):
        idx = [slice(None)] * (2 * self.n)
        for a, b in ((0, 1), (1, 0)):
            idx[self._row(q)], idx[self._col(q)] = a, b
            self.t[tuple(idx)] *= 1 - 2 * p

    def diagonal(self) -> np.ndarray:
        return np.real(np.diagonal(self.matrix())).copy()


def evolve(circuit: Circuit, noise: NoiseModel | None):
    """Final density tensor and the compiled program (for qubit bookkeeping)."""
    program = compile_program(circuit, noise)
    if program.num_qubits > MAX_TOTAL_QUBITS:
        raise ValueError(f"exact evolution is limited to {MAX_TOTAL_QUBITS} qubits")
    rho = DensityMatrix(program.num_qubits)
    for op in program.ops:
        if op.kind == "gate":
            rho.unitary(_gate_matrix(op.gate), op.qubits)
        elif op.kind in ("pauli1", "pauli2"):
            rho.depolarize(op.qubits, op.p)
        elif op.kind == "dephase":
            rho.dephase(op.qubits[0], op.p)
        elif op.kind == "rz":
            for q in op.qubits:
                rho.unitary(np.diag([np.exp(-0.5j * op.angle), np.exp(0.5j * op.angle)]), (q,))
    return rho, program


def outcome_distribution(circuit: Circuit, noise: NoiseModel | None = None) -> np.ndarray:
    """Exact distribution over the measured bits, readout confusion included."""
    noise = noise or NoiseModel()
    rho, program = evolve(circuit, noise)
    n, meas = program.num_qubits, program.measured
    diag = rho.diagonal().reshape((2,) * n)
    axes = [n - 1 - q for q in meas]
    drop = tuple(a for a in range(n) if a not in axes)
    t = diag.sum(axis=drop) if drop else diag
    kept = [a for a in range(n) if a not in drop]
    t = np.transpose(t, [kept.index(a) for a in axes])
    for k, q in enumerate(circuit.measured_qubits):
        cal = noise.readout.get(q)
        if cal is not None:
            t = np.moveaxis(np.tensordot(cal.matrix, t, axes=([1], [k])), 0, k)
    return t.reshape(-1)


def _postselect(dist: np.ndarray, n_data: int, n_anc: int) -> tuple[np.ndarray, float]:
    t = dist.reshape(1 << n_data, 1 << n_anc)
    kept = t[:, 0]
    acc = float(kept.sum())
    return kept / acc, acc


@dataclass(frozen=True)
class ExactFidelity:
    P: float
    C: float
    F: float
    s_values: np.ndarray
    I_spectrum: np.ndarray
    retention: float
    F_state: float
    P_state: float
    C_state: float


def encoded_state(plan, noise: NoiseModel | None, with_parity: bool) -> np.ndarray:
    """Density matrix of the data register after encoding (and accepted parity checks)."""
    circ = population_circuit(plan, with_parity)
    rho, program = evolve(circ, noise)
    n = program.num_qubits
    local = {q: i for i, q in enumerate(program.physical)}
    data = [local[q] for q in plan.data_qubits]
    anc = [local[q] for q in plan.ancillas] if with_parity else []
    t = rho.t
    idx = [slice(None)] * (2 * n)
    for a in anc:
        idx[n - 1 - a] = 0
        idx[2 * n - 1 - a] = 0
    t = t[tuple(idx)]
    remaining = [q for q in range(n) if q not in anc]
    if sorted(remaining) != sorted(data):
        raise ValueError("plan circuit touches qubits outside data and ancillas")
    m = len(remaining)
    # order so that data qubit plan.data_qubits[0] is the most significant bit
    order = [m - 1 - remaining.index(q) for q in data]
    t = np.transpose(t, order + [m + a for a in order])
    d = 1 << m
    mat = t.reshape(d, d)
    return mat / np.real(np.trace(mat))


def exact_density_fidelity(plan, noise: NoiseModel | None = None, with_parity: bool = False) -> ExactFidelity:
    """Exact P, S_phi grid, I_q, C and F of the circuit-level experiment, plus state-level values."""
    n = plan.size
    if n > MAX_DATA_QUBITS:
        raise ValueError(f"exact oracle supports at most {MAX_DATA_QUBITS} data qubits, got {n}")
    noise = noise or NoiseModel()
    n_anc = len(plan.ancillas) if with_parity else 0
    pop, retention = _postselect(outcome_distribution(population_circuit(plan, with_parity), noise), n, n_anc)
    p = float(pop[0] + pop[-1])
    s = []
    for phi in phase_grid(n):
        dist, _ = _postselect(outcome_distribution(mqc_circuit(plan, float(phi), with_parity), noise), n, n_anc)
        s.append(float(dist[0]))
    curve = OverlapCurve(n, np.array(s))
    spec = mqc_amplitudes(curve)
    c = 2 * math.sqrt(spec[n])
    rho = encoded_state(plan, noise, with_parity)
    corner = rho[-1, 0]
    p_state = float(np.real(rho[0, 0] + rho[-1, -1]))
    c_state = float(2 * abs(corner))
    return ExactFidelity(p, c, fidelity(p, c), curve.s_values, spec, retention,
                         float(np.real(0.5 * (rho[0, 0] + rho[-1, -1]) + np.real(corner))), p_state, c_state)
