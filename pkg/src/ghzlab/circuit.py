"""Gate-level circuits for GHZ population and MQC overlap experiments."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable

from .device import EmbeddingPlan, schedule_layers

KINDS = ("H", "X", "CNOT", "RZ")


@dataclass(frozen=True)
class Gate:
    kind: str
    qubits: tuple[int, ...]
    angle: float | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown gate kind {self.kind!r}")
        n = 2 if self.kind == "CNOT" else 1
        if len(self.qubits) != n:
            raise ValueError(f"{self.kind} takes {n} operand(s), got {self.qubits}")
        if self.kind == "CNOT" and self.qubits[0] == self.qubits[1]:
            raise ValueError("CNOT operands must differ")
        if self.kind == "RZ":
            if self.angle is None or not math.isfinite(self.angle):
                raise ValueError("RZ needs a finite angle")
        elif self.angle is not None:
            raise ValueError(f"{self.kind} carries no angle")

    def inverse(self) -> "Gate":
        if self.kind == "RZ":
            return Gate("RZ", self.qubits, -self.angle)
        return self

    def to_json(self) -> dict:
        out = {"kind": self.kind, "q": list(self.qubits)}
        if self.angle is not None:
            out["angle"] = self.angle
        return out


def H(q: int) -> Gate:
    return Gate("H", (q,))


def X(q: int) -> Gate:
    return Gate("X", (q,))


def CNOT(c: int, t: int) -> Gate:
    return Gate("CNOT", (c, t))


def RZ(q: int, angle: float) -> Gate:
    return Gate("RZ", (q,), float(angle))


@dataclass(frozen=True)
class Circuit:
    """Gates on physical qubit labels; output bit ``k`` is ``measured_qubits[k]``."""

    qubit_count: int
    gates: tuple[Gate, ...]
    measured_qubits: tuple[int, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "gates", tuple(self.gates))
        object.__setattr__(self, "measured_qubits", tuple(self.measured_qubits))
        for g in self.gates:
            for q in g.qubits:
                if not 0 <= q < self.qubit_count:
                    raise ValueError(f"operand {q} out of range in {g}")
        if len(set(self.measured_qubits)) != len(self.measured_qubits):
            raise ValueError("measured qubits must be distinct")
        for q in self.measured_qubits:
            if not 0 <= q < self.qubit_count:
                raise ValueError(f"measured qubit {q} out of range")

    def __add__(self, other: "Circuit") -> "Circuit":
        return Circuit(max(self.qubit_count, other.qubit_count), self.gates + other.gates,
                       self.measured_qubits or other.measured_qubits)

    @property
    def active_qubits(self) -> tuple[int, ...]:
        qs = set(self.measured_qubits)
        for g in self.gates:
            qs.update(g.qubits)
        return tuple(sorted(qs))

    def cnot_count(self) -> int:
        return sum(g.kind == "CNOT" for g in self.gates)

    def cnot_depth(self) -> int:
        """Longest chain of CNOTs; single-qubit gates add no depth."""
        level: dict[int, int] = {}
        depth = 0
        for g in self.gates:
            if g.kind == "CNOT":
                c, t = g.qubits
                d = max(level.get(c, 0), level.get(t, 0)) + 1
                level[c] = level[t] = d
                depth = max(depth, d)
        return depth

    def moments(self) -> list[list[Gate]]:
        """ASAP layering: each gate lands one layer after the latest gate on its qubits."""
        level: dict[int, int] = {}
        out: list[list[Gate]] = []
        for g in self.gates:
            d = max((level.get(q, 0) for q in g.qubits), default=0)
            if d == len(out):
                out.append([])
            out[d].append(g)
            for q in g.qubits:
                level[q] = d + 1
        return out

    def with_measurement(self, qubits: Iterable[int]) -> "Circuit":
        return Circuit(self.qubit_count, self.gates, tuple(qubits))

    def to_json(self) -> str:
        return json.dumps({"qubits": self.qubit_count,
                           "gates": [g.to_json() for g in self.gates],
                           "measure": list(self.measured_qubits)})


def inverse(circuit: Circuit) -> Circuit:
    return Circuit(circuit.qubit_count, tuple(g.inverse() for g in reversed(circuit.gates)),
                   circuit.measured_qubits)


def _encoding_gates(plan: EmbeddingPlan, with_parity: bool) -> tuple[list[Gate], list[Gate]]:
    """(encoder+parity gates, encoder-only gates) from the joint schedule."""
    layers = schedule_layers(plan, include_parity_cnots=True) if with_parity and plan.parity_checks \
        else plan.cnot_layers
    ancillas = set(plan.ancillas)
    joint = [H(plan.root)]
    growth = [H(plan.root)]
    for layer in layers:
        for c, t in layer:
            joint.append(CNOT(c, t))
            if t not in ancillas:
                growth.append(CNOT(c, t))
    return joint, growth


def _measured(plan: EmbeddingPlan, with_parity: bool) -> tuple[int, ...]:
    return plan.data_qubits + (tuple(sorted(plan.ancillas)) if with_parity else ())


def ghz_encoder(plan: EmbeddingPlan) -> Circuit:
    _, growth = _encoding_gates(plan, False)
    return Circuit(plan.graph.qubit_count, tuple(growth), plan.data_qubits)


def population_circuit(plan: EmbeddingPlan, with_parity: bool = False) -> Circuit:
    joint, growth = _encoding_gates(plan, with_parity)
    gates = joint if with_parity else growth
    return Circuit(plan.graph.qubit_count, tuple(gates), _measured(plan, with_parity))


def mqc_circuit(plan: EmbeddingPlan, phi: float, with_parity: bool = False, refocus: bool = True) -> Circuit:
    """Encode, (parity checks), X on data, RZ(phi) on data, decode.

    ``refocus=False`` drops the X layer; only useful for checking that the
    refocusing pulse leaves noiseless statistics unchanged.
    """
    joint, growth = _encoding_gates(plan, with_parity)
    gates = list(joint if with_parity else growth)
    data = plan.data_qubits
    if refocus:
        gates += [X(q) for q in data]
    gates += [RZ(q, phi) for q in data]
    gates += [g.inverse() for g in reversed(growth)]
    return Circuit(plan.graph.qubit_count, tuple(gates), _measured(plan, with_parity))


def phase_grid(n: int) -> list[float]:
    """The 2N+2 rotation angles pi*j/(N+1)."""
    return [math.pi * j / (n + 1) for j in range(2 * n + 2)]


def mqc_circuits(plan: EmbeddingPlan, with_parity: bool = False) -> list[Circuit]:
    return [mqc_circuit(plan, phi, with_parity) for phi in phase_grid(plan.size)]


def calibration_circuits(qubit_count: int, qubits: Iterable[int]) -> tuple[Circuit, Circuit]:
    """All-zeros and all-ones preparations measured on ``qubits``."""
    qs = tuple(qubits)
    zero = Circuit(qubit_count, (), qs)
    one = Circuit(qubit_count, tuple(X(q) for q in qs), qs)
    return zero, one
