"""Coupling graphs, GHZ embeddings and CNOT layer scheduling.

The bundled ``montreal27.json`` is the 27-qubit heavy-hexagon device. Two
fixed embeddings grow GHZ states on it (sizes 11-19 rooted at qubit 2, and
sizes 19-27 rooted at qubit 13), optionally with parity-check ancillas.
A small ring embedding is provided for desk-scale simulation.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

Edge = tuple[int, int]
Cnot = tuple[int, int]  # (control, target)
Layer = tuple[Cnot, ...]


class DeviceError(ValueError):
    """Raised for malformed device files or invalid graphs."""


class EmbeddingError(ValueError):
    """Raised for unsupported (embedding, size, parity) combinations."""


@dataclass(frozen=True)
class CouplingGraph:
    qubit_count: int
    edges: frozenset[frozenset[int]]
    name: str = ""

    def __post_init__(self):
        for e in self.edges:
            pair = sorted(e)
            if len(pair) != 2:
                raise DeviceError(f"self-loop on qubit {pair[0]}")
            a, b = pair
            if not (0 <= a < self.qubit_count and 0 <= b < self.qubit_count):
                raise DeviceError(f"edge ({a},{b}) out of range for {self.qubit_count} qubits")

    @classmethod
    def from_edges(cls, qubit_count: int, edges: Iterable[Sequence[int]], name: str = "") -> "CouplingGraph":
        seen: set[frozenset[int]] = set()
        for e in edges:
            a, b = int(e[0]), int(e[1])
            if a == b:
                raise DeviceError(f"self-loop on qubit {a} in edge ({a},{b})")
            key = frozenset((a, b))
            if key in seen:
                raise DeviceError(f"duplicate edge ({a},{b})")
            seen.add(key)
        return cls(qubit_count, frozenset(seen), name)

    def has_edge(self, a: int, b: int) -> bool:
        return frozenset((a, b)) in self.edges

    def neighbors(self, q: int) -> list[int]:
        return sorted(x for e in self.edges if q in e for x in e if x != q)

    def is_connected(self) -> bool:
        if self.qubit_count == 0:
            return True
        seen, stack = {0}, [0]
        while stack:
            v = stack.pop()
            for w in self.neighbors(v):
                if w not in seen:
                    seen.add(w)
                    stack.append(w)
        return len(seen) == self.qubit_count

    def sorted_edges(self) -> list[Edge]:
        return sorted(tuple(sorted(e)) for e in self.edges)


def load_device(path: str | Path) -> CouplingGraph:
    try:
        raw = json.loads(Path(path).read_text())
        return CouplingGraph.from_edges(int(raw["qubits"]), raw["edges"], str(raw.get("name", "")))
    except (OSError, json.JSONDecodeError, KeyError, TypeError, IndexError) as exc:
        raise DeviceError(f"cannot parse device file {path}: {exc}") from exc


def bundled_device_path() -> Path:
    return Path(str(resources.files("ghzlab") / "data" / "montreal27.json"))


@lru_cache(maxsize=1)
def montreal27() -> CouplingGraph:
    return load_device(bundled_device_path())


def ring_graph(n: int) -> CouplingGraph:
    """Cycle on ``n`` qubits."""
    return CouplingGraph.from_edges(n, [(i, (i + 1) % n) for i in range(n)], f"ring{n}")


@dataclass(frozen=True)
class EmbeddingPlan:
    """A GHZ growth tree on a coupling graph.

    ``growth_cnots`` lists the growth CNOTs in their preferred (caption)
    order; ``cnot_layers`` is the minimum-depth schedule of the growth CNOTs
    alone. Parity checks are ``(ancilla, control_a, control_b)``.

    ``parity_mode`` selects how parity CNOTs enter the schedule: "parallel"
    schedules them jointly with growth; "after" keeps the encoder layering
    of ``reference_cnots`` (a larger plan of the same family) and appends
    each parity CNOT once its control has finished growing.
    """

    graph: CouplingGraph
    embedding_id: str
    root: int
    growth_cnots: tuple[Cnot, ...]
    parity_checks: tuple[tuple[int, int, int], ...] = ()
    parity_mode: str = "parallel"
    reference_cnots: tuple[Cnot, ...] = ()
    base_size: int = 0
    cnot_layers: tuple[Layer, ...] = field(default=(), compare=False)

    def __post_init__(self):
        grown = {self.root}
        for c, t in self.growth_cnots:
            if not self.graph.has_edge(c, t):
                raise EmbeddingError(f"CNOT ({c},{t}) is not a device edge")
            if c not in grown:
                raise EmbeddingError(f"CNOT ({c},{t}) uses control {c} before it joins the state")
            if t in grown:
                raise EmbeddingError(f"qubit {t} targeted twice")
            grown.add(t)
        for anc, a, b in self.parity_checks:
            if anc in grown:
                raise EmbeddingError(f"parity ancilla {anc} is a data qubit")
            for c in (a, b):
                if c not in grown or not self.graph.has_edge(c, anc):
                    raise EmbeddingError(f"parity control {c} invalid for ancilla {anc}")
        if self.parity_mode not in ("parallel", "after"):
            raise EmbeddingError(f"unknown parity mode {self.parity_mode!r}")
        if not self.cnot_layers:
            object.__setattr__(self, "cnot_layers", tuple(schedule_layers(self, include_parity_cnots=False)))

    @property
    def size(self) -> int:
        return len(self.growth_cnots) + 1

    @property
    def data_qubits(self) -> tuple[int, ...]:
        """Data qubits in ascending physical index (the bit-string order)."""
        return tuple(sorted(self.growth_order))

    @property
    def growth_order(self) -> tuple[int, ...]:
        return (self.root,) + tuple(t for _, t in self.growth_cnots)

    @property
    def ancillas(self) -> tuple[int, ...]:
        return tuple(anc for anc, _, _ in self.parity_checks)

    @property
    def parity_cnots(self) -> tuple[Cnot, ...]:
        return tuple((c, anc) for anc, a, b in self.parity_checks for c in (a, b))


# Embedding 1: root 2, arms 2-1-4-7-10-12 and 2-3-5-8-11-14, ancilla 13.
_EMB1_BASE: tuple[Cnot, ...] = (
    (2, 1), (2, 3), (1, 4), (3, 5), (4, 7), (5, 8), (7, 10), (8, 11), (10, 12), (11, 14),
)
_EMB1_GROWTH: tuple[Cnot, ...] = (
    (12, 15), (14, 16), (15, 18), (16, 19), (18, 21), (19, 22), (21, 23), (22, 25),
)
_EMB1_PARITY = ((13, 12, 14),)

# Embedding 2: root 13, four branches ending at 1, 3, 23, 25; ancillas 2 and 24.
_EMB2_BASE: tuple[Cnot, ...] = (
    (13, 12), (13, 14), (12, 10), (12, 15), (14, 11), (14, 16),
    (10, 7), (15, 18), (11, 8), (16, 19),
    (7, 4), (18, 21), (8, 5), (19, 22),
    (4, 1), (21, 23), (5, 3), (22, 25),
)
# Qubit 24 is reached from 25: from 23 the 27-qubit state cannot reach depth 7.
_EMB2_GROWTH: tuple[Cnot, ...] = (
    (8, 9), (7, 6), (19, 20), (18, 17), (1, 0), (25, 26), (3, 2), (25, 24),
)
_EMB2_PARITY = ((2, 1, 3), (24, 23, 25))

EMBEDDING_SIZES = {1: range(11, 20), 2: range(19, 28)}
PARITY_SIZES = {1: range(11, 20), 2: range(19, 26)}


def build_embedding(graph: CouplingGraph, embedding_id: int, size: int, with_parity: bool = False) -> EmbeddingPlan:
    if embedding_id not in EMBEDDING_SIZES:
        raise EmbeddingError(f"unknown embedding {embedding_id!r}")
    if size not in EMBEDDING_SIZES[embedding_id]:
        lo, hi = EMBEDDING_SIZES[embedding_id][0], EMBEDDING_SIZES[embedding_id][-1]
        raise EmbeddingError(f"embedding {embedding_id} admits sizes {lo}-{hi}, got {size}")
    if with_parity and size not in PARITY_SIZES[embedding_id]:
        raise EmbeddingError(f"embedding {embedding_id} has no parity variant at size {size}")
    if embedding_id == 1:
        base, growth, parity, root, n0 = _EMB1_BASE, _EMB1_GROWTH, _EMB1_PARITY, 2, 11
    else:
        base, growth, parity, root, n0 = _EMB2_BASE, _EMB2_GROWTH, _EMB2_PARITY, 13, 19
    cnots = base + growth[: size - n0]
    if embedding_id == 1:
        return EmbeddingPlan(graph, "1", root, cnots, parity if with_parity else (), base_size=n0)
    last = PARITY_SIZES[2][-1]
    return EmbeddingPlan(graph, "2", root, cnots, parity if with_parity else (), parity_mode="after",
                         reference_cnots=base + growth[: last - n0], base_size=n0)


def ring_embedding(size: int, with_parity: bool = False) -> EmbeddingPlan:
    """GHZ on a line grown outward from its middle; the ancilla closes the ring.

    Mirrors embedding 1 at small scale: the parity ancilla (qubit ``size``)
    checks the two ends of the arms.
    """
    if size < 2:
        raise EmbeddingError("ring embedding needs at least 2 data qubits")
    if with_parity and size < 3:
        raise EmbeddingError("ring parity check needs at least 3 data qubits")
    graph = ring_graph(size + 1) if with_parity or size > 2 else CouplingGraph.from_edges(2, [(0, 1)], "line2")
    root = (size - 1) // 2
    cnots: list[Cnot] = []
    left, right = root - 1, root + 1
    while left >= 0 or right < size:
        if left >= 0:
            cnots.append((left + 1, left))
            left -= 1
        if right < size:
            cnots.append((right - 1, right))
            right += 1
    parity = ((size, 0, size - 1),) if with_parity else ()
    return EmbeddingPlan(graph, "ring", root, tuple(cnots), parity)


# ---------------------------------------------------------------- scheduling

def _dependencies(plan: EmbeddingPlan, include_parity: bool):
    gates: list[Cnot] = list(plan.growth_cnots)
    kinds = ["growth"] * len(gates)
    if include_parity:
        gates += list(plan.parity_cnots)
        kinds += ["parity"] * len(plan.parity_cnots)
    producer = {t: i for i, (_, t) in enumerate(plan.growth_cnots)}
    preds: list[tuple[int, ...]] = []
    last_on_ancilla: dict[int, int] = {}
    for i, ((c, t), kind) in enumerate(zip(gates, kinds)):
        p = [producer[c]] if c in producer else []
        if kind == "parity":
            if t in last_on_ancilla:
                p.append(last_on_ancilla[t])
            last_on_ancilla[t] = i
        preds.append(tuple(p))
    return gates, kinds, preds


def _lower_bound(gates, preds, done: int) -> int:
    """Layers still needed, by optimal tree broadcast of the pending gates."""
    children: dict[int, list[int]] = {}
    for i, (c, _) in enumerate(gates):
        if not done >> i & 1:
            children.setdefault(c, []).append(i)
    memo: dict[int, int] = {}

    def span(q: int) -> int:
        if q in memo:
            return memo[q]
        times = sorted((span(gates[i][1]) for i in children.get(q, ())), reverse=True)
        memo[q] = max((k + 1 + t for k, t in enumerate(times)), default=0)
        return memo[q]

    bound = 0
    pending_on: dict[int, int] = {}
    for i, (c, t) in enumerate(gates):
        if done >> i & 1:
            continue
        pending_on[t] = pending_on.get(t, 0) + 1
        if all(done >> p & 1 for p in preds[i]) or not preds[i]:
            bound = max(bound, span(c))
    return max([bound] + list(pending_on.values()))


def _maximal_layers(ready: list[int], gates) -> Iterable[tuple[int, ...]]:
    """Maximal qubit-disjoint subsets of ``ready``, earliest-listed first."""

    def rec(k: int, chosen: tuple[int, ...], busy: frozenset[int]):
        if k == len(ready):
            # maximality: every skipped gate must conflict with a chosen one
            if all(i in chosen or set(gates[i]) & busy for i in ready):
                yield chosen
            return
        i = ready[k]
        qs = set(gates[i])
        if not qs & busy:
            yield from rec(k + 1, chosen + (i,), busy | qs)
        yield from rec(k + 1, chosen, busy)

    yield from rec(0, (), frozenset())


def _asap_layers(cnots: Sequence[Cnot]) -> list[Layer]:
    level: dict[int, int] = {}
    layers: list[list[Cnot]] = []
    for c, t in cnots:
        d = max(level.get(c, 0), level.get(t, 0))
        if d == len(layers):
            layers.append([])
        layers[d].append((c, t))
        level[c] = level[t] = d + 1
    return [tuple(layer) for layer in layers]


@lru_cache(maxsize=64)
def _reference_layering(graph: CouplingGraph, root: int, cnots: tuple[Cnot, ...], base_size: int) -> dict[Cnot, int]:
    """Layer index per CNOT for the preferred minimum-depth schedule of ``cnots``.

    Preference: base CNOTs as early as possible, later-grown CNOTs as late
    as possible (shorter idling for late qubits), then listed order.
    """
    plan = EmbeddingPlan(graph, "reference", root, cnots, cnot_layers=((),))
    gates, _, preds = _dependencies(plan, False)
    depth = len(schedule_layers(plan))
    full = (1 << len(gates)) - 1
    n_base = base_size - 1
    best: tuple | None = None
    best_layers: dict[Cnot, int] = {}

    def rec(done: int, budget: int, layer_of: dict[int, int]):
        nonlocal best, best_layers
        if done == full:
            lv = [layer_of[i] for i in range(len(gates))]
            key = (sum(lv[:n_base]), -sum(lv[n_base:]), lv)
            if best is None or key < best:
                best, best_layers = key, {gates[i]: layer_of[i] for i in range(len(gates))}
            return
        if budget <= 0 or _lower_bound(gates, preds, done) > budget:
            return
        ready = [i for i in range(len(gates))
                 if not done >> i & 1 and all(done >> p & 1 for p in preds[i])]
        k = depth - budget
        for layer in _maximal_layers(ready, gates):
            mask = done
            for i in layer:
                mask |= 1 << i
                layer_of[i] = k
            rec(mask, budget - 1, layer_of)
            for i in layer:
                del layer_of[i]

    rec(0, depth, {})
    return best_layers


def schedule_layers(plan: EmbeddingPlan, include_parity_cnots: bool = False) -> list[Layer]:
    """Minimum-depth layering of the plan's CNOTs.

    Each qubit takes part in at most one CNOT per layer, a growth CNOT waits
    for its control to join the state, and the two parity CNOTs on an
    ancilla run in listed order. Among minimum-depth schedules, the one that
    prefers earlier-listed gates layer by layer is returned.

    In "after" parity mode the encoder follows the reference layering and
    parity CNOTs are appended as early as their qubits allow.
    """
    with_parity = include_parity_cnots and bool(plan.parity_checks)
    if with_parity and plan.parity_mode == "after":
        ref = _reference_layering(plan.graph, plan.root, plan.reference_cnots or plan.growth_cnots,
                                  plan.base_size or plan.size)
        order = {c: i for i, c in enumerate(plan.growth_cnots)}
        encoder = sorted(plan.growth_cnots, key=lambda c: (ref[c], order[c]))
        return _asap_layers(encoder + list(plan.parity_cnots))
    gates, _, preds = _dependencies(plan, with_parity)
    full = (1 << len(gates)) - 1
    if not gates:
        return []
    failed: set[tuple[int, int]] = set()

    def search(done: int, budget: int) -> list[tuple[int, ...]] | None:
        if done == full:
            return []
        if budget <= 0 or _lower_bound(gates, preds, done) > budget or (done, budget) in failed:
            return None
        ready = [i for i in range(len(gates))
                 if not done >> i & 1 and all(done >> p & 1 for p in preds[i])]
        for layer in _maximal_layers(ready, gates):
            mask = done
            for i in layer:
                mask |= 1 << i
            rest = search(mask, budget - 1)
            if rest is not None:
                return [layer] + rest
        failed.add((done, budget))
        return None

    depth = _lower_bound(gates, preds, 0)
    while True:
        found = search(0, depth)
        if found is not None:
            return [tuple(gates[i] for i in layer) for layer in found]
        depth += 1


# ------------------------------------------------------------- reference depth/count data

# (embedding, size) -> (pop depth, pop count, pop-parity depth, pop-parity count,
#                       coh depth, coh count, coh-parity depth, coh-parity count)
REFERENCE_CNOT_TABLE: dict[tuple[int, int], tuple[int | None, ...]] = {
    (1, 11): (6, 10, 7, 12, 12, 20, 13, 22),
    (1, 12): (6, 11, 7, 13, 12, 22, 13, 24),
    (1, 13): (7, 12, 8, 14, 14, 24, 15, 26),
    (1, 14): (7, 13, 8, 15, 14, 26, 15, 28),
    (1, 15): (8, 14, 8, 16, 16, 28, 16, 30),
    (1, 16): (8, 15, 8, 17, 16, 30, 16, 32),
    (1, 17): (9, 16, 9, 18, 18, 32, 18, 34),
    (1, 18): (9, 17, 9, 19, 18, 34, 18, 36),
    (1, 19): (10, 18, 10, 20, 20, 36, 20, 38),
    (2, 19): (7, 18, 8, 22, 14, 36, 15, 40),
    (2, 20): (7, 19, 8, 23, 14, 38, 15, 42),
    (2, 21): (7, 20, 8, 24, 14, 40, 15, 44),
    (2, 22): (7, 21, 8, 25, 14, 42, 15, 46),
    (2, 23): (7, 22, 8, 26, 14, 44, 15, 48),
    (2, 24): (7, 23, 9, 27, 14, 46, 16, 50),
    (2, 25): (7, 24, 9, 28, 14, 48, 16, 52),
    (2, 26): (7, 25, None, None, 14, 50, None, None),
    (2, 27): (7, 26, None, None, 14, 52, None, None),
}

VARIANTS = ("population", "population_parity", "coherence", "coherence_parity")


def cnot_depth(cnot_sequence: Sequence[Sequence[Cnot]]) -> int:
    """ASAP CNOT depth of a sequence of CNOT blocks applied in order."""
    level: dict[int, int] = {}
    depth = 0
    for block in cnot_sequence:
        for c, t in block:
            d = max(level.get(c, 0), level.get(t, 0)) + 1
            level[c] = level[t] = d
            depth = max(depth, d)
    return depth


def depth_count_table(graph: CouplingGraph) -> dict[tuple[int, int, str], tuple[int, int]]:
    """(embedding, size, variant) -> (CNOT depth, CNOT count) for every admitted cell."""
    from .circuit import mqc_circuit, population_circuit

    table = {}
    for emb, sizes in EMBEDDING_SIZES.items():
        for size in sizes:
            for parity in (False, True):
                if parity and size not in PARITY_SIZES[emb]:
                    continue
                plan = build_embedding(graph, emb, size, with_parity=parity)
                suffix = "_parity" if parity else ""
                for name, circ in (("population", population_circuit(plan, parity)),
                                   ("coherence", mqc_circuit(plan, 0.0, parity))):
                    table[(emb, size, name + suffix)] = (circ.cnot_depth(), circ.cnot_count())
    return table


def reference_cell(embedding: int, size: int, variant: str) -> tuple[int, int] | None:
    row = REFERENCE_CNOT_TABLE.get((embedding, size))
    if row is None:
        return None
    k = VARIANTS.index(variant)
    depth, count = row[2 * k], row[2 * k + 1]
    return None if depth is None else (depth, count)
