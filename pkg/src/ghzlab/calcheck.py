"""Audits of the readout model behind QREM.

Covers POVM-derived calibration matrices, the depolarising SPAM gauge,
non-classicality of measurement effects, locality of readout errors across
four qubits, and a simulated check that QREM does not overstate GHZ
fidelity when the true measurement is a general two-outcome POVM.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import reduce
from importlib import resources
from pathlib import Path
from typing import Sequence

import numpy as np

from .analysis import OverlapCurve, fidelity, mqc_amplitudes, phase_grid
from .mitigation import CalibrationMatrix, invert_readout, project_to_simplex, QuasiDistribution

PSD_TOL = 1e-9


class FixtureError(ValueError):
    pass


@dataclass(frozen=True)
class PovmEffect:
    matrix: np.ndarray
    label: int = 0

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (2, 2):
            raise FixtureError("effect must be 2x2")
        if not np.allclose(m, m.conj().T, atol=1e-9):
            raise FixtureError("effect is not Hermitian")
        ev = np.linalg.eigvalsh(m)
        if ev.min() < -PSD_TOL or ev.max() > 1 + PSD_TOL:
            raise FixtureError(f"effect eigenvalues {ev} outside [0, 1]")
        object.__setattr__(self, "matrix", m)

    def complement(self) -> "PovmEffect":
        return PovmEffect(np.eye(2) - self.matrix, 1 - self.label)


@dataclass(frozen=True)
class PreparationState:
    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=complex)
        if m.shape != (2, 2) or not np.allclose(m, m.conj().T, atol=1e-9):
            raise FixtureError("preparation must be a Hermitian 2x2 matrix")
        if abs(np.trace(m).real - 1) > 1e-9 or np.linalg.eigvalsh(m).min() < -PSD_TOL:
            raise FixtureError("preparation must have unit trace and be positive")
        object.__setattr__(self, "matrix", m)


def is_psd(m: np.ndarray, tol: float = PSD_TOL) -> bool:
    return bool(np.linalg.eigvalsh(0.5 * (m + m.conj().T)).min() >= -tol)


def povm_to_calibration(e0: PovmEffect, e1: PovmEffect | None = None) -> CalibrationMatrix:
    """A[x, y] = Tr[E^x |y><y|] from the diagonal of the effects."""
    e1 = e0.complement() if e1 is None else e1
    if not np.allclose(e0.matrix + e1.matrix, np.eye(2), atol=1e-9):
        raise FixtureError("effects do not sum to the identity")
    a = np.array([[e0.matrix[0, 0].real, e0.matrix[1, 1].real],
                  [e1.matrix[0, 0].real, e1.matrix[1, 1].real]])
    return CalibrationMatrix(np.clip(a, 0.0, 1.0))


@dataclass(frozen=True)
class GaugeResult:
    E0: np.ndarray
    E1: np.ndarray
    rho0: np.ndarray
    positive: bool


def depolarizing_gauge(e0, e1, rho0, p: float, form: str = "printed") -> GaugeResult:
    """Move depolarising noise of strength ``p`` between preparation and measurement.

    ``form="printed"``: E -> (1-p) E + p/2 1, rho -> rho + p|0><0| - p/2 1.
    ``form="exact"``: E -> (1-p) E + p/2 Tr(E) 1 and rho -> (rho - p/2 1)/(1-p),
    the channel / inverse-channel pair that leaves Tr[rho E] unchanged.
    """
    e0 = np.asarray(getattr(e0, "matrix", e0), dtype=complex)
    e1 = np.asarray(getattr(e1, "matrix", e1), dtype=complex)
    rho = np.asarray(getattr(rho0, "matrix", rho0), dtype=complex)
    eye = np.eye(2)
    if form == "printed":
        f0 = (1 - p) * e0 + 0.5 * p * eye
        f1 = (1 - p) * e1 + 0.5 * p * eye
        r = rho + p * np.diag([1.0, 0.0]) - 0.5 * p * eye
    elif form == "exact":
        if p == 1:
            raise ValueError("the exact form is singular at p = 1")
        f0 = (1 - p) * e0 + 0.5 * p * np.trace(e0) * eye
        f1 = (1 - p) * e1 + 0.5 * p * np.trace(e1) * eye
        r = (rho - 0.5 * p * np.trace(rho) * eye) / (1 - p)
    else:
        raise ValueError(f"unknown gauge form {form!r}")
    return GaugeResult(f0, f1, r, is_psd(r))


def frobenius(a, b) -> float:
    return float(np.linalg.norm(np.asarray(getattr(a, "matrix", a)) - np.asarray(getattr(b, "matrix", b))))


def _calibration_of(e0: np.ndarray, e1: np.ndarray) -> np.ndarray:
    return np.array([[e0[0, 0].real, e0[1, 1].real], [e1[0, 0].real, e1[1, 1].real]])


def _prep_min_eig(rho0, p: float, form: str) -> float:
    r = depolarizing_gauge(np.eye(2), np.eye(2), rho0, p, form).rho0
    return float(np.linalg.eigvalsh(0.5 * (r + r.conj().T)).min())


def feasible_interval(rho0, p_range: tuple[float, float] = (-1.0, 1.0), form: str = "printed",
                      tol: float = PSD_TOL) -> tuple[float, float]:
    """Sub-interval of ``p_range`` on which the transformed preparation stays positive.

    The minimum eigenvalue is concave along the (affine or projectively
    affine) gauge family and positive at ``p = 0``, so the feasible set is an
    interval whose ends are found by root bracketing.
    """
    from scipy.optimize import brentq

    lo, hi = p_range
    if form == "exact":
        hi = min(hi, 1 - 1e-12)
    f = lambda p: _prep_min_eig(rho0, p, form) + tol  # noqa: E731
    if not lo <= 0 <= hi or f(0.0) < 0:
        raise ValueError("no gauge parameter keeps the preparation positive")
    a = lo if f(lo) >= 0 else brentq(f, lo, 0.0, xtol=1e-14)
    b = hi if f(hi) >= 0 else brentq(f, 0.0, hi, xtol=1e-14)
    return float(a), float(b)


def gauge_optimize(a_simple, e0, e1, rho0, p_range: tuple[float, float] = (-1.0, 1.0),
                   form: str = "printed") -> tuple[float, float]:
    """(p*, min Frobenius distance) between ``A_simple`` and the gauge-moved A^POVM.

    In both forms the diagonal of the moved effects, hence A^POVM(p), is
    affine in ``p``; the least-squares ``p`` is clipped to the interval on
    which the moved preparation is positive.
    """
    a = np.asarray(getattr(a_simple, "matrix", a_simple), dtype=float)
    lo, hi = feasible_interval(rho0, p_range, form)
    g0 = depolarizing_gauge(e0, e1, rho0, 0.0, form)
    g1 = depolarizing_gauge(e0, e1, rho0, 0.5, form)
    base = _calibration_of(g0.E0, g0.E1)
    slope = 2 * (_calibration_of(g1.E0, g1.E1) - base)
    denom = float(np.sum(slope * slope))
    p = float(np.sum((a - base) * slope) / denom) if denom > 0 else 0.0
    p = min(max(p, lo), hi)
    return p, float(np.linalg.norm(a - base - p * slope))


def coherence_metric(e0: PovmEffect) -> tuple[float, float]:
    """(modulus metric, real-part metric) of the effect's off-diagonals."""
    m = e0.matrix
    modulus = 0.5 * (abs(m[0, 1]) + abs(m[1, 0]))
    real = 0.5 * (abs(m[0, 1].real) + abs(m[1, 0].real))
    return float(modulus), float(real)


# ---------------------------------------------------------------- fixtures

@dataclass(frozen=True)
class QubitFixture:
    qubit: int
    E0: PovmEffect
    rho0: PreparationState
    A_povm: np.ndarray | None = None
    A_simple: np.ndarray | None = None
    reported_distance: float | None = None
    reported_coherence: float | None = None


def _complex_matrix(entries) -> np.ndarray:
    vals = [complex(re, im) for re, im in entries]
    if len(vals) != 4:
        raise FixtureError("matrix needs 4 [re, im] entries")
    return np.array(vals).reshape(2, 2)


def bundled_fixtures_path() -> Path:
    return Path(str(resources.files("ghzlab") / "data" / "tomography_fixtures.json"))


def load_fixtures(path: str | Path | None = None) -> list[QubitFixture]:
    path = bundled_fixtures_path() if path is None else Path(path)
    try:
        raw = json.loads(Path(path).read_text())
        out = []
        for e in raw:
            rho = _complex_matrix(e["rho0"]) if "rho0" in e else np.diag([1.0, 0.0])
            out.append(QubitFixture(
                int(e["qubit"]), PovmEffect(_complex_matrix(e["E0"])), PreparationState(rho),
                None if e.get("A_povm") is None else np.array(e["A_povm"], dtype=float),
                None if e.get("A_simple") is None else np.array(e["A_simple"], dtype=float),
                e.get("reported_distance"), e.get("reported_coherence")))
        return out
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise FixtureError(f"malformed fixture file {path}: {exc}") from exc


REPORT_COLUMNS = ("qubit", "A00", "A01", "A10", "A11", "distance", "distance_printed_povm", "reported_distance",
                  "coherence_real", "coherence_modulus", "reported_coherence", "gauge_p", "gauge_distance")


def fixture_report(fixtures: Sequence[QubitFixture], p_range: tuple[float, float] = (-1.0, 1.0)) -> list[dict]:
    rows = []
    for fx in fixtures:
        e1 = fx.E0.complement()
        a = povm_to_calibration(fx.E0, e1).matrix
        modulus, real = coherence_metric(fx.E0)
        row = {"qubit": fx.qubit, "A00": a[0, 0], "A01": a[0, 1], "A10": a[1, 0], "A11": a[1, 1],
               "distance": "", "distance_printed_povm": "", "reported_distance": fx.reported_distance,
               "coherence_real": real, "coherence_modulus": modulus, "reported_coherence": fx.reported_coherence,
               "gauge_p": "", "gauge_distance": ""}
        if fx.A_simple is not None:
            row["distance"] = frobenius(fx.A_simple, a)
            if fx.A_povm is not None:
                row["distance_printed_povm"] = frobenius(fx.A_simple, fx.A_povm)
            p, d = gauge_optimize(fx.A_simple, fx.E0, e1, fx.rho0, p_range)
            row["gauge_p"], row["gauge_distance"] = p, d
        rows.append(row)
    return rows


# ---------------------------------------------------------------- locality

def kron_all(mats) -> np.ndarray:
    return reduce(np.kron, [np.asarray(getattr(m, "matrix", m)) for m in mats])


@dataclass(frozen=True)
class LocalityResult:
    distance: float
    full_minus_identity: np.ndarray
    product_minus_identity: np.ndarray


def locality_check(a_full, locals_: Sequence) -> LocalityResult:
    """Frobenius distance between a joint calibration and the product of local ones.

    The first local matrix acts on the most significant bit of the joint index.
    """
    full = np.asarray(a_full, dtype=float)
    prod = kron_all(locals_)
    if full.shape != prod.shape:
        raise ValueError(f"joint matrix {full.shape} does not match product {prod.shape}")
    eye = np.eye(full.shape[0])
    return LocalityResult(float(np.linalg.norm(full - prod)), full - eye, prod - eye)


def readout_channel(flips: Sequence[tuple[float, float]], correlated: tuple[int, int, float] | None = None):
    """Exact joint confusion matrix for independent flips plus an optional pair flip.

    ``flips[k] = (p(1|0), p(0|1))`` for bit ``k`` (leftmost first); ``correlated``
    ``(i, j, q)`` flips bits ``i`` and ``j`` together with probability ``q`` after
    the local flips.
    """
    a = kron_all([CalibrationMatrix.from_flips(p10, p01).matrix for p10, p01 in flips])
    if correlated is None:
        return a
    i, j, q = correlated
    n = len(flips)
    d = 1 << n
    mask = (1 << (n - 1 - i)) | (1 << (n - 1 - j))
    perm = np.arange(d) ^ mask
    return (1 - q) * a + q * a[perm]


def sample_joint_calibration(channel: np.ndarray, shots: int, rng: np.random.Generator) -> np.ndarray:
    """Estimate a joint calibration by preparing each basis state ``shots`` times."""
    d = channel.shape[0]
    est = np.empty_like(channel)
    for y in range(d):
        col = np.clip(channel[:, y], 0, None)
        est[:, y] = rng.multinomial(shots, col / col.sum()) / shots
    return est


def estimate_locals(channel: np.ndarray, shots: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Local calibrations from all-zeros / all-ones preparations, as done in QREM."""
    d = channel.shape[0]
    n = int(round(math.log2(d)))
    c0 = rng.multinomial(shots, channel[:, 0] / channel[:, 0].sum())
    c1 = rng.multinomial(shots, channel[:, d - 1] / channel[:, d - 1].sum())
    idx = np.arange(d)
    out = []
    for k in range(n):
        bit = (idx >> (n - 1 - k)) & 1
        p10 = c0[bit == 1].sum() / shots
        p01 = c1[bit == 0].sum() / shots
        out.append(CalibrationMatrix.from_flips(p10, p01).matrix)
    return out


@dataclass(frozen=True)
class LocalityTest:
    distance: float
    null_mean: float
    null_std: float
    z: float


def locality_experiment(flips: Sequence[tuple[float, float]], shots: int = 1 << 14, seed: int = 0,
                        correlated: tuple[int, int, float] | None = None, null_samples: int = 200) -> LocalityTest:
    """Observed joint-vs-product distance against a resampled local-noise null.

    The null re-runs the whole estimation on data drawn from the fitted
    product model, so it captures finite-shot scatter of both estimates.
    """
    rng = np.random.default_rng(seed)
    true = readout_channel(flips, correlated)
    full = sample_joint_calibration(true, shots, rng)
    locs = estimate_locals(true, shots, rng)
    d = locality_check(full, locs).distance
    model = kron_all(locs)
    null = []
    for _ in range(null_samples):
        f = sample_joint_calibration(model, shots, rng)
        l = estimate_locals(model, shots, rng)
        null.append(locality_check(f, l).distance)
    mu, sd = float(np.mean(null)), float(np.std(null, ddof=1))
    return LocalityTest(d, mu, sd, (d - mu) / sd)


# ------------------------------------------------------ QREM overestimate

def ghz_density(n: int) -> np.ndarray:
    d = 1 << n
    psi = np.zeros(d)
    psi[0] = psi[-1] = 1 / math.sqrt(2)
    return np.outer(psi, psi).astype(complex)


def random_density(n: int, rng: np.random.Generator, rank: int | None = None) -> np.ndarray:
    """Mixture of ``rank`` normalised complex-Gaussian (Haar) pure states."""
    d = 1 << n
    g = rng.normal(size=(d, rank or d)) + 1j * rng.normal(size=(d, rank or d))
    rho = g @ g.conj().T
    return rho / np.trace(rho).real


def ghz_fidelity(rho: np.ndarray) -> float:
    return float(0.5 * (rho[0, 0] + rho[-1, -1]).real + rho[-1, 0].real)


def _rotated(rho: np.ndarray, n: int, phi: float) -> np.ndarray:
    """rho_phi = R X rho X R^dagger with X and RZ(phi) on every qubit."""
    d = 1 << n
    flipped = rho[::-1, ::-1]  # X on all qubits maps index i to d-1-i
    ones = np.array([bin(i).count("1") for i in range(d)])
    phase = np.exp(1j * phi * (ones - n / 2))
    return phase[:, None] * flipped * phase.conj()[None, :]


def echo_state(rho: np.ndarray, n: int, phi: float, w=None, v=None) -> np.ndarray:
    """Pre-measurement state whose all-zero weight is Tr[rho_phi rho].

    ``rho = V diag(w) V^dagger``; the decoder undoes a randomly drawn
    eigen-preparation ``V X^k`` so a perfect echo returns to ``|0...0>``.
    """
    if w is None:
        w, v = np.linalg.eigh(rho)
        w = np.clip(w, 0, None)
    m = v.conj().T @ _rotated(rho, n, phi) @ v
    d = 1 << n
    idx = np.arange(d)
    sigma = np.zeros((d, d), dtype=complex)
    for k in range(d):
        if w[k] > 0:
            p = idx ^ k
            sigma += w[k] * m[np.ix_(p, p)]
    return sigma


def povm_probabilities(state: np.ndarray, effects0: Sequence[np.ndarray]) -> np.ndarray:
    """Outcome distribution of a product two-outcome POVM; first effect on the leftmost bit."""
    n = len(effects0)
    t = state.reshape((2,) * (2 * n))
    rows, cols, outs = list(range(n)), list(range(n, 2 * n)), list(range(2 * n, 3 * n))
    operands = [t, rows + cols]
    for k, e0 in enumerate(effects0):
        pair = np.stack([e0, np.eye(2) - e0])  # E^m_{a b}
        operands += [pair, [outs[k], cols[k], rows[k]]]  # Tr[sigma E] = sum sigma_ab E_ba
    probs = np.einsum(*operands, outs, optimize=True)
    return np.real(probs).reshape(-1)


def _estimate_fidelity(pop: np.ndarray, curve: np.ndarray, n: int, cals, shots: int | None,
                       rng: np.random.Generator, threshold_shots: float) -> float:
    d = 1 << n

    def mitigated(probs):
        probs = np.clip(probs, 0, None)
        probs = probs / probs.sum()
        if shots is None:
            quasi = QuasiDistribution(np.arange(d), probs, n)
            q = invert_readout(quasi, cals, threshold_shots=0.0)
        else:
            c = rng.multinomial(shots, probs)
            nz = np.nonzero(c)[0]
            quasi = QuasiDistribution(nz, c[nz] / shots, n)
            q = invert_readout(quasi, cals, threshold_shots=threshold_shots, shots=shots)
        return project_to_simplex(q)

    pq = mitigated(pop)
    p = pq.get_index(0) + pq.get_index(d - 1)
    s = np.array([mitigated(c).get_index(0) for c in curve])
    spec = mqc_amplitudes(OverlapCurve(n, s))
    c = min(1.0, 2 * math.sqrt(spec[n]))
    return fidelity(p, c)


@dataclass(frozen=True)
class OverestimateCell:
    p: float
    noise: str
    mean_overestimate: float
    std_overestimate: float
    mean_fidelity: float
    mean_qrem_shift: float  # mitigated estimate minus the ideal-measurement estimate


@dataclass(frozen=True)
class OverestimateResult:
    max_average_overestimate: float
    max_average_qrem_shift: float
    cells: tuple[OverestimateCell, ...]


DEFAULT_P_GRID = tuple(round(0.1 * k, 1) for k in range(10))


def qrem_overestimate_experiment(n_qubits: int = 6, p_grid: Sequence[float] = DEFAULT_P_GRID,
                                 noise_states: Sequence[str] = ("mixed", "random"), samples: int = 500,
                                 seed: int = 0, shots: int | None = None, fixtures: Sequence[QubitFixture] | None = None,
                                 ideal_measurement: bool = False, threshold_shots: float = 0.1,
                                 rank: int | None = None, calibration: str = "simulated") -> OverestimateResult:
    """Average of (QREM-mitigated MQC fidelity - true fidelity) per (p, noise) cell.

    The lab state is ``(1-p) GHZ + p noise``. Complete MQC curves are
    computed with the fixtures' full POVMs and mitigated with per-qubit
    calibrations. ``samples`` independent draws are taken per cell (fresh
    random noise states; with ``shots`` also fresh multinomial counts).
    ``shots=None`` uses exact outcome probabilities, so a maximally mixed
    cell needs a single draw.

    ``calibration="simulated"`` builds each qubit's prepare-and-measure
    matrix from the same POVM model (ideal preparation), so only the
    non-classical part of the effects is left unmitigated; ``"table"`` uses
    the fixtures' measured ``A_simple`` matrices instead.

    Each cell also reports the shift caused by measurement error plus QREM
    alone: the mitigated estimate minus the estimate from an ideal
    measurement of the same state.
    """
    if not 1 <= n_qubits <= 6:
        raise ValueError("the overestimate experiment supports 1 to 6 qubits")
    fixtures = list(fixtures) if fixtures is not None else load_fixtures()
    if len(fixtures) < n_qubits:
        raise ValueError("not enough qubit fixtures")
    fx = fixtures[:n_qubits]
    ideal_effects = [np.diag([1.0, 0.0]).astype(complex)] * n_qubits
    ideal_cals = [CalibrationMatrix.identity()] * n_qubits
    if ideal_measurement:
        effects, cals = ideal_effects, ideal_cals
    else:
        effects = [f.E0.matrix for f in fx]
        if calibration == "simulated":
            cals = [povm_to_calibration(f.E0) for f in fx]
        elif calibration == "table":
            if any(f.A_simple is None for f in fx):
                raise ValueError("fixtures lack measured calibration matrices")
            cals = [CalibrationMatrix(f.A_simple) for f in fx]
        else:
            raise ValueError(f"unknown calibration source {calibration!r}")
    n, d = n_qubits, 1 << n_qubits
    ghz = ghz_density(n)
    phis = phase_grid(n)
    cells = []
    for ci, (p, kind) in enumerate((p, k) for p in p_grid for k in noise_states):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(ci,)))
        diffs, shifts, fids = [], [], []
        for _ in range(samples):
            if kind == "mixed":
                noise = np.eye(d) / d
            elif kind == "random":
                noise = random_density(n, rng, rank)
            else:
                raise ValueError(f"unknown noise state {kind!r}")
            rho = (1 - p) * ghz + p * noise
            f_true = ghz_fidelity(rho)
            w, v = np.linalg.eigh(rho)
            w = np.clip(w, 0, None)
            echoes = [echo_state(rho, n, phi, w, v) for phi in phis]
            pop = povm_probabilities(rho, effects)
            curve = [povm_probabilities(e, effects) for e in echoes]
            f_hat = _estimate_fidelity(pop, curve, n, cals, shots, rng, threshold_shots)
            pop0 = povm_probabilities(rho, ideal_effects)
            curve0 = [povm_probabilities(e, ideal_effects) for e in echoes]
            f_ideal = _estimate_fidelity(pop0, curve0, n, ideal_cals, None, rng, 0.0)
            diffs.append(f_hat - f_true)
            shifts.append(f_hat - f_ideal)
            fids.append(f_true)
            if shots is None and kind == "mixed":
                break
        diffs = np.asarray(diffs)
        cells.append(OverestimateCell(float(p), kind, float(diffs.mean()),
                                      float(diffs.std(ddof=1)) if diffs.size > 1 else 0.0, float(np.mean(fids)),
                                      float(np.mean(shifts))))
    return OverestimateResult(max(c.mean_overestimate for c in cells), max(c.mean_qrem_shift for c in cells),
                              tuple(cells))
