"""Acceptance suite: one PASS/FAIL line per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``; the verdict lines are printed
even when output capture is on.
"""
import itertools
import math
import time
import warnings
from pathlib import Path

import numpy as np
import pytest

from ghzlab.analysis import OverlapCurve, fidelity, gme_confidence, mqc_amplitudes, population, overlap_signal
from ghzlab.calcheck import coherence_metric, fixture_report, load_fixtures, povm_to_calibration, \
    qrem_overestimate_experiment
from ghzlab.circuit import mqc_circuit, phase_grid, population_circuit
from ghzlab.density import exact_density_fidelity, outcome_distribution
from ghzlab.device import REFERENCE_CNOT_TABLE, VARIANTS, depth_count_table, montreal27, reference_cell, \
    ring_embedding
from ghzlab.experiment import ExperimentConfig, analyze_archive, analyze_record, run_experiment
from ghzlab.mitigation import CalibrationMatrix, CountsTable, QuasiDistribution, invert_readout, \
    post_select_parity, simplex_projection
from ghzlab.simulator import NoiseModel, ideal_probabilities, run_shots

README = Path(__file__).resolve().parents[1] / "README.md"


@pytest.fixture
def verdict(capsys):
    def emit(k: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n{'PASS' if ok else 'FAIL'} criterion {k}: {detail}")
        assert ok, detail
    return emit


def _fixture_readout(n: int) -> list[dict]:
    mats = [f.A_simple for f in load_fixtures()]
    return [{"qubit": q, "matrix": np.asarray(mats[q % len(mats)]).tolist()} for q in range(n)]


def test_criterion_01_golden_table(verdict):
    t0 = time.perf_counter()
    table = depth_count_table(montreal27())
    elapsed = time.perf_counter() - t0
    expected = {}
    for (emb, size) in REFERENCE_CNOT_TABLE:
        for v in VARIANTS:
            cell = reference_cell(emb, size, v)
            if cell is not None:
                expected[(emb, size, v)] = cell
    wrong = [k for k in expected if table.get(k) != expected[k]]
    extra = set(table) - set(expected)
    ok = not wrong and not extra and elapsed < 1.0
    verdict(1, ok, f"{len(expected) - len(wrong)}/{len(expected)} populated cells exact, {len(extra)} unexpected, "
                   f"{elapsed:.3f} s")


def test_criterion_02_ideal_pipeline(verdict):
    t0 = time.perf_counter()
    worst = 0.0
    for n in range(3, 11):
        plan = ring_embedding(n)
        p = population(ideal_probabilities(population_circuit(plan)))
        s = [overlap_signal(ideal_probabilities(mqc_circuit(plan, float(phi)))) for phi in phase_grid(n)]
        spec = mqc_amplitudes(OverlapCurve(n, np.array(s)))
        c = 2 * math.sqrt(spec[n])
        errs = [p - 1, spec[0] - 0.5, spec[n] - 0.25, c - 1, fidelity(p, min(c, 1.0)) - 1]
        worst = max(worst, max(abs(e) for e in errs))
    elapsed = time.perf_counter() - t0
    verdict(2, worst <= 1e-9 and elapsed < 10, f"N=3..10 max deviation {worst:.2e} (tol 1e-9), {elapsed:.2f} s")


NOISE_SETTINGS = {
    "depolarizing": {"p1": 0.004, "p2": 0.03},
    "dephasing": {"p2": 0.003, "p_idle_z": 0.03, "drift": 0.02},
    "readout": {"p2": 0.003, "readout_uniform": {"p10": 0.03, "p01": 0.05}},
}


def test_criterion_03_oracle_equivalence(verdict):
    t0 = time.perf_counter()
    trials, hits, worst = 0, 0, 0.0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for name, noise in NOISE_SETTINGS.items():
            for n in range(3, 9):
                for seed in range(3):
                    cfg = ExperimentConfig.from_json({"embedding": "ring", "sizes": [n], "runs": 8, "shots": 8192,
                                                      "seed": seed, "qrem": False, "noise": noise})
                    row = analyze_archive(run_experiment(cfg, "t")).summary[0]
                    exact = exact_density_fidelity(ring_embedding(n), cfg.noise).F
                    z = abs(row["F_mean"] - exact) / row["F_sem"]
                    worst = max(worst, z)
                    trials += 1
                    hits += z <= 3
    elapsed = time.perf_counter() - t0
    frac = hits / trials
    verdict(3, frac >= 0.95 and elapsed < 600,
            f"{hits}/{trials} trials within 3 SEM ({frac:.1%}, need 95%), max |z| {worst:.2f}, {elapsed:.0f} s")


def test_criterion_04_qrem_unbiasedness(verdict):
    t0 = time.perf_counter()
    zs, lines = {}, []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for n in range(4, 9):
            cfg = ExperimentConfig.from_json({"embedding": "ring", "sizes": [n], "runs": 8, "shots": 8192,
                                              "seed": 0, "qrem": True, "noise": {"readout": _fixture_readout(n)}})
            row = analyze_archive(run_experiment(cfg, "t")).summary[0]
            zs[n] = (row["F_mean"] - 1) / row["F_sem"]
            lines.append(f"N={n} F={row['F_mean']:.5f}+/-{row['F_sem']:.5f} (P={row['P_mean']:.5f}, "
                         f"C={row['C_mean']:.5f}) z={zs[n]:+.2f}")
    res = qrem_overestimate_experiment(n_qubits=6, samples=500, seed=0)
    elapsed = time.perf_counter() - t0
    unbiased = all(abs(z) <= 3 for z in zs.values())
    bound = res.max_average_overestimate <= 1e-3
    worst_cell = max(res.cells, key=lambda c: c.mean_overestimate)
    detail = (f"mitigated F within 3 SEM of 1 for N=4..8: {'yes' if unbiased else 'no'} "
              f"[{'; '.join(lines)}]; max average overestimate {res.max_average_overestimate:.2e} "
              f"(bound 1e-3, worst cell p={worst_cell.p} {worst_cell.noise}, QREM shift "
              f"{worst_cell.mean_qrem_shift:+.1e}); {elapsed:.0f} s")
    verdict(4, unbiased and bound and elapsed < 1800, detail)


def test_criterion_05_threshold_stability(verdict):
    t0 = time.perf_counter()
    n = 12
    cfg = ExperimentConfig.from_json({"embedding": "ring", "sizes": [n], "runs": 4, "shots": 8192, "seed": 0,
                                      "qrem": True, "noise": {"readout": _fixture_readout(n)}})
    archive = run_experiment(cfg, "t")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        diffs = [abs(analyze_record(r, True, 0.1)[0].F - analyze_record(r, True, 0.0)[0].F)
                 for r in archive["records"]]
    same = max(diffs) < 5e-6

    rec = archive["records"][0]
    quasi = QuasiDistribution.from_counts(CountsTable.from_json(rec["population"]))
    cals = [CalibrationMatrix(np.array(c["matrix"])) for c in rec["calibration"]]
    full = invert_readout(quasi, cals, threshold_shots=0.0)
    cut = invert_readout(quasi, cals, threshold_shots=0.1, shots=8192)

    def best(q, cs, th, reps=20):
        times = []
        for _ in range(7):
            s = time.perf_counter()
            for _ in range(reps):
                invert_readout(q, cs, threshold_shots=th, shots=8192)
            times.append((time.perf_counter() - s) / reps)
        return min(times)

    t_full, t_cut = best(quasi, cals, 0.0), best(quasi, cals, 0.1)
    speedup = t_full / t_cut
    # diagnostic only: the same comparison on a 16-qubit register
    big = ring_embedding(16)
    big_noise = NoiseModel(readout={q: CalibrationMatrix(np.array(c["matrix"])) for q, c in
                                    enumerate(_fixture_readout(16))})
    big_q = QuasiDistribution.from_counts(run_shots(population_circuit(big), big_noise, 8192, seed=0))
    big_cals = [big_noise.readout[q] for q in big.data_qubits]
    speedup16 = best(big_q, big_cals, 0.0, 2) / best(big_q, big_cals, 0.1, 2)
    elapsed = time.perf_counter() - t0
    verdict(5, same and speedup >= 5 and full.num_bits == n and len(full) == 1 << n and elapsed < 300,
            f"max |F(0.1) - F(0)| = {max(diffs):.1e} (5 decimals: {'yes' if same else 'no'}); inversion of a "
            f"{len(quasi)}-string N=12 vector: full support {len(full)} in {t_full * 1e3:.2f} ms, thresholded "
            f"support {len(cut)} in {t_cut * 1e3:.2f} ms, speedup {speedup:.1f}x (need 5x; "
            f"same comparison at N=16: {speedup16:.1f}x); {elapsed:.0f} s")


def test_criterion_06_confidence(verdict):
    t0 = time.perf_counter()
    c27 = gme_confidence(0.546, 0.017, 8).confidence
    c26 = gme_confidence(0.580, 0.022, 8).confidence
    elapsed = time.perf_counter() - t0
    ok = abs(c27 - 0.986) <= 1e-3 and abs(c26 - 0.996) <= 1e-3 and elapsed < 1
    verdict(6, ok, f"confidence(0.546, 0.017, 8) = {c27:.5f} (target 0.986 +/- 0.001), "
                   f"confidence(0.580, 0.022, 8) = {c26:.5f} (target 0.996 +/- 0.001), Student-t with 7 dof")


def test_criterion_07_parity_benefit(verdict):
    t0 = time.perf_counter()
    noise = NoiseModel(p1=0.01, p2=0.03)
    gains = []
    for n in range(5, 9):
        plan = ring_embedding(n, with_parity=True)
        dist = outcome_distribution(population_circuit(plan, True), noise)
        joint = dist.reshape(1 << n, 1 << len(plan.ancillas))
        unselected = joint.sum(axis=1)
        accepted = exact_density_fidelity(plan, noise, with_parity=True)
        gains.append((n, unselected[0] + unselected[-1], accepted.P, accepted.retention))
    strict = all(sel > un for _, un, sel, _ in gains)

    p = 0.25
    joint = {f"{a}{b}{a ^ b}": (p if a else 1 - p) * (p if b else 1 - p) for a, b in itertools.product((0, 1), repeat=2)}
    counts = CountsTable({k: int(round(v * 16000)) for k, v in joint.items()}, 16000)
    kept, _ = post_select_parity(counts, [2])
    cond = (kept.counts["00"] / kept.shots, kept.counts["11"] / kept.shots)
    analytic = abs(cond[0] - 0.9) < 1e-12 and abs(cond[1] - 0.1) < 1e-12
    elapsed = time.perf_counter() - t0
    rows = "; ".join(f"N={n} P {un:.4f} -> {sel:.4f} (retention {r:.3f})" for n, un, sel, r in gains)
    verdict(7, strict and analytic and elapsed < 300,
            f"post-selected P strictly higher: {'yes' if strict else 'no'} [{rows}]; p=0.25 conditional "
            f"{cond[0]:.3f}/{cond[1]:.3f}; {elapsed:.1f} s")


def test_criterion_08_tomography_fixtures(verdict):
    t0 = time.perf_counter()
    fixtures = load_fixtures()
    rows = fixture_report(fixtures)
    elapsed = time.perf_counter() - t0
    printed = {1: 0.0231, 3: 0.0051, 12: 0.0074, 14: 0.0075, 23: 0.0082, 25: 0.0002}
    misses = [f"q{r['qubit']} {r['distance']:.5f}" for r in rows if round(r["distance"], 4) != printed[r["qubit"]]]
    real_ok = all(round(r["coherence_real"], 4) == r["reported_coherence"] for r in rows)
    both = all(r["coherence_modulus"] >= abs(r["coherence_real"]) for r in rows)
    stochastic = all(np.allclose(povm_to_calibration(f.E0).matrix.sum(axis=0), 1) for f in fixtures)
    # reference: magnitude of the coherence metric for the first qubit, modulus vs real part
    mod1, real1 = coherence_metric(fixtures[0].E0)
    ok = not misses and real_ok and both and stochastic and elapsed < 1
    verdict(8, ok, f"distances to 4 decimals: {6 - len(misses)}/6 match"
                   f"{' (misses: ' + ', '.join(misses) + ')' if misses else ''}; real-part coherence column "
                   f"{'matches' if real_ok else 'differs'} (q1 real {real1:.4f}, modulus {mod1:.4f}); "
                   f"{elapsed:.3f} s")


def _brute_force_projection(v: np.ndarray) -> np.ndarray:
    """Exact constrained least squares by enumerating active sets (KKT on each support)."""
    best, best_d = None, np.inf
    for k in range(1, v.size + 1):
        for support in itertools.combinations(range(v.size), k):
            s = list(support)
            tau = (v[s].sum() - 1) / k
            x = np.zeros_like(v)
            x[s] = v[s] - tau
            if x.min() < -1e-15:
                continue
            d = np.sum((x - v) ** 2)
            if d < best_d:
                best, best_d = x, d
    return best


def test_criterion_09_projection(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(0)
    worst, idem = 0.0, 0.0
    for _ in range(1000):
        dim = int(rng.integers(3, 6))
        v = rng.normal(1 / dim, 0.5, dim)
        p = simplex_projection(v)
        worst = max(worst, float(np.linalg.norm(p - _brute_force_projection(v))))
        idem = max(idem, float(np.linalg.norm(simplex_projection(p) - p)))
    elapsed = time.perf_counter() - t0
    verdict(9, worst <= 1e-7 and idem <= 1e-12 and elapsed < 60,
            f"1000 vectors: max distance to brute-force oracle {worst:.1e} (tol 1e-7), "
            f"idempotence error {idem:.1e}; {elapsed:.2f} s")


def test_criterion_10_desk_scale_statement(verdict):
    text = README.read_text()
    stated = "Not reproducible at desk scale" in text and "0.546" in text and "0.664" in text
    verdict(10, stated, "hardware headline results (27 qubits F = 0.546 +/- 0.017; 25 qubits with parity "
                        "F = 0.664 +/- 0.016) depend on unknown device noise and are not reproduced; the pipeline "
                        "is demonstrated at N <= 12 with configurable noise and every computable sub-claim is "
                        "checked above")
