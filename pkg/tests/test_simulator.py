import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ghzlab.circuit import CNOT, RZ, X, Circuit, H, ghz_encoder, mqc_circuit, population_circuit
from ghzlab.density import outcome_distribution
from ghzlab.device import ring_embedding
from ghzlab.mitigation import CalibrationMatrix
from ghzlab.simulator import (NoiseModel, ResourceError, StateVector, apply_gate, compile_program,
                              ideal_probabilities, run_program, run_shots, sample_patterns, simulate_statevector)


def _amp(state, bits):
    """Amplitude of the basis state with qubit k set to bits[k]."""
    return state.amplitudes[sum(b << k for k, b in enumerate(bits))]


def test_hadamard_on_zero():
    s = apply_gate(StateVector.zero(1), H(0))
    assert np.allclose(s.amplitudes, [1 / math.sqrt(2)] * 2)


def test_cnot_flips_target_when_control_set():
    s = apply_gate(StateVector.zero(2), X(0))
    s = apply_gate(s, CNOT(0, 1))
    assert abs(_amp(s, (1, 1)) - 1) < 1e-12


def test_rz_phase_on_ghz():
    phi = 0.37
    circ = Circuit(3, (H(0), CNOT(0, 1), CNOT(1, 2)) + tuple(RZ(q, phi) for q in range(3)))
    s = simulate_statevector(circ)
    ratio = _amp(s, (1, 1, 1)) / _amp(s, (0, 0, 0))
    # direct matrix product oracle
    rz = np.diag([np.exp(-0.5j * phi), np.exp(0.5j * phi)])
    full = np.kron(np.kron(rz, rz), rz)
    ghz = np.zeros(8, complex)
    ghz[0] = ghz[7] = 1 / math.sqrt(2)
    out = full @ ghz
    assert ratio == pytest.approx(out[7] / out[0])
    assert np.angle(ratio) == pytest.approx(3 * phi)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["H", "X", "CNOT", "RZ"]), st.integers(0, 3), st.integers(0, 3),
                          st.floats(-6, 6)), min_size=1, max_size=30))
def test_norm_preserved(ops):
    state = StateVector.zero(4)
    for kind, a, b, angle in ops:
        if kind == "CNOT":
            if a == b:
                continue
            g = CNOT(a, b)
        elif kind == "RZ":
            g = RZ(a, angle)
        else:
            g = H(a) if kind == "H" else X(a)
        state = apply_gate(state, g)
        assert abs(state.norm() - 1) < 1e-10


def test_trajectory_norm_preserved_under_errors():
    plan = ring_embedding(5)
    program = compile_program(mqc_circuit(plan, 0.4), NoiseModel(0.05, 0.1, 0.05, 0.02))
    rng = np.random.default_rng(1)
    amp = run_program(program, sample_patterns(program, 64, rng))
    norms = np.linalg.norm(amp.reshape(amp.shape[0], -1), axis=1)
    assert np.allclose(norms, 1, atol=1e-10)


def test_bell_sampling_noiseless():
    circ = ghz_encoder(ring_embedding(2))
    counts = run_shots(circ, None, 8192, seed=4).counts
    assert set(counts) <= {"00", "11"}
    sigma = math.sqrt(8192 * 0.25)
    for key in ("00", "11"):
        assert abs(counts[key] - 4096) < 5 * sigma


def test_small_bell_only_correlated_strings():
    counts = run_shots(ghz_encoder(ring_embedding(2)), None, 1000, seed=0).counts
    assert set(counts) <= {"00", "11"}


def test_deterministic_readout_flip():
    noise = NoiseModel(readout={0: CalibrationMatrix.from_flips(1.0, 0.0, 0)})
    circ = ghz_encoder(ring_embedding(3))
    counts = run_shots(circ, noise, 4000, seed=2).counts
    # qubit 0 reads 1 whether it was 0 (flipped) or 1 (kept)
    assert set(counts) <= {"100", "111"}
    assert abs(counts.get("100", 0) - 2000) < 5 * math.sqrt(1000)


def test_seed_determinism_and_dedup_transparency():
    plan = ring_embedding(4)
    circ = mqc_circuit(plan, 0.3)
    noise = NoiseModel(0.01, 0.05, 0.02, 0.01, {q: CalibrationMatrix.from_flips(0.02, 0.03, q) for q in range(4)})
    a = run_shots(circ, noise, 3000, seed=9)
    b = run_shots(circ, noise, 3000, seed=9)
    c = run_shots(circ, noise, 3000, seed=9, dedup=False)
    assert a.counts == b.counts == c.counts
    assert run_shots(circ, noise, 3000, seed=10).counts != a.counts


def test_chunked_shots_sum():
    counts = run_shots(ghz_encoder(ring_embedding(3)), NoiseModel(p2=0.05), 20000, seed=1)
    assert counts.shots == 20000 == sum(counts.counts.values())


def test_population_matches_exact_oracle_p2():
    plan = ring_embedding(4)
    circ = population_circuit(plan)
    noise = NoiseModel(p2=0.1)
    exact = outcome_distribution(circ, noise)
    p_exact = exact[0] + exact[-1]
    shots = 8192
    counts = run_shots(circ, noise, shots, seed=3).counts
    p_hat = (counts.get("0000", 0) + counts.get("1111", 0)) / shots
    sigma = math.sqrt(p_exact * (1 - p_exact) / shots)
    assert abs(p_hat - p_exact) < 3 * sigma


def test_shot_distribution_converges():
    plan = ring_embedding(3)
    circ = mqc_circuit(plan, 0.5)
    noise = NoiseModel(0.02, 0.05, 0.05, 0.0, {0: CalibrationMatrix.from_flips(0.05, 0.02, 0)})
    exact = outcome_distribution(circ, noise)
    tv = []
    for shots in (1 << 11, 1 << 17):
        counts = run_shots(circ, noise, shots, seed=5).counts
        emp = np.zeros(8)
        for k, v in counts.items():
            emp[int(k, 2)] = v / shots
        tv.append(0.5 * np.abs(emp - exact).sum())
    assert tv[1] < tv[0]
    assert tv[1] < 5 * math.sqrt(8 / (1 << 17))


def test_ideal_probabilities_keep_drift_only():
    plan = ring_embedding(3)
    circ = mqc_circuit(plan, 0.0)
    assert ideal_probabilities(circ, NoiseModel(p2=0.3))[0] == pytest.approx(1.0)


def test_resource_cap():
    with pytest.raises(ResourceError):
        compile_program(ghz_encoder(ring_embedding(6)), NoiseModel(), max_qubits=5)


def test_noise_model_validation_and_json():
    with pytest.raises(ValueError):
        NoiseModel(p1=1.5)
    m = NoiseModel(0.001, 0.01, 0.002, 0.01, {3: CalibrationMatrix.from_flips(0.01, 0.02, 3)})
    back = NoiseModel.from_json(m.to_json())
    assert back.to_json() == m.to_json()
    assert NoiseModel().is_noiseless
