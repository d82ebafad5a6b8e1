import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ghzlab.calcheck import (FixtureError, PovmEffect, PreparationState, coherence_metric, depolarizing_gauge,
                             echo_state, feasible_interval, fixture_report, frobenius, gauge_optimize, ghz_density,
                             ghz_fidelity, kron_all, load_fixtures, locality_check, locality_experiment,
                             povm_probabilities, povm_to_calibration, qrem_overestimate_experiment,
                             random_density, readout_channel)
from ghzlab.mitigation import CalibrationMatrix

IDEAL = np.diag([1.0, 0.0])


def _effect(a, b, re, im):
    return PovmEffect(np.array([[a, re + 1j * im], [re - 1j * im, b]]))


effects = st.builds(_effect, st.floats(0.9, 0.99), st.floats(0.02, 0.1), st.floats(-0.007, 0.007),
                    st.floats(-0.007, 0.007))


def _state(theta, phi, r):
    bloch = r * np.array([np.sin(theta) * np.cos(phi), np.sin(theta) * np.sin(phi), np.cos(theta)])
    x, y, z = bloch
    return 0.5 * np.array([[1 + z, x - 1j * y], [x + 1j * y, 1 - z]])


def test_effect_validation():
    with pytest.raises(FixtureError):
        PovmEffect(np.array([[1.0, 0.1], [0.2, 0.0]]))
    with pytest.raises(FixtureError):
        PovmEffect(np.diag([1.2, 0.0]))
    with pytest.raises(FixtureError):
        PreparationState(np.diag([0.6, 0.6]))


def test_povm_calibration_examples():
    fx = {f.qubit: f for f in load_fixtures()}
    a1 = povm_to_calibration(fx[1].E0).matrix
    assert np.allclose(a1, [[0.9913, 0.0630], [0.0087, 0.9370]])
    a3 = povm_to_calibration(fx[3].E0).matrix
    assert np.allclose(a3, [[0.9964, 0.0093], [0.0036, 0.9907]])
    assert np.allclose(povm_to_calibration(PovmEffect(IDEAL)).matrix, np.eye(2))


@settings(max_examples=60, deadline=None)
@given(effects)
def test_povm_calibration_is_column_stochastic(e0):
    a = povm_to_calibration(e0, e0.complement()).matrix
    assert np.allclose(a.sum(axis=0), 1)


def test_gauge_examples():
    e0, e1 = IDEAL, np.eye(2) - IDEAL
    g = depolarizing_gauge(e0, e1, IDEAL, 0.0)
    assert np.allclose(g.E0, e0) and np.allclose(g.rho0, IDEAL)
    g = depolarizing_gauge(e0, e1, IDEAL, 1.0)
    assert np.allclose(g.E0, np.eye(2) / 2) and np.allclose(g.E1, np.eye(2) / 2)
    g = depolarizing_gauge(e0, e1, np.eye(2) / 2, 1.0)
    assert np.allclose(g.rho0, IDEAL) and g.positive


@settings(max_examples=80, deadline=None)
@given(effects, st.floats(0, np.pi), st.floats(0, 2 * np.pi), st.floats(0.2, 1.0), st.floats(-0.3, 0.15))
def test_exact_gauge_preserves_observables(e0, theta, phi, r, p):
    rho = _state(theta, phi, r)
    e1 = e0.complement()
    lo, hi = feasible_interval(rho, (-0.3, 0.15), form="exact")
    if not lo <= p <= hi:
        return
    g = depolarizing_gauge(e0, e1, rho, p, form="exact")
    for before, after in ((e0.matrix, g.E0), (e1.matrix, g.E1)):
        assert np.trace(g.rho0 @ after).real == pytest.approx(np.trace(rho @ before).real, abs=1e-9)


def test_printed_gauge_is_not_observable_preserving():
    g = depolarizing_gauge(IDEAL, np.eye(2) - IDEAL, IDEAL, -0.1, form="printed")
    before = np.trace(IDEAL @ IDEAL).real
    after = np.trace(g.rho0 @ g.E0).real
    assert after == pytest.approx(1 - 0.01 / 2)
    assert abs(after - before) > 1e-3


def test_gauge_optimize_zero_distance():
    fx = load_fixtures()[0]
    a = povm_to_calibration(fx.E0).matrix
    p, d = gauge_optimize(a, fx.E0, fx.E0.complement(), fx.rho0)
    assert p == pytest.approx(0, abs=1e-6) and d == pytest.approx(0, abs=1e-9)


def test_gauge_constrained_distances():
    fx = {f.qubit: f for f in load_fixtures()}
    for q, expected in ((1, 0.0231), (25, 0.0002)):
        f = fx[q]
        _, d = gauge_optimize(f.A_simple, f.E0, f.E0.complement(), f.rho0, p_range=(0.0, 0.0))
        assert round(d, 4) == expected


def test_coherence_metrics():
    fx = {f.qubit: f for f in load_fixtures()}
    modulus, real = coherence_metric(fx[1].E0)
    assert real == pytest.approx(0.0046)
    assert modulus == pytest.approx(abs(-0.0046 + 0.0255j))
    assert round(modulus, 4) == 0.0259
    assert coherence_metric(PovmEffect(np.diag([0.97, 0.02]))) == (0.0, 0.0)


def test_report_real_part_matches_printed_column():
    rows = fixture_report(load_fixtures())
    assert [r["qubit"] for r in rows] == [1, 3, 12, 14, 23, 25]
    for r in rows:
        assert round(r["coherence_real"], 4) == r["reported_coherence"]


def test_fixture_errors(tmp_path):
    p = tmp_path / "f.json"
    p.write_text(json.dumps([{"qubit": 1, "E0": [[1, 0], [0, 0]]}]))
    with pytest.raises(FixtureError):
        load_fixtures(p)
    p.write_text("[")
    with pytest.raises(FixtureError):
        load_fixtures(p)


def test_ideal_projector_fixture(tmp_path):
    p = tmp_path / "f.json"
    p.write_text(json.dumps([{"qubit": 0, "E0": [[1, 0], [0, 0], [0, 0], [0, 0]], "A_simple": [[1, 0], [0, 1]]}]))
    (row,) = fixture_report(load_fixtures(p))
    assert row["distance"] == 0 and row["coherence_real"] == 0 and row["coherence_modulus"] == 0


def test_locality_tensor_product_is_zero():
    mats = [CalibrationMatrix.from_flips(0.01 * k, 0.02 * k).matrix for k in range(1, 5)]
    assert locality_check(kron_all(mats), mats).distance == 0.0
    assert np.allclose(readout_channel([(0.01 * k, 0.02 * k) for k in range(1, 5)]), kron_all(mats))


def test_locality_null_and_correlated():
    flips = [(0.02, 0.04), (0.01, 0.03), (0.015, 0.05), (0.01, 0.02)]
    local = locality_experiment(flips, shots=1 << 14, seed=3, null_samples=100)
    assert abs(local.z) < 5
    corr = locality_experiment(flips, shots=1 << 14, seed=3, correlated=(0, 1, 0.05), null_samples=100)
    assert corr.z > 5


def test_echo_state_overlap_identity():
    rng = np.random.default_rng(4)
    n = 3
    rho = 0.6 * ghz_density(n) + 0.4 * random_density(n, rng)
    from ghzlab.calcheck import _rotated

    for phi in (0.0, 0.7):
        sigma = echo_state(rho, n, phi)
        overlap = np.trace(_rotated(rho, n, phi) @ rho).real
        assert sigma[0, 0].real == pytest.approx(overlap, abs=1e-12)
        assert np.trace(sigma).real == pytest.approx(1)


def test_povm_probabilities_against_kron():
    rng = np.random.default_rng(5)
    n = 3
    rho = random_density(n, rng)
    eff = [np.array([[0.98, 0.01 + 0.02j], [0.01 - 0.02j, 0.03]]), np.diag([0.95, 0.04]), IDEAL]
    probs = povm_probabilities(rho, eff)
    pairs = [(e, np.eye(2) - e) for e in eff]
    for x in range(8):
        bits = [(x >> (n - 1 - k)) & 1 for k in range(n)]
        op = kron_all([pairs[k][b] for k, b in enumerate(bits)])
        assert probs[x] == pytest.approx(np.trace(rho @ op).real, abs=1e-12)


def test_overestimate_small_cases():
    res = qrem_overestimate_experiment(n_qubits=3, p_grid=(0.0,), noise_states=("mixed",), samples=1,
                                       ideal_measurement=True)
    assert abs(res.max_average_overestimate) < 1e-9
    res = qrem_overestimate_experiment(n_qubits=4, p_grid=(1.0,), noise_states=("mixed",), samples=1)
    cell = res.cells[0]
    assert cell.mean_fidelity == pytest.approx(1 / 16)
    assert abs(cell.mean_overestimate) < 1e-2


def test_overestimate_coarse_bound():
    res = qrem_overestimate_experiment(n_qubits=4, samples=10, seed=1)
    assert res.max_average_overestimate <= 1e-2
    assert ghz_fidelity(ghz_density(4)) == pytest.approx(1)
