import json

import numpy as np
import pytest

from mcmbench.channels import NoiseModel, apply_instrument_physical, random_general_instrument, random_instrument, random_spam
from mcmbench.pauli import LocalClifford, PauliOp, cnot, named_gate, pattern
from mcmbench.simulator import (
    CircuitSpec,
    enumerate_expectation,
    fourier_sign,
    outcome_distribution,
    run_circuit,
    run_circuit_arrays,
    write_shot_log,
)
from mcmbench.verify import random_circuit


def physical_expectation(spec, model):
    """Branch over outcomes with dense density matrices."""
    h0 = spec.prep.unitary()
    states = [(1.0, h0 @ model.spam.prep_state @ h0.conj().T)]
    for i in range(spec.depth):
        nxt = []
        for w, rho in states:
            for k in range(1 << spec.n):
                sgn = -1.0 if bin(k & spec.fourier_mask[i]).count("1") % 2 else 1.0
                out = apply_instrument_physical(model.instrument, model.gate, rho, k)
                if i < spec.depth - 1:
                    h = spec.interleavers[i].unitary()
                    out = h @ out @ h.conj().T
                nxt.append((w * sgn, out))
        states = nxt
    obs = spec.observable.to_matrix()
    lam = model.spam.term_fidelity(pattern(spec.observable))
    return sum(w * lam * np.trace(obs @ rho).real for w, rho in states)


@pytest.fixture
def model():
    return NoiseModel(random_instrument(1, 1, 0.1, 3), named_gate("cnot", 1, 1), random_spam(2, 4, 0.05, 0.05))


def test_spec_validation():
    with pytest.raises(ValueError):
        CircuitSpec(1, 1, LocalClifford.identity(2), (), PauliOp.from_string("ZZ"), (0, 0), 2)
    with pytest.raises(ValueError):
        CircuitSpec(1, 1, LocalClifford.identity(3), (), PauliOp.from_string("ZZ"), (0,), 1)


@pytest.mark.parametrize(
    "outcomes, mask, expected",
    [([[0, 1], [1, 1]], (1, 1), [-1, 1]), ([[3], [2]], (2,), [-1, -1]), ([[3]], (0,), [1])],
)
def test_fourier_sign(outcomes, mask, expected):
    np.testing.assert_array_equal(fourier_sign(np.array(outcomes), mask), expected)


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("depth", [0, 1, 3])
def test_exact_evaluators_agree(seed, depth, model):
    spec = random_circuit(1, 1, depth, np.random.default_rng(seed))
    fourier = enumerate_expectation(spec, model)
    assert enumerate_expectation(spec, model, method="tree") == pytest.approx(fourier, abs=1e-12)
    assert physical_expectation(spec, model) == pytest.approx(fourier, abs=1e-12)


def test_two_ancilla_evaluators_agree():
    m = NoiseModel(random_instrument(2, 1, 0.1, 1), cnot(3, 0, 1).compose(cnot(3, 0, 2)), random_spam(3, 2))
    spec = random_circuit(2, 1, 2, np.random.default_rng(7))
    assert physical_expectation(spec, m) == pytest.approx(enumerate_expectation(spec, m), abs=1e-12)


def test_outcome_distribution_is_normalized(model):
    spec = random_circuit(1, 1, 3, np.random.default_rng(1))
    dist = outcome_distribution(spec, model)
    assert len(dist) == 8
    assert sum(p for p, _ in dist.values()) == pytest.approx(1.0, abs=1e-12)
    assert all(p >= -1e-12 and abs(r) <= p + 1e-12 for p, r in dist.values())


@pytest.mark.parametrize("explicit", [False, True])
def test_sampling_matches_exact(explicit, model):
    spec = random_circuit(1, 1, 2, np.random.default_rng(5))
    exact = enumerate_expectation(spec, model)
    shots = 40000
    out, r = run_circuit_arrays(spec, model, shots, np.random.default_rng(0), explicit_measurement=explicit)
    vals = fourier_sign(out, spec.fourier_mask) * r
    assert abs(vals.mean() - exact) < 5 / np.sqrt(shots)


def test_outcome_frequencies_match_distribution(model):
    spec = random_circuit(1, 1, 2, np.random.default_rng(9))
    dist = outcome_distribution(spec, model)
    shots = 40000
    out, _ = run_circuit_arrays(spec, model, shots, np.random.default_rng(1))
    for seq, (p, _) in dist.items():
        freq = np.mean(np.all(out == np.array(seq), axis=1))
        assert abs(freq - p) < 5 * np.sqrt(p * (1 - p) / shots) + 1e-3


def test_raw_instrument_averages_to_twirl():
    g = named_gate("cnot", 1, 1)
    raw = random_general_instrument(1, 1, g, strength=0.1, seed=2)
    m = NoiseModel.from_raw(raw, g, random_spam(2, 3))
    spec = random_circuit(1, 1, 2, np.random.default_rng(4))
    exact = enumerate_expectation(spec, m)
    rng = np.random.default_rng(0)
    vals = []
    for _ in range(400):
        out, r = run_circuit_arrays(spec, m, 100, rng)
        vals.append(np.mean(fourier_sign(out, spec.fourier_mask) * r))
    assert abs(np.mean(vals) - exact) < 5 * np.std(vals) / np.sqrt(len(vals)) + 1e-3


def test_results_are_plus_minus_one(model):
    spec = random_circuit(1, 1, 2, np.random.default_rng(2))
    recs = run_circuit(spec, model, 50, np.random.default_rng(0))
    assert {rec.r for rec in recs} <= {-1, 1}
    assert all(len(rec.mcm_outcomes) == 2 for rec in recs)


def test_seeded_runs_repeat(model):
    spec = random_circuit(1, 1, 2, np.random.default_rng(2))
    a = run_circuit_arrays(spec, model, 100, np.random.default_rng(11))
    b = run_circuit_arrays(spec, model, 100, np.random.default_rng(11))
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_write_shot_log(tmp_path, model):
    spec = random_circuit(1, 1, 2, np.random.default_rng(2))
    out, r = run_circuit_arrays(spec, model, 5, np.random.default_rng(0))
    csv_path, meta_path = write_shot_log(tmp_path / "shots.csv", out, r, 1, {"digest": spec.digest()})
    lines = csv_path.read_text().strip().splitlines()
    assert len(lines) == 6
    assert json.loads(meta_path.read_text())["digest"] == spec.digest()


@pytest.mark.parametrize("label", ["ZI", "XY", "IY", "YZ"])
def test_explicit_measurement_mean(label):
    from mcmbench.simulator import measure_pauli_batch
    from mcmbench.verify import random_state

    spam = random_spam(2, 6, 0.05, 0.1)
    obs = PauliOp.from_string(label)
    rho = random_state(2, np.random.default_rng(3))
    shots = 50000
    r = measure_pauli_batch(obs, np.broadcast_to(rho, (shots, 4, 4)), spam, np.random.default_rng(0), explicit=True)
    expected = spam.term_fidelity(pattern(obs)) * np.trace(obs.to_matrix() @ rho).real
    assert abs(r.mean() - expected) < 5 / np.sqrt(shots)
