import csv
import io
import math

import numpy as np
import pytest

from mcmbench.analysis import (
    CorrelationQuery,
    EstimationFailed,
    all_correlation_queries,
    characterize,
    correlation_chain,
    error_rate_walks,
    independence_test,
    learnable_rate_combinations,
    linearized_rate,
    rate_label,
    reconstruct_error_rate,
)
from mcmbench.channels import NoiseModel, random_instrument, random_measure_and_prepare, random_spam
from mcmbench.pauli import named_gate
from mcmbench.protocol import ShotBudget
from mcmbench.ptgraph import boundary, build_ptg, build_syndrome_tableau, edge_name

G = named_gate("cnot", 1, 1)
GRAPH = build_ptg(G, 1, 1)


@pytest.fixture(scope="module")
def model():
    return NoiseModel(random_instrument(1, 1, 0.02, 11), G, random_spam(2, 12))


def test_exact_characterization(model):
    res = characterize(model, exact=True)
    assert len(res.cycle_estimates) == 13
    for c in res.cycle_estimates:
        assert c.geometric_mean == pytest.approx(c.truth, abs=1e-12)
    assert len(res.rows()) == 12
    assert res.cycle_estimates[0].trivial and res.cycle_estimates[0].geometric_mean == pytest.approx(1.0)


def test_characterization_exports(model):
    res = characterize(model, exact=True, include_trivial=False)
    rows = list(csv.DictReader(io.StringIO(res.to_csv())))
    assert [r["key"] for r in rows] == [c.name for c in res.cycle_estimates]
    assert float(rows[0]["value"]) == res.cycle_estimates[0].geometric_mean
    assert len(res.plot_data()) == 12
    assert len(res.to_json()["cycles"]) == 12


def test_sampled_characterization_is_deterministic(model):
    budget = ShotBudget(5, 20)
    a = characterize(model, budget, seed=3)
    b = characterize(model, budget, seed=3)
    assert [c.geometric_mean for c in a.cycle_estimates] == [c.geometric_mean for c in b.cycle_estimates]


def test_correlation_queries():
    qs = all_correlation_queries(1, 1)
    assert [q.label(1) for q in qs] == ["c^I_0,1,0,1", "c^X_0,1,0,1", "c^Y_0,1,0,1", "c^Z_0,1,0,1"]
    for q in qs:
        assert not boundary(correlation_chain(q, 1), GRAPH)
    assert len(all_correlation_queries(2, 1)) == 4 * 6 * 6
    with pytest.raises(ValueError):
        CorrelationQuery("I", 1, 0, 0, 1)


def test_independence_exact():
    mp = NoiseModel(random_measure_and_prepare(1, 1, 0.05, 2).to_usi(), G, random_spam(2, 3))
    planted = NoiseModel(random_instrument(1, 1, 0.05, 2, planted={(1, 1, "I"): 0.01}), G, random_spam(2, 3))
    qs = all_correlation_queries(1, 1)
    out = independence_test(mp, qs, exact=True)
    assert all(v.verdict == "consistent" and abs(v.value) < 1e-10 for v in out.values())
    out = independence_test(planted, qs, exact=True)
    assert any(v.verdict == "nonzero" for v in out.values())
    for v in out.values():
        assert v.value == pytest.approx(v.truth, abs=1e-12)


def test_independence_sampled_flags_planted_correlation():
    planted = NoiseModel(random_instrument(1, 1, 0.05, 2, planted={(1, 1, "I"): 0.02}), G, random_spam(2, 3))
    out = independence_test(planted, all_correlation_queries(1, 1)[:1], ShotBudget(20, 200), seed=1)
    (v,) = out.values()
    assert v.verdict == "nonzero"


@pytest.mark.parametrize("p", "IXYZ")
def test_error_rate_exact_matches_linearization(p):
    m = NoiseModel(random_instrument(1, 1, 0.005, 4), G, random_spam(2, 5))
    est = reconstruct_error_rate(1, 1, p, m, exact=True)
    assert est.value == pytest.approx(linearized_rate(1, 1, p, m), abs=1e-12)
    assert est.value == pytest.approx(m.instrument.rate(1, 1, p), abs=2e-5)
    assert est.key == f"p_1,1^{p}"


def test_error_rate_walks_shape():
    scale, pos, neg, w = error_rate_walks(1, 1, "I", GRAPH)
    assert scale == pytest.approx(1 / 16)
    assert sorted(sum(len(x) for x in part) for part in (pos, neg)) == [9, 10]
    assert {edge_name(k, 1, 1): v for k, v in w.items()} == {"Z01": 2}


def test_error_rate_repetitions(model):
    est = reconstruct_error_rate(1, 1, "I", model, ShotBudget(10, 10, 1, 100), seed=2, repetitions=3)
    assert len(est.details["repetition_values"]) == 3
    assert est.std == pytest.approx(np.std(est.details["repetition_values"], ddof=1) / math.sqrt(3))


def test_unlearnable_rate_raises():
    with pytest.raises(ValueError):
        error_rate_walks(1, 0, "I", GRAPH)


@pytest.mark.parametrize("n, p, expected", [(1, "X", "p_1,0^X"), (0, "XZ", "p^XZ")])
def test_rate_label(n, p, expected):
    assert rate_label(1 if n else 0, 0, p, n) == expected


def test_learnable_combinations_span_cycle_space():
    combos = learnable_rate_combinations(GRAPH, stabilizers=["Z"])
    assert len(combos) == 13
    dense = np.array([GRAPH.to_dense(c) for _, c in combos], dtype=float)
    assert np.linalg.matrix_rank(dense) == 13
    for _, c in combos:
        assert not boundary(c, GRAPH)
    assert combos[0][0] == "p_1,1^I"


def test_learnable_combinations_syndrome():
    g = build_ptg(build_syndrome_tableau(["ZZ", "XX"]), 2, 2)
    combos = learnable_rate_combinations(g, stabilizers=["ZZ", "XX"], max_support=2)
    assert combos
    for _, c in combos:
        assert not boundary(c, g)


def test_failed_walk_raises():
    from mcmbench.channels import UniformStochasticInstrument, SpamModel

    # X errors half the time zero out every Z and Y fidelity
    rates = np.zeros((2, 2, 4))
    rates[0, 0, 0] = rates[0, 0, 1] = 0.5
    m = NoiseModel(UniformStochasticInstrument(1, 1, rates), G, SpamModel.ideal(2))
    with pytest.raises(EstimationFailed):
        reconstruct_error_rate(1, 1, "I", m, exact=True)


def test_fundamental_cycle_fallback(model, monkeypatch):
    import mcmbench.analysis as analysis

    monkeypatch.setattr(analysis, "directed_cycle_basis", lambda graph: None)
    res = characterize(model, exact=True)
    assert len(res.cycle_estimates) == 13
    assert any(min(c.coefficients) < 0 for c in res.cycle_estimates)
    for c in res.cycle_estimates:
        assert c.geometric_mean == pytest.approx(c.truth, abs=1e-12)
    sampled = characterize(model, ShotBudget(20, 50), seed=1)
    for c in sampled.cycle_estimates:
        assert abs(c.geometric_mean - c.truth) < 5 * c.geometric_mean_std + 1e-12
