from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcmbench.channels import NoiseModel, gauge_transform, random_instrument, random_spam
from mcmbench.pauli import LocalClifford, PauliOp, cnot, named_gate
from mcmbench.ptgraph import (
    OneChain,
    balance,
    boundary,
    build_ptg,
    build_syndrome_tableau,
    closed_walks,
    coboundary,
    cycle_basis,
    cycle_cut_decompose,
    directed_cycle_basis,
    edge_name,
    error_rate_chain,
    is_learnable,
    parse_edge_name,
    proposition_chains,
    random_path,
    signed_parts,
    walsh_cycle_invariance_check,
)

# (edge, src pattern, dst pattern); patterns as ints with the system qubit as MSB
CNOT_EDGES = [
    ("I00", 0, 0), ("X00", 3, 2), ("Y00", 3, 2), ("Z00", 2, 2),
    ("I01", 0, 1), ("X01", 3, 3), ("Y01", 3, 3), ("Z01", 2, 3),
    ("I10", 3, 0), ("X10", 3, 2), ("Y10", 3, 2), ("Z10", 1, 2),
    ("I11", 3, 1), ("X11", 3, 3), ("Y11", 3, 3), ("Z11", 1, 3),
]
CNOT_N0_EDGES = [
    ("II", 0, 0), ("IX", 1, 1), ("IY", 3, 1), ("IZ", 3, 1),
    ("XI", 3, 2), ("XX", 2, 3), ("XY", 3, 3), ("XZ", 3, 3),
    ("YI", 3, 2), ("YX", 2, 3), ("YY", 3, 3), ("YZ", 3, 3),
    ("ZI", 2, 2), ("ZX", 3, 3), ("ZY", 1, 3), ("ZZ", 1, 3),
]


@pytest.fixture(scope="module")
def cnot_graph():
    return build_ptg(named_gate("cnot", 1, 1), 1, 1)


def test_cnot_graph_golden(cnot_graph):
    got = [(edge_name(e.key, 1, 1), e.src, e.dst) for e in cnot_graph.edges]
    assert got == CNOT_EDGES
    assert cnot_graph.cycle_dimension() == 13
    assert len(cycle_basis(cnot_graph)) == 13


def test_cnot_no_ancilla_graph_golden():
    g = build_ptg(cnot(2, 0, 1), 0, 2)
    assert [(edge_name(e.key, 0, 2), e.src, e.dst) for e in g.edges] == CNOT_N0_EDGES


def test_directed_basis(cnot_graph):
    basis = directed_cycle_basis(cnot_graph)
    names = ["+".join(edge_name(k, 1, 1) for k in c) for c in basis]
    assert names == [
        "I00", "Z00", "X01", "Y01", "X11", "Y11", "X00+Z01", "Y00+Z01",
        "Z01+X10", "Z01+Y10", "I11+Z11", "I01+Z11+I10", "Z01+I11+Z10",
    ]
    dense = np.array([cnot_graph.to_dense(OneChain({k: 1 for k in c})) for c in basis])
    assert np.linalg.matrix_rank(dense) == 13


@pytest.mark.parametrize("name", ["I01", "Z10", "Y11"])
def test_edge_names_round_trip(name):
    assert edge_name(parse_edge_name(name, 1, 1), 1, 1) == name


def test_cycles_have_zero_boundary(cnot_graph):
    for c in cycle_basis(cnot_graph):
        assert not boundary(c, cnot_graph)


def test_incidence_matches_boundary(cnot_graph, rng):
    vec = rng.normal(size=16)
    chain = cnot_graph.from_dense(vec)
    b = boundary(chain, cnot_graph)
    expected = cnot_graph.incidence @ vec
    got = np.array([b.get(v, 0.0) for v in range(cnot_graph.n_vertices)])
    np.testing.assert_allclose(got, expected, atol=1e-12)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-3, 3), min_size=16, max_size=16))
def test_decomposition_is_orthogonal(vals):
    g = build_ptg(named_gate("cnot", 1, 1), 1, 1)
    mu = g.from_dense(np.array(vals))
    d = cycle_cut_decompose(mu, g)
    cyc, cut = g.to_dense(d.cycle_part), g.to_dense(d.cut_part)
    np.testing.assert_allclose(cyc + cut, vals, atol=1e-9)
    assert abs(cyc @ cut) < 1e-8
    assert d.residual < 1e-9
    assert not boundary(d.cycle_part, g) or max(abs(v) for v in boundary(d.cycle_part, g).values()) < 1e-9


def test_coboundary_is_not_learnable(cnot_graph):
    cut = coboundary({1: 1.0, 3: -2.0}, cnot_graph)
    assert not is_learnable(cut, cnot_graph)
    assert is_learnable(cycle_basis(cnot_graph)[3], cnot_graph)


def test_cycle_functionals_are_gauge_invariant(cnot_graph):
    model = NoiseModel(random_instrument(1, 1, 0.45, 2, concentration=200.0), named_gate("cnot", 1, 1), random_spam(2, 3, 0.8, 0.2))
    moved = gauge_transform(model, {1: 0.3, 2: -0.4, 3: 0.5}, 1.05)
    a, b = np.log(model.fidelities.values), np.log(moved.fidelities.values)
    for c in cycle_basis(cnot_graph):
        assert c.dot(a) == pytest.approx(c.dot(b), abs=1e-12)


@pytest.mark.parametrize("p", "IXYZ")
def test_error_rate_chains_with_both_flips_are_exact_cycles(p, cnot_graph):
    chain = error_rate_chain(1, 1, p, cnot_graph, exact=True)
    assert all(isinstance(v, Fraction) for v in chain.values())
    assert not boundary(chain, cnot_graph)


def test_readout_only_rate_is_not_learnable(cnot_graph):
    assert boundary(error_rate_chain(1, 0, "I", cnot_graph, exact=True), cnot_graph)


def test_error_rate_linearization(cnot_graph):
    from mcmbench.analysis import linearized_rate

    model = NoiseModel(random_instrument(1, 1, 0.002, 4), named_gate("cnot", 1, 1), random_spam(2, 1))
    for a, b, p in [(1, 1, "I"), (0, 1, "X"), (1, 0, "Z")]:
        truth = model.instrument.rate(a, b, p)
        assert linearized_rate(a, b, p, model) == pytest.approx(truth, abs=5e-5)


@pytest.mark.parametrize("kind, p", [(1, "Z"), (2, "I"), (2, "Z"), (3, "I"), (3, "Z")])
def test_proposition_chains_boundary_free(kind, p, cnot_graph):
    chain = proposition_chains(kind, cnot_graph, a=1, b=1, p=p, stabilizers=["Z"])
    assert chain
    assert not boundary(chain, cnot_graph)


@pytest.mark.parametrize("kind, a, b", [(1, 1, 2), (1, 3, 3), (2, 0, 0), (3, 1, 0), (3, 2, 0), (3, 3, 0)])
@pytest.mark.parametrize("p", ["II", "ZZ", "YY"])
def test_syndrome_chains_boundary_free(kind, a, b, p):
    stabs = ["ZZ", "XX"]
    g = build_ptg(build_syndrome_tableau(stabs), 2, 2)
    chain = proposition_chains(kind, g, a=a, b=b, p=p, stabilizers=stabs)
    assert not boundary(chain, g)


def test_proposition_rejects_anticommuting_pauli(cnot_graph):
    with pytest.raises(ValueError):
        proposition_chains(2, cnot_graph, p="X", stabilizers=["Z"])


def test_syndrome_tableau_for_single_z_is_cnot():
    tab = build_syndrome_tableau([PauliOp.from_string("Z")])
    ref = named_gate("cnot", 1, 1)
    for i in range(16):
        p = PauliOp.from_index(i, 2)
        assert tab.conjugate(p) == ref.conjugate(p)


@pytest.mark.parametrize("seed", range(3))
def test_walsh_invariance_random_cliffords(seed):
    rng = np.random.default_rng(seed)
    tab = LocalClifford(tuple(rng.integers(24, size=2))).tableau().compose(cnot(2, 0, 1)).compose(
        LocalClifford(tuple(rng.integers(24, size=2))).tableau()
    )
    assert walsh_cycle_invariance_check(build_ptg(tab, 0, 2))


def test_walsh_invariance_cnot():
    assert walsh_cycle_invariance_check(build_ptg(cnot(2, 0, 1), 0, 2))


def test_balance_and_walks(cnot_graph):
    chain = error_rate_chain(1, 1, "I", cnot_graph, exact=True)
    chain = OneChain({k: v for k, v in chain.items() if k != (0, 0, 0)})
    pos, neg = signed_parts(chain, Fraction(1, 16))
    w = balance(pos, neg, cnot_graph)
    for part in (pos, neg):
        total = OneChain(dict(part)) + w
        assert not boundary(total, cnot_graph)
        walks = closed_walks(total, cnot_graph)
        counts = {}
        for walk in walks:
            assert cnot_graph.edge(walk[-1]).dst == cnot_graph.edge(walk[0]).src
            for a, b in zip(walk, walk[1:]):
                assert cnot_graph.edge(a).dst == cnot_graph.edge(b).src
            for k in walk:
                counts[k] = counts.get(k, 0) + 1
        assert counts == dict(total)
    assert sorted(sum(total.values()) for total in (OneChain(dict(pos)) + w, OneChain(dict(neg)) + w)) == [9, 10]


def test_random_path_is_connected(cnot_graph, rng):
    for length in (1, 3, 6):
        path = random_path(cnot_graph, length, rng)
        assert len(path) == length
        for a, b in zip(path, path[1:]):
            assert cnot_graph.edge(a).dst == cnot_graph.edge(b).src


def test_graph_exports(cnot_graph):
    data = cnot_graph.to_json()
    assert len(data["edges"]) == 16
    assert cnot_graph.to_dot().startswith("digraph")


def test_no_directed_basis_when_edges_cross_components():
    g = build_ptg(build_syndrome_tableau(["ZZ", "XX"]), 2, 2)
    assert directed_cycle_basis(g) is None
    assert len(cycle_basis(g)) == g.cycle_dimension() == 241


def test_directed_basis_for_ancilla_free_cnot():
    g = build_ptg(cnot(2, 0, 1), 0, 2)
    basis = directed_cycle_basis(g)
    assert len(basis) == g.cycle_dimension() == 14
    for c in basis:
        assert not boundary(OneChain({k: 1 for k in c}), g)
