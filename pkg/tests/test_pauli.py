import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mcmbench.pauli import (
    CliffordTableau,
    LocalClifford,
    PauliOp,
    all_paulis,
    cnot,
    controlled_pauli,
    hadamard,
    named_gate,
    pattern,
    pattern_str,
    single_qubit_cliffords,
    solve_local_clifford,
    symplectic_inner,
)

X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]])
Z = np.diag([1.0 + 0j, -1.0])
MATS = {"I": np.eye(2, dtype=complex), "X": X, "Y": Y, "Z": Z}


def dense(label):
    out = np.eye(1, dtype=complex)
    for c in label:
        out = np.kron(out, MATS[c])
    return out


labels = st.integers(1, 3).flatmap(lambda n: st.tuples(st.text("IXYZ", min_size=n, max_size=n), st.text("IXYZ", min_size=n, max_size=n)))


@pytest.mark.parametrize("label", ["I", "XZ", "YYI", "ZIXY"])
def test_string_round_trip(label):
    p = PauliOp.from_string(label)
    assert str(p) == label
    assert PauliOp.from_index(p.index, len(label)) == p
    np.testing.assert_allclose(p.to_matrix(), dense(label))


def test_index_is_base_four_with_first_qubit_leading():
    assert PauliOp.from_string("XI").index == 4
    assert PauliOp.from_string("IZ").index == 3
    assert [str(p) for p in all_paulis(1)] == ["I", "X", "Y", "Z"]


@settings(max_examples=60, deadline=None)
@given(labels)
def test_product_matches_matrices(pair):
    a, b = (PauliOp.from_string(s) for s in pair)
    prod = a * b
    ma, mb = dense(pair[0]), dense(pair[1])
    # equal up to a phase
    phase = np.trace(prod.to_matrix().conj().T @ ma @ mb) / ma.shape[0]
    assert abs(abs(phase) - 1) < 1e-12
    commute = np.allclose(ma @ mb, mb @ ma)
    assert symplectic_inner(a, b) == (0 if commute else 1)


@pytest.mark.parametrize("label, expected", [("IZ", "01"), ("XI", "10"), ("YZ", "11"), ("II", "00")])
def test_pattern(label, expected):
    assert pattern_str(pattern(PauliOp.from_string(label)), 2) == expected


def _check_tableau(t: CliffordTableau):
    u = t.to_unitary()
    n = t.n_qubits
    for p in all_paulis(n):
        img, sign = t.conjugate(p)
        np.testing.assert_allclose(u @ p.to_matrix() @ u.conj().T, sign * img.to_matrix(), atol=1e-12)


@pytest.mark.parametrize(
    "tab",
    [cnot(2, 0, 1), cnot(2, 1, 0), hadamard(2, 1), cnot(3, 0, 2), controlled_pauli(3, 0, PauliOp.from_string("XZ"), 1)],
)
def test_tableau_matches_unitary(tab):
    assert tab.is_symplectic()
    _check_tableau(tab)


def test_cnot_known_images():
    t = cnot(2, 0, 1)
    assert t.conjugate(PauliOp.from_string("XI")) == (PauliOp.from_string("XX"), 1)
    assert t.conjugate(PauliOp.from_string("IZ")) == (PauliOp.from_string("ZZ"), 1)
    assert t.conjugate(PauliOp.from_string("YY")) == (PauliOp.from_string("XZ"), -1)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(0, 23), min_size=2, max_size=2), st.lists(st.integers(0, 23), min_size=2, max_size=2))
def test_compose_and_inverse(i1, i2):
    a = LocalClifford(tuple(i1)).tableau().compose(cnot(2, 0, 1))
    b = LocalClifford(tuple(i2)).tableau()
    ab = a.compose(b)
    np.testing.assert_allclose(
        np.abs(np.trace(ab.to_unitary().conj().T @ a.to_unitary() @ b.to_unitary())), 4, atol=1e-9
    )
    _check_tableau(ab)
    ident = ab.compose(ab.inverse())
    assert ident.symplectic_matrix().tolist() == CliffordTableau.identity(2).symplectic_matrix().tolist()
    for p in all_paulis(2):
        assert ident.conjugate(p) == (p, 1)


def test_single_qubit_cliffords_are_distinct():
    us = single_qubit_cliffords()
    assert len(us) == 24
    for a, b in itertools.combinations(us, 2):
        assert abs(abs(np.trace(a.conj().T @ b)) - 2) > 1e-6


@pytest.mark.parametrize("src, dst", [("XZ", "ZX"), ("YI", "ZI"), ("ZZY", "XYX"), ("IY", "IZ")])
def test_solve_local_clifford(src, dst):
    h = solve_local_clifford(PauliOp.from_string(src), PauliOp.from_string(dst))
    assert h.tableau().conjugate(PauliOp.from_string(src)) == (PauliOp.from_string(dst), 1)


def test_solve_local_clifford_rejects_pattern_change():
    with pytest.raises(ValueError):
        solve_local_clifford(PauliOp.from_string("XI"), PauliOp.from_string("XX"))


def test_json_round_trip():
    t = LocalClifford((3, 17)).tableau().compose(cnot(2, 1, 0))
    back = CliffordTableau.from_json(t.to_json())
    for p in all_paulis(2):
        assert back.conjugate(p) == t.conjugate(p)


def test_from_unitary():
    t = cnot(2, 0, 1).compose(hadamard(2, 0))
    back = CliffordTableau.from_unitary(t.to_unitary())
    for p in all_paulis(2):
        assert back.conjugate(p) == t.conjugate(p)


def test_named_gates():
    assert named_gate("identity", 1, 1).conjugate(PauliOp.from_string("XZ"))[0] == PauliOp.from_string("XZ")
    with pytest.raises(ValueError):
        named_gate("toffoli", 1, 1)
