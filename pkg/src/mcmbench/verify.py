"""Exact-mode invariant suite used by ``mcmbench verify``."""

from __future__ import annotations

import itertools
import math

import numpy as np

from .channels import (
    NoiseModel,
    apply_instrument_dual,
    apply_instrument_physical,
    fidelities_from_rates,
    gauge_transform,
    pauli_vector,
    random_instrument,
    random_spam,
    rates_from_fidelities,
)
from .pauli import LocalClifford, PauliOp, all_paulis, named_gate, symplectic_inner
from .protocol import compile_path, estimate_path, true_path_value
from .ptgraph import build_ptg, coboundary, cycle_basis, random_path
from .simulator import CircuitSpec, enumerate_expectation

TOL_TRANSFORM = 1e-12
TOL_EXACT = 1e-10


def naive_fidelities(rates: np.ndarray, n: int, m: int) -> np.ndarray:
    """Direct quadruple sum, used as an oracle for the fast transform."""
    A = 1 << n
    paulis = list(all_paulis(m))
    out = np.zeros_like(rates)
    for x, y, qi in itertools.product(range(A), range(A), range(4**m)):
        total = 0.0
        for a, b, pi in itertools.product(range(A), range(A), range(4**m)):
            par = bin(a & x).count("1") + bin(b & y).count("1") + symplectic_inner(paulis[pi], paulis[qi])
            total += (-1) ** par * rates[a, b, pi]
        out[x, y, qi] = total
    return out


def random_state(nq: int, rng: np.random.Generator) -> np.ndarray:
    g = rng.normal(size=(1 << nq, 1 << nq)) + 1j * rng.normal(size=(1 << nq, 1 << nq))
    rho = g @ g.conj().T
    return rho / np.trace(rho)


def random_local(nq: int, rng) -> LocalClifford:
    return LocalClifford(tuple(int(v) for v in rng.integers(24, size=nq)))


def random_circuit(n: int, m: int, depth: int, rng) -> CircuitSpec:
    nq = n + m
    obs = PauliOp.from_index(int(rng.integers(1, 4**nq)), nq)
    return CircuitSpec(
        n,
        m,
        random_local(nq, rng),
        tuple(random_local(nq, rng) for _ in range(max(depth - 1, 0))),
        obs,
        tuple(int(v) for v in rng.integers(1 << n, size=depth)),
        depth,
    )


def gauge_test_model(seed: int, g=None) -> NoiseModel:
    """Noisy enough (and with mixed enough SPAM) that small gauge moves stay physical."""
    g = g or named_gate("cnot", 1, 1)
    inst = random_instrument(1, 1, 0.45, seed, concentration=200.0)
    return NoiseModel(inst, g, random_spam(2, seed + 1000, prep_error=0.8, meas_error=0.2))


def run_suite(seeds) -> list[str]:
    failures = []
    g = named_gate("cnot", 1, 1)
    graph = build_ptg(g, 1, 1)
    for seed in seeds:
        rng = np.random.default_rng(seed)
        for n, m in ((1, 1), (1, 2), (2, 1)):
            u = random_instrument(n, m, 0.1, seed)
            f = fidelities_from_rates(u)
            if np.abs(f.values - naive_fidelities(u.rates, n, m)).max() > TOL_TRANSFORM:
                failures.append(f"seed {seed}: fast transform disagrees with direct sum for n={n}, m={m}")
            if np.abs(rates_from_fidelities(f).rates - u.rates).max() > TOL_TRANSFORM:
                failures.append(f"seed {seed}: transform round trip failed for n={n}, m={m}")

        u = random_instrument(1, 1, 0.1, seed)
        rho = random_state(2, rng)
        for k in range(2):
            phys = pauli_vector(apply_instrument_physical(u, g, rho, k))
            dual = apply_instrument_dual(u.fidelities(), g, pauli_vector(rho), k)
            if np.abs(phys - dual).max() > TOL_TRANSFORM:
                failures.append(f"seed {seed}: dual action disagrees with physical action (k={k})")

        model = NoiseModel(u, g, random_spam(2, seed + 1, 0.05, 0.05))
        for _ in range(4):
            path = random_path(graph, int(rng.integers(1, 5)), rng)
            exp = compile_path(path, g, 1, 1)
            rep = estimate_path(exp, model, exact=True)
            if rep.failed or abs(rep.value - true_path_value(exp, model)) > TOL_EXACT:
                failures.append(f"seed {seed}: path identity fails for {path}")

        gm = gauge_test_model(seed)
        nu = {v: float(rng.uniform(-1, 1)) for v in range(1, 4)}
        for eta in (1.02, 1.05):
            moved = gauge_transform(gm, nu, eta)
            for _ in range(3):
                spec = random_circuit(1, 1, 3, rng)
                if abs(enumerate_expectation(spec, gm) - enumerate_expectation(spec, moved)) > TOL_EXACT:
                    failures.append(f"seed {seed}: gauge transform changed a circuit expectation")
            before, after = np.log(gm.fidelities.values), np.log(moved.fidelities.values)
            for cyc in cycle_basis(graph):
                if abs(cyc.dot(after) - cyc.dot(before)) > TOL_EXACT:
                    failures.append(f"seed {seed}: gauge transform changed a cycle functional")
            cut = coboundary(nu, graph)
            expected = sum(c * c for c in cut.values()) * math.log(eta)
            if abs(cut.dot(after) - cut.dot(before) - expected) > TOL_EXACT:
                failures.append(f"seed {seed}: cut functional shift is wrong")
    return failures
