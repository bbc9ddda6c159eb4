"""Density-matrix simulation of repeated-MCM circuits.

A circuit prepares the model's fixed state, rotates it with a noiseless local
Clifford, applies ``depth`` noisy MCMs separated by local-Clifford
interleavers and ends with a (noisy) Pauli measurement.  Shots are simulated
in batches: states have shape ``(S, d, d)``.
"""

from __future__ import annotations

import csv
import hashlib
import json
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .channels import (
    FidelityTable,
    NonPhysicalError,
    NoiseModel,
    SpamModel,
    UniformStochasticInstrument,
    apply_instrument_dual,
    compiled_frame_superoperator,
    gate_unitary,
    pauli_vector,
    walsh_hadamard,
)
from .pauli import LocalClifford, PauliOp, pattern, pauli_matrices, single_qubit_cliffords

MAX_SIM_QUBITS = 6


@dataclass(frozen=True)
class CircuitSpec:
    """One circuit: prep rotation, ``depth`` MCM layers, terminating Pauli.

    ``interleavers[i]`` is applied after MCM ``i``; there are ``depth - 1`` of
    them (none for depth 0).  ``fourier_mask[i]`` is the bit string
    ``x_i + y_i`` used to weight the outcome of MCM ``i``.
    """

    n: int
    m: int
    prep: LocalClifford
    interleavers: tuple
    observable: PauliOp
    fourier_mask: tuple
    depth: int

    def __post_init__(self):
        nq = self.n + self.m
        if nq > MAX_SIM_QUBITS:
            raise ValueError(f"simulation is limited to {MAX_SIM_QUBITS} qubits")
        if self.prep.n_qubits != nq or self.observable.n_qubits != nq:
            raise ValueError("prep and observable must act on n + m qubits")
        object.__setattr__(self, "interleavers", tuple(self.interleavers))
        object.__setattr__(self, "fourier_mask", tuple(int(v) for v in self.fourier_mask))
        if any(h.n_qubits != nq for h in self.interleavers):
            raise ValueError("interleaver size mismatch")
        if self.depth < 0 or len(self.interleavers) != max(self.depth - 1, 0):
            raise ValueError("need depth - 1 interleavers")
        if len(self.fourier_mask) != self.depth:
            raise ValueError("fourier_mask must have one entry per MCM")

    def digest(self) -> str:
        payload = json.dumps(
            {
                "n": self.n,
                "m": self.m,
                "prep": list(self.prep.indices),
                "interleavers": [list(h.indices) for h in self.interleavers],
                "observable": str(self.observable),
                "mask": list(self.fourier_mask),
                "depth": self.depth,
            },
            sort_keys=True,
        )
        return hashlib.sha256(payload.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class ShotRecord:
    mcm_outcomes: tuple
    r: int


def _parity(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.int64).copy()
    out = np.zeros_like(v)
    while np.any(v):
        out ^= v & 1
        v >>= 1
    return out


def fourier_sign(outcomes: np.ndarray, mask) -> np.ndarray:
    """``(-1)^{sum_i m_i . mask_i}`` for outcome rows of shape ``(S, depth)``."""
    outcomes = np.asarray(outcomes, dtype=np.int64)
    if outcomes.shape[1] == 0:
        return np.ones(outcomes.shape[0])
    par = _parity(outcomes & np.asarray(mask, dtype=np.int64)[None, :]).sum(axis=1) & 1
    return 1.0 - 2.0 * par


# ---------------------------------------------------------------------------
# single-step primitives


def _conj(u: np.ndarray, states: np.ndarray) -> np.ndarray:
    return u @ states @ u.conj().T


def sample_mcm_batch(
    u: UniformStochasticInstrument, gate, states: np.ndarray, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised noisy MCM on a batch of normalised states ``(S, d, d)``.

    Draws ``(a, b, P)`` first, then measures the ancillas of ``G rho G^dagger``
    with the Born rule.  Returns reported outcomes ``k`` and post-states.
    """
    n, m = u.n, u.m
    A, M = 1 << n, 1 << m
    S = states.shape[0]
    U = gate_unitary(gate) if not isinstance(gate, np.ndarray) else gate
    sigma = _conj(U, states).reshape(S, M, A, M, A)
    flat = u.rates.reshape(-1)
    draws = rng.choice(flat.size, size=S, p=flat / flat.sum())
    a, b, p = np.unravel_index(draws, u.rates.shape)
    diag = np.einsum("siaia->sa", sigma).real
    diag = np.clip(diag, 0, None)
    probs = diag / diag.sum(axis=1, keepdims=True)
    k_raw = (rng.random(S)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    k_raw = np.minimum(k_raw, A - 1)
    idx = np.arange(S)
    block = sigma[idx, :, k_raw, :, k_raw] / diag[idx, k_raw][:, None, None]
    paulis = pauli_matrices(m)[p]
    block = paulis @ block @ paulis.conj().transpose(0, 2, 1)
    out = np.zeros_like(sigma)
    new_k = k_raw ^ a ^ b
    out[idx, :, new_k, :, new_k] = block
    return k_raw ^ a, out.reshape(S, M * A, M * A)


def sample_mcm(u: UniformStochasticInstrument, gate, rho: np.ndarray, rng: np.random.Generator):
    """Single-shot version of :func:`sample_mcm_batch`."""
    if abs(np.trace(rho) - 1) > 1e-9:
        raise ValueError("sample_mcm expects a normalised state")
    k, post = sample_mcm_batch(u, gate, np.asarray(rho, dtype=complex)[None], rng)
    return int(k[0]), post[0]


def sample_superop_batch(sups: np.ndarray, states: np.ndarray, rng: np.random.Generator):
    """Sample an instrument given as per-outcome superoperators ``(K, d^2, d^2)``."""
    S, d, _ = states.shape
    branches = np.einsum("kij,sj->ski", sups, states.reshape(S, d * d))
    traces = np.einsum("skii->sk", branches.reshape(S, -1, d, d)).real
    traces = np.clip(traces, 0, None)
    probs = traces / traces.sum(axis=1, keepdims=True)
    k = (rng.random(S)[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
    k = np.minimum(k, sups.shape[0] - 1)
    idx = np.arange(S)
    post = branches[idx, k].reshape(S, d, d) / traces[idx, k][:, None, None]
    return k, post


def _pauli_expectations(obs: PauliOp, states: np.ndarray) -> np.ndarray:
    mat = obs.to_matrix()
    return np.einsum("ij,sji->s", mat, states).real


def measure_pauli_twirled(
    obs: PauliOp,
    rho: np.ndarray,
    spam: SpamModel,
    rng: np.random.Generator,
    explicit: bool = False,
) -> int:
    return int(measure_pauli_batch(obs, np.asarray(rho, dtype=complex)[None], spam, rng, explicit)[0])


def measure_pauli_batch(
    obs: PauliOp,
    states: np.ndarray,
    spam: SpamModel,
    rng: np.random.Generator,
    explicit: bool = False,
) -> np.ndarray:
    """Noisy ``+-1`` measurement of ``obs`` with mean ``lambda_M^{pt(obs)} Tr(obs rho)``.

    By default this is a Bernoulli draw from the exact mean.  With
    ``explicit=True`` the measurement is carried out as a random local basis
    change, a Pauli-X frame, a computational-basis readout with correlated
    bit flips (whose Walsh-Hadamard spectrum is the terminating fidelities) and
    a parity computation.
    """
    if explicit:
        return _measure_explicit(obs, states, spam, rng)
    v = pattern(obs)
    mean = spam.term_fidelity(v) * _pauli_expectations(obs, states)
    if np.abs(mean).max() > 1 + 1e-9:
        raise NonPhysicalError("terminating measurement mean exceeds 1")
    p_plus = np.clip((1 + mean) / 2, 0, 1)
    return np.where(rng.random(states.shape[0]) < p_plus, 1, -1)


@lru_cache(maxsize=32)
def _flip_distribution(tf: tuple) -> np.ndarray:
    nq = int(np.log2(len(tf)))
    q = walsh_hadamard(np.array(tf), nq) / len(tf)
    if q.min() < -1e-12:
        raise NonPhysicalError("terminating fidelities do not define a flip distribution")
    q = np.clip(q, 0, None)
    return q / q.sum()


@lru_cache(maxsize=256)
def _basis_changes(obs: PauliOp) -> tuple:
    """Local Cliffords ``C`` (with sign) taking ``obs`` to ``+-Z^{pt(obs)}``, one list per qubit."""
    cl = single_qubit_cliffords()
    pauli_z = np.diag([1.0, -1.0])
    options = []
    for q in range(obs.n_qubits):
        f = obs.qubit_factor(q)
        target = f.to_matrix()
        found = []
        for idx, c in enumerate(cl):
            img = c @ target @ c.conj().T
            if f.weight == 0:
                found.append((idx, 1))
            else:
                for s in (1, -1):
                    if np.allclose(img, s * pauli_z):
                        found.append((idx, s))
        options.append(tuple(found))
    return tuple(options)


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One categorical draw per row of ``probs``."""
    cum = np.cumsum(probs, axis=1)
    u = rng.random(probs.shape[0]) * cum[:, -1]
    return np.minimum((cum < u[:, None]).sum(axis=1), probs.shape[1] - 1)


def _measure_explicit(obs, states, spam, rng):
    S, d, _ = states.shape
    nq = obs.n_qubits
    cl = single_qubit_cliffords()
    options = _basis_changes(obs)
    v = pattern(obs)
    flips = _flip_distribution(tuple(spam.term_fidelities.tolist()))
    choice = np.stack([rng.integers(len(options[q]), size=S) for q in range(nq)], axis=1)
    alpha = rng.integers(1 << nq, size=S)
    bits = np.empty(S, dtype=np.int64)
    sign = np.ones(S, dtype=int)
    keys = np.concatenate([choice, alpha[:, None]], axis=1)
    for key in np.unique(keys, axis=0):
        rows = np.flatnonzero(np.all(keys == key, axis=1))
        u = np.ones((1, 1), dtype=complex)
        sg = 1
        for q in range(nq):
            idx, s_q = options[q][key[q]]
            u = np.kron(u, cl[idx])
            sg *= s_q
        rot = PauliOp(nq, int(key[-1]), 0).to_matrix() @ u
        rotated = np.einsum("ij,sjk,lk->sil", rot, states[rows], rot.conj())
        probs = np.clip(np.einsum("sii->si", rotated).real, 0, None)
        bits[rows] = _sample_rows(probs, rng) ^ key[-1]
        sign[rows] = sg
    bits ^= rng.choice(d, size=S, p=flips)
    return sign * (1 - 2 * _parity(bits & v))


# ---------------------------------------------------------------------------
# circuits


def _prep_states(spec: CircuitSpec, spam: SpamModel, shots: int) -> np.ndarray:
    h = spec.prep.unitary()
    rho = h @ spam.prep_state @ h.conj().T
    return np.broadcast_to(rho, (shots,) + rho.shape).copy()


def _random_frames(model: NoiseModel, depth: int, rng: np.random.Generator) -> list:
    A = 1 << model.n
    return [
        (int(rng.integers(4**model.m)), int(rng.integers(A)), int(rng.integers(A)), int(rng.integers(A)))
        for _ in range(depth)
    ]


def run_circuit_arrays(
    spec: CircuitSpec,
    model: NoiseModel,
    shots: int,
    rng: np.random.Generator,
    explicit_measurement: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Simulate ``shots`` runs; returns outcomes ``(shots, depth)`` and results ``(shots,)``.

    If the model carries a raw instrument, one set of compiling frames is drawn
    for the whole circuit and the raw instrument is applied frame by frame.
    """
    if (spec.n, spec.m) != (model.n, model.m):
        raise ValueError("circuit and model sizes disagree")
    if shots < 1:
        raise ValueError("shots must be positive")
    states = _prep_states(spec, model.spam, shots)
    outcomes = np.zeros((shots, spec.depth), dtype=np.int64)
    frames = _random_frames(model, spec.depth, rng) if model.raw is not None else None
    for i in range(spec.depth):
        if frames is None:
            k, states = sample_mcm_batch(model.instrument, model.gate, states, rng)
        else:
            sups = np.stack(
                [compiled_frame_superoperator(model.raw, model.gate, frames[i], k) for k in range(1 << model.n)]
            )
            k, states = sample_superop_batch(sups, states, rng)
        outcomes[:, i] = k
        if i < spec.depth - 1:
            h = spec.interleavers[i]
            if not h.is_identity:
                states = _conj(h.unitary(), states)
    r = measure_pauli_batch(spec.observable, states, model.spam, rng, explicit_measurement)
    return outcomes, r


def run_circuit(spec, model, shots, rng, explicit_measurement=False) -> list[ShotRecord]:
    outcomes, r = run_circuit_arrays(spec, model, shots, rng, explicit_measurement)
    return [ShotRecord(tuple(int(k) for k in row), int(ri)) for row, ri in zip(outcomes, r)]


# ---------------------------------------------------------------------------
# exact evaluation in the Pauli basis


@lru_cache(maxsize=64)
def _local_pauli_action(h: LocalClifford) -> tuple[np.ndarray, np.ndarray]:
    """``H P H^dagger = sign[P] * Pauli[perm[P]]`` for every Pauli index."""
    tab = h.tableau()
    nq = h.n_qubits
    perm = np.zeros(4**nq, dtype=np.int64)
    sign = np.zeros(4**nq)
    for i in range(4**nq):
        img, s = tab.conjugate(PauliOp.from_index(i, nq))
        perm[i], sign[i] = img.index, s
    return perm, sign


def _apply_local(h: LocalClifford, c: np.ndarray) -> np.ndarray:
    if h.is_identity:
        return c
    perm, sign = _local_pauli_action(h)
    out = np.zeros_like(c)
    out[..., perm] = c * sign
    return out


def _instrument_maps(model: NoiseModel) -> np.ndarray:
    """Pauli-basis matrices of ``T_k`` for all ``k``: shape ``(2**n, 4**N, 4**N)``."""
    f: FidelityTable = model.fidelities
    N = 4 ** (model.n + model.m)
    eye = np.eye(N)
    return np.stack(
        [
            np.stack([apply_instrument_dual(f, model.gate, eye[j], k).real for j in range(N)], axis=1)
            for k in range(1 << model.n)
        ]
    )


def _initial_vector(spec: CircuitSpec, spam: SpamModel) -> np.ndarray:
    return _apply_local(spec.prep, pauli_vector(spam.prep_state).real)


def _terminal_value(spec: CircuitSpec, spam: SpamModel, c: np.ndarray) -> np.ndarray:
    nq = spec.n + spec.m
    return spam.term_fidelity(pattern(spec.observable)) * (1 << nq) * c[..., spec.observable.index]


def enumerate_expectation(spec: CircuitSpec, model: NoiseModel, method: str = "fourier") -> float:
    """Exact ``E[(-1)^{sum m_i . mask_i} r]``.

    ``method="tree"`` sums over every outcome sequence; ``"fourier"`` folds
    the outcome weights into the instrument first, which is equivalent by
    linearity and much cheaper.
    """
    if method == "tree":
        if spec.n * spec.depth > 20:
            raise ValueError("too many outcome sequences to enumerate")
        dist = outcome_distribution(spec, model)
        total = 0.0
        for seq, (_, mean_r) in dist.items():
            sgn = fourier_sign(np.array([seq]).reshape(1, -1), spec.fourier_mask)[0]
            total += sgn * mean_r
        return float(total)
    if method != "fourier":
        raise ValueError(f"unknown method {method!r}")
    maps = _instrument_maps(model)
    c = _initial_vector(spec, model.spam)
    A = 1 << model.n
    for i in range(spec.depth):
        weights = 1.0 - 2.0 * _parity(np.arange(A) & spec.fourier_mask[i])
        c = np.tensordot(weights, maps, axes=1) @ c
        if i < spec.depth - 1:
            c = _apply_local(spec.interleavers[i], c)
    return float(_terminal_value(spec, model.spam, c))


def outcome_distribution(spec: CircuitSpec, model: NoiseModel) -> dict:
    """Map each outcome sequence to ``(probability, E[r * 1{sequence}])``."""
    maps = _instrument_maps(model)
    nq = spec.n + spec.m
    branches = {(): _initial_vector(spec, model.spam)}
    for i in range(spec.depth):
        nxt = {}
        for seq, c in branches.items():
            for k in range(1 << spec.n):
                out = maps[k] @ c
                if i < spec.depth - 1:
                    out = _apply_local(spec.interleavers[i], out)
                nxt[seq + (k,)] = out
        branches = nxt
    return {
        seq: (float((1 << nq) * c[0]), float(_terminal_value(spec, model.spam, c)))
        for seq, c in branches.items()
    }


# ---------------------------------------------------------------------------
# export


def write_shot_log(path, outcomes: np.ndarray, r: np.ndarray, n: int, meta: dict) -> tuple[Path, Path]:
    """CSV with columns ``m_1..m_l, r`` plus a JSON sidecar holding ``meta``."""
    path = Path(path)
    depth = outcomes.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"m_{i + 1}" for i in range(depth)] + ["r"])
        for row, ri in zip(outcomes, r):
            w.writerow([format(int(k), f"0{n}b") if n else "" for k in row] + [int(ri)])
    side = path.with_suffix(path.suffix + ".json")
    side.write_text(json.dumps(meta, indent=2, sort_keys=True))
    return path, side
