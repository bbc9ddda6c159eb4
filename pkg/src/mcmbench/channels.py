"""Noise models for noisy mid-circuit measurements.

The central object is the uniform stochastic instrument (USI): a joint
distribution ``p[a, b, P]`` over a readout flip ``a``, a post-measurement flip
``b`` (both ``n``-bit strings) and a Pauli error ``P`` on the ``m`` system
qubits.  Rates are stored densely with shape ``(2**n, 2**n, 4**m)``; bit
strings are integers with ancilla 0 as the most significant bit and Paulis
use the table order of :mod:`mcmbench.pauli`.

The Fourier dual (``FidelityTable``) is computed with fast transforms: a
Walsh-Hadamard transform on each classical axis and a per-qubit symplectic
transform on the Pauli axis.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, replace
from functools import cached_property, lru_cache
from typing import Mapping

import numpy as np

from .pauli import (
    PAULI_MATRICES,
    CliffordTableau,
    PauliOp,
    all_paulis,
    pattern,
    pauli_matrices,
)

RATE_TOL = 1e-9

_HADAMARD2 = np.array([[1.0, 1.0], [1.0, -1.0]])
# (-1)^<p,q> for single-qubit Paulis in I, X, Y, Z order
_SYMPLECTIC4 = np.array(
    [[1.0, 1.0, 1.0, 1.0], [1.0, 1.0, -1.0, -1.0], [1.0, -1.0, 1.0, -1.0], [1.0, -1.0, -1.0, 1.0]]
)


class NonPhysicalError(ValueError):
    """A rate table, state or SPAM parameter left the physical region."""


# ---------------------------------------------------------------------------
# fast transforms


def _factor_transform(arr: np.ndarray, axis: int, n_factors: int, kernel: np.ndarray) -> np.ndarray:
    """Apply ``kernel`` to every tensor factor of ``axis`` (size ``len(kernel)**n_factors``)."""
    if n_factors == 0:
        return arr
    k = kernel.shape[0]
    arr = np.moveaxis(arr, axis, -1)
    lead = arr.shape[:-1]
    t = arr.reshape(lead + (k,) * n_factors)
    for f in range(n_factors):
        ax = len(lead) + f
        t = np.moveaxis(np.tensordot(t, kernel, axes=([ax], [1])), -1, ax)
    return np.moveaxis(t.reshape(lead + (k**n_factors,)), -1, axis)


def walsh_hadamard(arr: np.ndarray, n_bits: int, axis: int = -1) -> np.ndarray:
    """Unnormalised Walsh-Hadamard transform ``sum_a (-1)^{a.x} f(a)`` along ``axis``."""
    return _factor_transform(np.asarray(arr), axis, n_bits, _HADAMARD2)


def symplectic_transform(arr: np.ndarray, n_qubits: int, axis: int = -1) -> np.ndarray:
    """``sum_P (-1)^<P,Q> f(P)`` along a Pauli-indexed ``axis``."""
    return _factor_transform(np.asarray(arr), axis, n_qubits, _SYMPLECTIC4)


def _full_transform(table: np.ndarray, n: int, m: int) -> np.ndarray:
    out = walsh_hadamard(table, n, axis=0)
    out = walsh_hadamard(out, n, axis=1)
    return symplectic_transform(out, m, axis=2)


def _bits(v: int, width: int) -> str:
    return format(v, f"0{width}b") if width else ""


def _pauli_label(index: int, m: int) -> str:
    return str(PauliOp.from_index(index, m)) if m else ""


def _parse_key(key: str, n: int, m: int) -> tuple[int, int, int]:
    a, b, p = key.split("|")
    if len(a) != n or len(b) != n:
        raise ValueError(f"bad key {key!r} for n={n}")
    pa = int(a, 2) if n else 0
    pb = int(b, 2) if n else 0
    pp = PauliOp.from_string(p).index if m else 0
    if m and len(p) != m:
        raise ValueError(f"bad Pauli in key {key!r}")
    return pa, pb, pp


# ---------------------------------------------------------------------------
# Pauli channels


@dataclass(frozen=True, eq=False)
class PauliChannel:
    """``sum_P p^P P . P`` on ``m`` qubits."""

    m: int
    rates: np.ndarray

    def __post_init__(self):
        rates = np.asarray(self.rates, dtype=float)
        if rates.shape != (4**self.m,):
            raise ValueError("rates must have length 4**m")
        if rates.min() < -RATE_TOL or abs(rates.sum() - 1) > RATE_TOL:
            raise NonPhysicalError("Pauli channel rates must form a distribution")
        object.__setattr__(self, "rates", rates)

    def fidelities(self) -> np.ndarray:
        return symplectic_transform(self.rates, self.m)

    @classmethod
    def from_fidelities(cls, fids: np.ndarray, m: int) -> "PauliChannel":
        return cls(m, symplectic_transform(np.asarray(fids, dtype=float), m) / 4**m)


# ---------------------------------------------------------------------------
# uniform stochastic instruments


@dataclass(frozen=True, eq=False)
class UniformStochasticInstrument:
    n: int
    m: int
    rates: np.ndarray

    def __post_init__(self):
        rates = np.array(self.rates, dtype=float)
        A = 1 << self.n
        if rates.shape != (A, A, 4**self.m):
            raise ValueError(f"rates must have shape {(A, A, 4**self.m)}, got {rates.shape}")
        if rates.min() < -RATE_TOL:
            raise NonPhysicalError(f"negative error rate {rates.min():.3e}")
        if abs(rates.sum() - 1) > RATE_TOL:
            raise NonPhysicalError(f"rates sum to {rates.sum():.15f}, not 1")
        rates.setflags(write=False)
        object.__setattr__(self, "rates", rates)

    @classmethod
    def ideal(cls, n: int, m: int) -> "UniformStochasticInstrument":
        rates = np.zeros((1 << n, 1 << n, 4**m))
        rates[0, 0, 0] = 1.0
        return cls(n, m, rates)

    def rate(self, a: int, b: int, p: PauliOp | str) -> float:
        if isinstance(p, str):
            p = PauliOp.from_string(p)
        return float(self.rates[a, b, p.index])

    def fidelities(self) -> "FidelityTable":
        return fidelities_from_rates(self)

    def to_json(self) -> dict:
        return {"n": self.n, "m": self.m, "kind": "usi", "rates": _keyed(self.rates, self.n, self.m)}


def _keyed(table: np.ndarray, n: int, m: int, skip_zero: bool = True) -> dict:
    out = {}
    for a, b, p in itertools.product(range(1 << n), range(1 << n), range(4**m)):
        v = float(table[a, b, p])
        if skip_zero and v == 0.0:
            continue
        out[f"{_bits(a, n)}|{_bits(b, n)}|{_pauli_label(p, m)}"] = v
    return out


def _unkeyed(entries: Mapping[str, float], n: int, m: int) -> np.ndarray:
    table = np.zeros((1 << n, 1 << n, 4**m))
    for key, v in entries.items():
        table[_parse_key(key, n, m)] = float(v)
    return table


@dataclass(frozen=True, eq=False)
class FidelityTable:
    """Pauli fidelities ``lambda[x, y, Q]`` of a USI."""

    n: int
    m: int
    values: np.ndarray

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        A = 1 << self.n
        if vals.shape != (A, A, 4**self.m):
            raise ValueError("fidelity table has the wrong shape")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def value(self, x: int, y: int, q: PauliOp | str) -> float:
        if isinstance(q, str):
            q = PauliOp.from_string(q)
        return float(self.values[x, y, q.index])

    def log(self) -> np.ndarray:
        if self.values.min() <= 0:
            raise NonPhysicalError("log of a non-positive fidelity")
        return np.log(self.values)

    def rates(self) -> UniformStochasticInstrument:
        return rates_from_fidelities(self)

    def to_json(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "kind": "fidelities",
            "values": _keyed(self.values, self.n, self.m, skip_zero=False),
        }


def fidelities_from_rates(u: UniformStochasticInstrument) -> FidelityTable:
    return FidelityTable(u.n, u.m, _full_transform(u.rates, u.n, u.m))


def rates_from_fidelities(f: FidelityTable) -> UniformStochasticInstrument:
    if abs(f.values[0, 0, 0] - 1) > RATE_TOL:
        raise NonPhysicalError(f"lambda_00^I = {f.values[0, 0, 0]!r}, expected 1")
    rates = _full_transform(f.values, f.n, f.m) / 4 ** (f.n + f.m)
    worst = rates.min()
    if worst < -RATE_TOL:
        raise NonPhysicalError(f"fidelity table implies a negative error rate {worst:.3e}")
    return UniformStochasticInstrument(f.n, f.m, rates)


# ---------------------------------------------------------------------------
# measure-and-prepare instruments


@dataclass(frozen=True, eq=False)
class MeasureAndPrepareInstrument:
    """Independent measurement noise ``q[a, P]`` and preparation noise ``r[b, P]``."""

    n: int
    m: int
    measure_rates: np.ndarray
    prepare_rates: np.ndarray

    def __post_init__(self):
        shape = (1 << self.n, 4**self.m)
        for name in ("measure_rates", "prepare_rates"):
            t = np.array(getattr(self, name), dtype=float)
            if t.shape != shape:
                raise ValueError(f"{name} must have shape {shape}")
            if t.min() < -RATE_TOL or abs(t.sum() - 1) > RATE_TOL:
                raise NonPhysicalError(f"{name} is not a probability table")
            t.setflags(write=False)
            object.__setattr__(self, name, t)

    def measure_fidelities(self) -> np.ndarray:
        """``zeta[x, Q]``."""
        return symplectic_transform(walsh_hadamard(self.measure_rates, self.n, 0), self.m, 1)

    def prepare_fidelities(self) -> np.ndarray:
        """``xi[y, Q]``."""
        return symplectic_transform(walsh_hadamard(self.prepare_rates, self.n, 0), self.m, 1)

    def fidelities(self) -> FidelityTable:
        zeta, xi = self.measure_fidelities(), self.prepare_fidelities()
        return FidelityTable(self.n, self.m, zeta[:, None, :] * xi[None, :, :])

    def to_usi(self) -> UniformStochasticInstrument:
        return rates_from_fidelities(self.fidelities())

    def to_json(self) -> dict:
        def keyed(t):
            return {
                f"{_bits(a, self.n)}|{_pauli_label(p, self.m)}": float(t[a, p])
                for a, p in zip(*np.nonzero(t))
            }

        out = self.to_usi().to_json()
        out["kind"] = "map"
        out["measure_rates"] = keyed(self.measure_rates)
        out["prepare_rates"] = keyed(self.prepare_rates)
        return out


def load_instrument(data: dict | str) -> UniformStochasticInstrument:
    """Read the JSON instrument format (``kind`` is ``usi`` or ``map``)."""
    if isinstance(data, str):
        data = json.loads(data)
    n, m = int(data["n"]), int(data["m"])
    kind = data.get("kind", "usi")
    if kind == "map" and "measure_rates" in data:
        def table(entries):
            t = np.zeros((1 << n, 4**m))
            for key, v in entries.items():
                a, p = key.split("|")
                t[int(a, 2) if n else 0, PauliOp.from_string(p).index if m else 0] = float(v)
            return t

        return MeasureAndPrepareInstrument(
            n, m, table(data["measure_rates"]), table(data["prepare_rates"])
        ).to_usi()
    if kind not in ("usi", "map"):
        raise ValueError(f"unknown instrument kind {kind!r}")
    return UniformStochasticInstrument(n, m, _unkeyed(data["rates"], n, m))


# ---------------------------------------------------------------------------
# random models


def _check_eps(eps: float) -> None:
    if not 0 <= eps < 0.5:
        raise ValueError(f"noise scale must lie in [0, 0.5), got {eps}")


def random_instrument(
    n: int,
    m: int,
    eps: float,
    seed: int | None = None,
    concentration: float = 1.0,
    planted: Mapping[tuple[int, int, str], float] | None = None,
) -> UniformStochasticInstrument:
    """Random USI with ``p[0,0,I] = 1 - eps`` and the rest Dirichlet-distributed.

    ``planted`` maps ``(a, b, P)`` to extra weight taken out of the Dirichlet
    share, which creates detectable correlations on purpose.
    """
    _check_eps(eps)
    rng = np.random.default_rng(seed)
    size = (1 << n) * (1 << n) * 4**m
    flat = np.zeros(size)
    flat[0] = 1 - eps
    planted_flat = np.zeros(size)
    for (a, b, p), w in (planted or {}).items():
        idx = np.ravel_multi_index((a, b, PauliOp.from_string(p).index), ((1 << n), (1 << n), 4**m))
        if idx == 0:
            raise ValueError("cannot plant weight on the no-error entry")
        planted_flat[idx] += w
    spread = eps - planted_flat.sum()
    if spread < -1e-15:
        raise ValueError("planted weight exceeds the noise budget")
    if size > 1 and eps > 0:
        flat[1:] = max(spread, 0.0) * rng.dirichlet(np.full(size - 1, concentration))
    flat += planted_flat
    return UniformStochasticInstrument(n, m, flat.reshape((1 << n, 1 << n, 4**m)))


def random_measure_and_prepare(
    n: int, m: int, eps: float, seed: int | None = None, concentration: float = 1.0
) -> MeasureAndPrepareInstrument:
    _check_eps(eps)
    rng = np.random.default_rng(seed)
    size = (1 << n) * 4**m

    def draw():
        t = np.zeros(size)
        t[0] = 1 - eps
        if size > 1 and eps > 0:
            t[1:] = eps * rng.dirichlet(np.full(size - 1, concentration))
        return t.reshape((1 << n, 4**m))

    q = draw()
    r = draw()
    return MeasureAndPrepareInstrument(n, m, q, r)


# ---------------------------------------------------------------------------
# states in the Pauli basis


def _n_qubits_of(dim: int) -> int:
    nq = int(round(np.log2(dim)))
    if 1 << nq != dim:
        raise ValueError(f"dimension {dim} is not a power of two")
    return nq


def pauli_vector(rho: np.ndarray) -> np.ndarray:
    """Coefficients ``2^-N Tr(P rho)`` for all N-qubit Paulis in table order."""
    rho = np.asarray(rho, dtype=complex)
    nq = _n_qubits_of(rho.shape[0])
    single = np.stack([PAULI_MATRICES[c] for c in "IXYZ"])
    t = rho.reshape((2,) * (2 * nq))
    for q in range(nq):
        # contract (row_q, col_q) of rho with P[p, col, row]; new axis p goes last
        t = np.tensordot(t, single, axes=([0, nq - q], [2, 1]))
    return t.reshape(-1) / (1 << nq)


def from_pauli_vector(c: np.ndarray) -> np.ndarray:
    c = np.asarray(c, dtype=complex)
    nq = int(round(np.log(c.shape[0]) / np.log(4)))
    single = np.stack([PAULI_MATRICES[x] for x in "IXYZ"])
    t = c.reshape((4,) * nq)
    for _ in range(nq):
        # consume leading Pauli digit, append its row and column axes
        t = np.tensordot(t, single, axes=([0], [0]))
    # axes now r0 c0 r1 c1 ...
    order = [2 * q for q in range(nq)] + [2 * q + 1 for q in range(nq)]
    return t.transpose(order).reshape(1 << nq, 1 << nq)


# ---------------------------------------------------------------------------
# applying instruments


@lru_cache(maxsize=256)
def gate_unitary(g: CliffordTableau) -> np.ndarray:
    u = g.to_unitary()
    u.setflags(write=False)
    return u


@lru_cache(maxsize=256)
def gate_maps(g: CliffordTableau, n: int, m: int):
    """Index tables for ``G^dagger(Q (x) Z^x) = sign * Pauli[src]`` and ``Q (x) Z^y = Pauli[dst]``.

    Returns ``(src, sign, dst)``, each shaped ``(2**n, 4**m)``.
    """
    if g.n_qubits != n + m:
        raise ValueError(f"gate acts on {g.n_qubits} qubits, expected {n + m}")
    ginv = g.inverse()
    A = 1 << n
    src = np.zeros((A, 4**m), dtype=np.int64)
    sign = np.zeros((A, 4**m), dtype=np.int64)
    dst = np.zeros((A, 4**m), dtype=np.int64)
    for x in range(A):
        zx = PauliOp.z_power(x, n)
        for qi, q in enumerate(all_paulis(m)):
            full = q.tensor(zx)
            img, s = ginv.conjugate(full)
            src[x, qi], sign[x, qi], dst[x, qi] = img.index, s, full.index
    for arr in (src, sign, dst):
        arr.setflags(write=False)
    return src, sign, dst


def _as_unitary(gate) -> np.ndarray:
    return gate_unitary(gate) if isinstance(gate, CliffordTableau) else np.asarray(gate, dtype=complex)


def apply_instrument_physical(
    u: UniformStochasticInstrument, gate, rho: np.ndarray, k: int
) -> np.ndarray:
    """Unnormalised ``T_k(rho) = U_k(G rho G^dagger)`` in the physical picture."""
    n, m = u.n, u.m
    dim = 1 << (n + m)
    rho = np.asarray(rho, dtype=complex)
    if rho.shape != (dim, dim):
        raise ValueError(f"state must be {dim}x{dim}")
    U = _as_unitary(gate)
    sigma = (U @ rho @ U.conj().T).reshape(1 << m, 1 << n, 1 << m, 1 << n)
    paulis = pauli_matrices(m)
    out = np.zeros_like(sigma)
    A = 1 << n
    for a in range(A):
        block = sigma[:, k ^ a, :, k ^ a]
        conj = np.einsum("pij,jk,plk->pil", paulis, block, paulis.conj())
        for b in range(A):
            out[:, k ^ b, :, k ^ b] += np.tensordot(u.rates[a, b], conj, axes=1)
    return out.reshape(dim, dim)


def apply_instrument_dual(
    f: FidelityTable, gate: CliffordTableau, rho_pauli: np.ndarray, k: int
) -> np.ndarray:
    """``T_k`` acting on a Pauli coefficient vector (see :func:`pauli_vector`)."""
    n, m = f.n, f.m
    rho_pauli = np.asarray(rho_pauli)
    if rho_pauli.shape != (4 ** (n + m),):
        raise ValueError("Pauli vector has the wrong length")
    src, sign, dst = gate_maps(gate, n, m)
    A = 1 << n
    x = np.arange(A)
    parity = np.array([[bin(k & (xi ^ yi)).count("1") & 1 for yi in x] for xi in x])
    phase = 1 - 2 * parity  # phase[x, y] = (-1)^{k.(x+y)}
    inputs = sign * rho_pauli[src]  # [x, Q]
    coeff = np.einsum("xy,xyq,xq->yq", phase, f.values, inputs) / A
    out = np.zeros_like(rho_pauli, dtype=complex)
    out[dst] = coeff
    return out


# ---------------------------------------------------------------------------
# general instruments and randomized compiling


def superoperator(kraus) -> np.ndarray:
    """Row-major superoperator ``sum K (x) conj(K)`` of a Kraus list."""
    return sum(np.kron(K, K.conj()) for K in kraus)


@dataclass(frozen=True, eq=False)
class GeneralInstrument:
    """Instrument ``{M_k}`` with each ``M_k`` given by Kraus operators."""

    n: int
    m: int
    kraus: tuple

    def __post_init__(self):
        dim = 1 << (self.n + self.m)
        if len(self.kraus) != 1 << self.n:
            raise ValueError("need one Kraus list per outcome")
        ks = tuple(tuple(np.asarray(K, dtype=complex) for K in ops) for ops in self.kraus)
        for ops in ks:
            for K in ops:
                if K.shape != (dim, dim):
                    raise ValueError("Kraus operator has the wrong shape")
        total = sum(K.conj().T @ K for ops in ks for K in ops)
        if not np.allclose(total, np.eye(dim), atol=1e-10):
            raise NonPhysicalError("instrument is not trace preserving")
        object.__setattr__(self, "kraus", ks)

    @cached_property
    def superoperators(self) -> np.ndarray:
        return np.stack([superoperator(ops) for ops in self.kraus])

    def apply(self, rho: np.ndarray, k: int) -> np.ndarray:
        return sum(K @ rho @ K.conj().T for K in self.kraus[k])

    @classmethod
    def from_usi(cls, u: UniformStochasticInstrument, gate) -> "GeneralInstrument":
        """Kraus form of ``T_k = U_k G``."""
        n, m = u.n, u.m
        U = _as_unitary(gate)
        A = 1 << n
        paulis = pauli_matrices(m)
        kraus = []
        for k in range(A):
            ops = []
            for a, b, p in zip(*np.nonzero(u.rates)):
                flip = np.zeros((A, A))
                flip[k ^ b, k ^ a] = 1
                ops.append(np.sqrt(u.rates[a, b, p]) * np.kron(paulis[p], flip) @ U)
            kraus.append(ops)
        return cls(n, m, tuple(kraus))

    @classmethod
    def ideal(cls, n: int, m: int, gate) -> "GeneralInstrument":
        return cls.from_usi(UniformStochasticInstrument.ideal(n, m), gate)


def _random_unitary_near_identity(dim: int, strength: float, rng) -> np.ndarray:
    h = rng.normal(size=(dim, dim)) + 1j * rng.normal(size=(dim, dim))
    h = (h + h.conj().T) / 2
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * strength * w)) @ v.conj().T


def random_general_instrument(
    n: int, m: int, gate, strength: float = 0.05, seed: int | None = None
) -> GeneralInstrument:
    """Coherent pre/post errors around a projective measurement plus a readout confusion matrix."""
    rng = np.random.default_rng(seed)
    A = 1 << n
    dim = 1 << (n + m)
    U = _as_unitary(gate)
    pre = _random_unitary_near_identity(dim, strength, rng)
    post = _random_unitary_near_identity(dim, strength, rng)
    confusion = np.eye(A) * (1 - strength) + strength * rng.dirichlet(np.ones(A), size=A).T
    confusion /= confusion.sum(axis=0, keepdims=True)  # column j: distribution of k given j
    eye_m = np.eye(1 << m)
    kraus = []
    for k in range(A):
        ops = []
        for j in range(A):
            proj = np.zeros((A, A))
            proj[j, j] = 1
            ops.append(np.sqrt(confusion[k, j]) * post @ np.kron(eye_m, proj) @ pre @ U)
        kraus.append(ops)
    return GeneralInstrument(n, m, tuple(kraus))


def _pauli_z_x(n: int, beta: int, alpha: int) -> np.ndarray:
    """Matrix of ``Z^beta X^alpha`` on ``n`` qubits (phase irrelevant for channels)."""
    out = np.ones((1, 1), dtype=complex)
    for q in range(n):
        bit = n - 1 - q
        mz = PAULI_MATRICES["Z"] if (beta >> bit) & 1 else PAULI_MATRICES["I"]
        mx = PAULI_MATRICES["X"] if (alpha >> bit) & 1 else PAULI_MATRICES["I"]
        out = np.kron(out, mz @ mx)
    return out


def compiled_frame_superoperator(
    mi: GeneralInstrument, gate, frame: tuple[int, int, int, int], k: int
) -> np.ndarray:
    """Superoperator of one compiled MCM for frame ``(P, alpha, beta, gamma)`` and reported ``k``."""
    p, alpha, beta, gamma = frame
    n, m = mi.n, mi.m
    U = _as_unitary(gate)
    sys_p = pauli_matrices(m)[p]
    v_in = U.conj().T @ np.kron(sys_p, _pauli_z_x(n, beta, alpha)) @ U
    v_out = np.kron(sys_p, _pauli_z_x(n, 0, alpha) @ _pauli_z_x(n, gamma, 0))
    return (
        np.kron(v_out, v_out.conj()) @ mi.superoperators[k ^ alpha] @ np.kron(v_in, v_in.conj())
    )


def twirl_average(mi: GeneralInstrument, gate: CliffordTableau, atol: float = 1e-10) -> UniformStochasticInstrument:
    """Exact randomized-compiling average of ``mi``, returned as a USI.

    Averages over every frame ``(P, alpha, beta, gamma)`` and checks that the
    result has the uniform stochastic form for every outcome ``k``.
    """
    n, m = mi.n, mi.m
    if n + m > 3:
        raise ValueError("exact twirl enumeration is limited to n + m <= 3")
    A = 1 << n
    dim = 1 << (n + m)
    U = gate_unitary(gate)
    g_inv = np.kron(U.conj().T, U.T)
    frames = list(itertools.product(range(4**m), range(A), range(A), range(A)))
    mats = pauli_matrices(n + m)
    fids = []
    for k in range(A):
        tk = sum(compiled_frame_superoperator(mi, gate, fr, k) for fr in frames) / len(frames)
        uk = tk @ g_inv
        # Pauli transfer matrix: R[i, j] = Tr(P_i U_k(P_j)) / dim
        vecs = mats.reshape(len(mats), -1)
        images = (uk @ vecs.T).T
        ptm = np.einsum("iab,jba->ij", mats, images.reshape(-1, dim, dim)) / dim
        lam = np.zeros((A, A, 4**m))
        expected = np.zeros_like(ptm)
        for x, y, q in itertools.product(range(A), range(A), range(4**m)):
            qp = PauliOp.from_index(q, m)
            i_out = qp.tensor(PauliOp.z_power(y, n)).index
            i_in = qp.tensor(PauliOp.z_power(x, n)).index
            sign = -1 if bin(k & (x ^ y)).count("1") & 1 else 1
            lam[x, y, q] = sign * ptm[i_out, i_in].real * A
            expected[i_out, i_in] = ptm[i_out, i_in]
        resid = np.abs(ptm - expected).max()
        if resid > atol:
            raise ValueError(f"twirled instrument is not uniform stochastic (residual {resid:.2e})")
        fids.append(lam)
    spread = max(np.abs(f - fids[0]).max() for f in fids)
    if spread > atol:
        raise ValueError(f"twirled fidelities depend on the outcome (spread {spread:.2e})")
    return rates_from_fidelities(FidelityTable(n, m, np.mean(fids, axis=0)))


# ---------------------------------------------------------------------------
# SPAM and full noise models


@dataclass(frozen=True, eq=False)
class SpamModel:
    """Fixed preparation state and pattern-indexed terminating-measurement fidelities."""

    prep_state: np.ndarray
    term_fidelities: np.ndarray

    def __post_init__(self):
        rho = np.array(self.prep_state, dtype=complex)
        nq = _n_qubits_of(rho.shape[0])
        tf = np.array(self.term_fidelities, dtype=float)
        if tf.shape != (1 << nq,):
            raise ValueError("need one terminating fidelity per weight pattern")
        if abs(tf[0] - 1) > 1e-12:
            raise ValueError("terminating fidelity of the identity pattern must be 1")
        if tf.min() <= 0 or tf.max() > 1 + 1e-12:
            raise NonPhysicalError("terminating fidelities must lie in (0, 1]")
        if not np.allclose(rho, rho.conj().T, atol=1e-12):
            raise ValueError("preparation state is not Hermitian")
        if abs(np.trace(rho) - 1) > 1e-10:
            raise ValueError("preparation state must have unit trace")
        if np.linalg.eigvalsh(rho).min() < -1e-12:
            raise NonPhysicalError("preparation state is not positive")
        rho.setflags(write=False)
        tf.setflags(write=False)
        object.__setattr__(self, "prep_state", rho)
        object.__setattr__(self, "term_fidelities", tf)

    @property
    def n_qubits(self) -> int:
        return _n_qubits_of(self.prep_state.shape[0])

    @classmethod
    def ideal(cls, n_qubits: int) -> "SpamModel":
        rho = np.zeros((1 << n_qubits, 1 << n_qubits), dtype=complex)
        rho[0, 0] = 1
        return cls(rho, np.ones(1 << n_qubits))

    def term_fidelity(self, v: int) -> float:
        return float(self.term_fidelities[v])

    def to_json(self) -> dict:
        return {
            "prep_state_real": self.prep_state.real.tolist(),
            "prep_state_imag": self.prep_state.imag.tolist(),
            "term_fidelities": self.term_fidelities.tolist(),
        }

    @classmethod
    def from_json(cls, data: dict) -> "SpamModel":
        rho = np.array(data["prep_state_real"]) + 1j * np.array(data["prep_state_imag"])
        return cls(rho, np.array(data["term_fidelities"]))


def random_spam(n_qubits: int, seed: int | None = None, prep_error: float = 0.02, meas_error: float = 0.02) -> SpamModel:
    """Slightly mixed, slightly rotated ``|0...0>`` and per-qubit depolarising readout."""
    rng = np.random.default_rng(seed)
    rho = np.ones((1, 1), dtype=complex)
    for _ in range(n_qubits):
        p = rng.uniform(0.25, 1.0) * prep_error
        q = np.diag([1 - p, p]).astype(complex)
        v = _random_unitary_near_identity(2, prep_error, rng)
        rho = np.kron(rho, v @ q @ v.conj().T)
    rho = (rho + rho.conj().T) / 2
    per_qubit = 1 - rng.uniform(0.25, 1.0, size=n_qubits) * meas_error
    tf = np.array(
        [np.prod([per_qubit[q] for q in range(n_qubits) if (v >> (n_qubits - 1 - q)) & 1]) for v in range(1 << n_qubits)]
    )
    return SpamModel(rho, tf)


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Everything a simulated device needs: the compiled MCM, its gate and SPAM.

    ``raw`` optionally holds the uncompiled instrument; when present the
    simulator draws explicit compiling frames per circuit instead of sampling
    from ``instrument`` directly.
    """

    instrument: UniformStochasticInstrument
    gate: CliffordTableau
    spam: SpamModel
    raw: GeneralInstrument | None = None

    def __post_init__(self):
        n, m = self.instrument.n, self.instrument.m
        if self.gate.n_qubits != n + m or self.spam.n_qubits != n + m:
            raise ValueError("instrument, gate and SPAM sizes disagree")
        if self.raw is not None and (self.raw.n, self.raw.m) != (n, m):
            raise ValueError("raw instrument has the wrong size")

    @property
    def n(self) -> int:
        return self.instrument.n

    @property
    def m(self) -> int:
        return self.instrument.m

    @cached_property
    def fidelities(self) -> FidelityTable:
        return self.instrument.fidelities()

    @classmethod
    def from_raw(cls, raw: GeneralInstrument, gate: CliffordTableau, spam: SpamModel) -> "NoiseModel":
        return cls(twirl_average(raw, gate), gate, spam, raw)

    def with_spam(self, spam: SpamModel) -> "NoiseModel":
        return replace(self, spam=spam)

    def to_json(self) -> dict:
        return {
            "instrument": self.instrument.to_json(),
            "gate": self.gate.to_json(),
            "spam": self.spam.to_json(),
        }


def gauge_transform(model: NoiseModel, nu: Mapping[int, float], eta: float) -> NoiseModel:
    """Apply the diagonal gauge ``D(P) = eta**nu[pt(P)] P`` to a whole noise model.

    ``nu`` maps weight patterns to coefficients and must vanish on the zero
    pattern.  MCM log-fidelities shift by ``<delta(nu), e> log(eta)``; the
    preparation state is mapped through ``D`` and terminating fidelities through
    ``D^{-1}``.  Raises :class:`NonPhysicalError` if any part leaves the
    physical region.
    """
    if eta <= 0:
        raise ValueError("eta must be positive")
    if abs(nu.get(0, 0.0)) > 0:
        raise ValueError("nu must have zero coefficient on the all-zero pattern")
    n, m = model.n, model.m
    nq = n + m
    weights = np.zeros(1 << nq)
    for v, c in nu.items():
        weights[int(v)] = float(c)
    log_eta = np.log(eta)
    src, _, dst = gate_maps(model.gate, n, m)
    src_pt = _patterns_of(src, nq)
    dst_pt = _patterns_of(dst, nq)
    shift = (weights[dst_pt][None, :, :] - weights[src_pt][:, None, :]) * log_eta  # [x, y, Q]
    fids = FidelityTable(n, m, model.fidelities.values * np.exp(shift))
    instrument = rates_from_fidelities(fids)

    all_pt = _patterns_of(np.arange(4**nq), nq)
    coeffs = pauli_vector(model.spam.prep_state) * np.exp(weights[all_pt] * log_eta)
    rho = from_pauli_vector(coeffs)
    rho = (rho + rho.conj().T) / 2
    term = model.spam.term_fidelities * np.exp(-weights * log_eta)
    spam = SpamModel(rho, term)
    return NoiseModel(instrument, model.gate, spam, None)


@lru_cache(maxsize=64)
def _pattern_table(nq: int) -> np.ndarray:
    return np.array([pattern(PauliOp.from_index(i, nq)) for i in range(4**nq)], dtype=np.int64)


def _patterns_of(indices: np.ndarray, nq: int) -> np.ndarray:
    return _pattern_table(nq)[np.asarray(indices)]
