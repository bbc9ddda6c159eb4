"""Pauli operators, weight patterns and Clifford tableaux on a few qubits.

Paulis are phase-free and stored in the symplectic representation as two
integer bit masks.  Qubit 0 is the *most significant* bit of each mask, so the
mask of a pattern prints in the same order as the Pauli string
(``pattern(IZ) == 0b01``).  Strings list system qubits first, then ancillas.

Clifford tableaux do keep a sign per generator image, because conjugating a
Pauli by a Clifford can flip the sign of the observable.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

MAX_QUBITS = 16

_LETTER_BITS = {"I": (0, 0), "X": (1, 0), "Y": (1, 1), "Z": (0, 1)}
_BITS_LETTER = {v: k for k, v in _LETTER_BITS.items()}
# table digit of a single-qubit Pauli: I, X, Y, Z -> 0, 1, 2, 3
_BITS_DIGIT = {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3}
_DIGIT_BITS = {v: k for k, v in _BITS_DIGIT.items()}

PAULI_MATRICES = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def _popcount(v: int) -> int:
    return bin(v).count("1")


def _bit(mask: int, qubit: int, n_qubits: int) -> int:
    return (mask >> (n_qubits - 1 - qubit)) & 1


@dataclass(frozen=True)
class PauliOp:
    """An ``n_qubits`` Pauli operator modulo phase."""

    n_qubits: int
    x: int = 0
    z: int = 0

    def __post_init__(self):
        if not 0 <= self.n_qubits <= MAX_QUBITS:
            raise ValueError(f"n_qubits must be in [0, {MAX_QUBITS}], got {self.n_qubits}")
        limit = 1 << self.n_qubits
        if not (0 <= self.x < limit and 0 <= self.z < limit):
            raise ValueError("bit masks do not fit in n_qubits")

    @classmethod
    def from_string(cls, label: str) -> "PauliOp":
        label = label.strip().upper()
        n = len(label)
        x = z = 0
        for ch in label:
            if ch not in _LETTER_BITS:
                raise ValueError(f"invalid Pauli letter {ch!r} in {label!r}")
            bx, bz = _LETTER_BITS[ch]
            x = (x << 1) | bx
            z = (z << 1) | bz
        return cls(n, x, z)

    @classmethod
    def identity(cls, n_qubits: int) -> "PauliOp":
        return cls(n_qubits, 0, 0)

    @classmethod
    def from_index(cls, index: int, n_qubits: int) -> "PauliOp":
        """Inverse of :attr:`index`."""
        x = z = 0
        for q in range(n_qubits):
            digit = (index >> (2 * (n_qubits - 1 - q))) & 3
            bx, bz = _DIGIT_BITS[digit]
            x = (x << 1) | bx
            z = (z << 1) | bz
        return cls(n_qubits, x, z)

    @classmethod
    def z_power(cls, bits: int, n_qubits: int) -> "PauliOp":
        """``Z^bits`` on ``n_qubits`` qubits."""
        return cls(n_qubits, 0, bits)

    @property
    def index(self) -> int:
        """Position in dense tables: base-4 digits I,X,Y,Z = 0..3, qubit 0 first."""
        idx = 0
        for q in range(self.n_qubits):
            bits = (_bit(self.x, q, self.n_qubits), _bit(self.z, q, self.n_qubits))
            idx = (idx << 2) | _BITS_DIGIT[bits]
        return idx

    @property
    def weight(self) -> int:
        return _popcount(self.x | self.z)

    def letter(self, qubit: int) -> str:
        n = self.n_qubits
        return _BITS_LETTER[(_bit(self.x, qubit, n), _bit(self.z, qubit, n))]

    def __str__(self) -> str:
        return "".join(self.letter(q) for q in range(self.n_qubits)) or "-"

    def __repr__(self) -> str:
        return f"PauliOp({str(self)!r})"

    def __mul__(self, other: "PauliOp") -> "PauliOp":
        _check_size(self, other)
        return PauliOp(self.n_qubits, self.x ^ other.x, self.z ^ other.z)

    def tensor(self, other: "PauliOp") -> "PauliOp":
        """``self ⊗ other`` with ``self`` on the leading qubits."""
        k = other.n_qubits
        return PauliOp(self.n_qubits + k, (self.x << k) | other.x, (self.z << k) | other.z)

    def split(self, n_first: int) -> tuple["PauliOp", "PauliOp"]:
        """Split into the factors on the first ``n_first`` and remaining qubits."""
        k = self.n_qubits - n_first
        mask = (1 << k) - 1
        return (PauliOp(n_first, self.x >> k, self.z >> k), PauliOp(k, self.x & mask, self.z & mask))

    def qubit_factor(self, qubit: int) -> "PauliOp":
        n = self.n_qubits
        return PauliOp(1, _bit(self.x, qubit, n), _bit(self.z, qubit, n))

    def to_matrix(self) -> np.ndarray:
        out = np.ones((1, 1), dtype=complex)
        for q in range(self.n_qubits):
            out = np.kron(out, PAULI_MATRICES[self.letter(q)])
        return out


def _check_size(p: PauliOp, q: PauliOp) -> None:
    if p.n_qubits != q.n_qubits:
        raise ValueError(f"size mismatch: {p.n_qubits} vs {q.n_qubits} qubits")


def symplectic_inner(p: PauliOp, q: PauliOp) -> int:
    """0 if ``p`` and ``q`` commute, 1 otherwise."""
    _check_size(p, q)
    return _popcount((p.x & q.z) ^ (p.z & q.x)) & 1


def pattern(p: PauliOp) -> int:
    """Weight pattern of ``p`` as a bit mask (1 where ``p`` is not identity)."""
    return p.x | p.z


def pattern_str(v: int, n_qubits: int) -> str:
    return format(v, f"0{n_qubits}b") if n_qubits else ""


def all_paulis(n_qubits: int):
    """All ``4**n_qubits`` Paulis in table order."""
    return [PauliOp.from_index(i, n_qubits) for i in range(4**n_qubits)]


@lru_cache(maxsize=None)
def pauli_matrices(n_qubits: int) -> np.ndarray:
    """Stack of all Pauli matrices on ``n_qubits`` qubits, in table order."""
    if n_qubits > 6:
        raise ValueError("dense Pauli stacks are capped at 6 qubits")
    single = np.stack([PAULI_MATRICES[c] for c in "IXYZ"])
    out = np.ones((1, 1, 1), dtype=complex)
    for _ in range(n_qubits):
        out = np.einsum("aij,bkl->abikjl", out, single).reshape(
            out.shape[0] * 4, out.shape[1] * 2, out.shape[2] * 2
        )
    out.setflags(write=False)
    return out


# ---------------------------------------------------------------------------
# Clifford tableaux


def _mul_phase(acc, term):
    """Multiply ``i^k X^x Z^z`` operators given as (k, x, z) triples."""
    k1, x1, z1 = acc
    k2, x2, z2 = term
    return ((k1 + k2 + 2 * _popcount(z1 & x2)) % 4, x1 ^ x2, z1 ^ z2)


@dataclass(frozen=True)
class CliffordTableau:
    """Conjugation action ``P -> U P U^dagger`` of a Clifford ``U``.

    ``x_images[q]`` and ``z_images[q]`` hold ``(PauliOp, sign)`` for the images
    of ``X_q`` and ``Z_q``.
    """

    n_qubits: int
    x_images: tuple
    z_images: tuple

    def __post_init__(self):
        n = self.n_qubits
        if len(self.x_images) != n or len(self.z_images) != n:
            raise ValueError("need one image per generator")
        for p, s in itertools.chain(self.x_images, self.z_images):
            if p.n_qubits != n or s not in (1, -1):
                raise ValueError("malformed generator image")

    @classmethod
    def identity(cls, n_qubits: int) -> "CliffordTableau":
        xs = tuple((PauliOp(n_qubits, 1 << (n_qubits - 1 - q), 0), 1) for q in range(n_qubits))
        zs = tuple((PauliOp(n_qubits, 0, 1 << (n_qubits - 1 - q)), 1) for q in range(n_qubits))
        return cls(n_qubits, xs, zs)

    def conjugate(self, p: PauliOp) -> tuple[PauliOp, int]:
        """Return ``(P', s)`` with ``U p U^dagger = s P'``."""
        _check_size(p, PauliOp(self.n_qubits))
        n = self.n_qubits
        acc = (_popcount(p.x & p.z) % 4, 0, 0)
        for q in range(n):
            if _bit(p.x, q, n):
                img, s = self.x_images[q]
                acc = _mul_phase(acc, ((_popcount(img.x & img.z) + (0 if s > 0 else 2)) % 4, img.x, img.z))
        for q in range(n):
            if _bit(p.z, q, n):
                img, s = self.z_images[q]
                acc = _mul_phase(acc, ((_popcount(img.x & img.z) + (0 if s > 0 else 2)) % 4, img.x, img.z))
        k, x, z = acc
        rel = (k - _popcount(x & z)) % 4
        if rel not in (0, 2):
            raise ValueError("tableau is not symplectic (non-Hermitian image)")
        return PauliOp(n, x, z), (1 if rel == 0 else -1)

    def compose(self, first: "CliffordTableau") -> "CliffordTableau":
        """Tableau of ``self ∘ first``, i.e. the unitary ``U_self U_first``."""
        if first.n_qubits != self.n_qubits:
            raise ValueError("size mismatch")

        def push(image):
            p, s = image
            q, t = self.conjugate(p)
            return (q, s * t)

        return CliffordTableau(
            self.n_qubits,
            tuple(push(im) for im in first.x_images),
            tuple(push(im) for im in first.z_images),
        )

    def inverse(self) -> "CliffordTableau":
        n = self.n_qubits
        # M^{-1} = Omega M^T Omega for a symplectic M; columns are generator images
        mat = self.symplectic_matrix()
        omega = np.block(
            [[np.zeros((n, n), dtype=np.int64), np.eye(n, dtype=np.int64)],
             [np.eye(n, dtype=np.int64), np.zeros((n, n), dtype=np.int64)]]
        )
        inv = (omega @ mat.T @ omega) % 2
        images = []
        for col in range(2 * n):
            vec = inv[:, col]
            x = int("".join(map(str, vec[:n])), 2) if n else 0
            z = int("".join(map(str, vec[n:])), 2) if n else 0
            cand = PauliOp(n, x, z)
            _, s = self.conjugate(cand)
            images.append((cand, s))
        return CliffordTableau(n, tuple(images[:n]), tuple(images[n:]))

    def symplectic_matrix(self) -> np.ndarray:
        """``2n x 2n`` GF(2) matrix whose columns are images of X_0..X_{n-1}, Z_0..Z_{n-1}."""
        n = self.n_qubits
        mat = np.zeros((2 * n, 2 * n), dtype=np.int64)
        for col, (p, _) in enumerate(itertools.chain(self.x_images, self.z_images)):
            for q in range(n):
                mat[q, col] = _bit(p.x, q, n)
                mat[n + q, col] = _bit(p.z, q, n)
        return mat

    def is_symplectic(self) -> bool:
        n = self.n_qubits
        gens = [p for p, _ in itertools.chain(self.x_images, self.z_images)]
        for i, j in itertools.combinations(range(2 * n), 2):
            expected = 1 if (j - i == n) else 0
            if symplectic_inner(gens[i], gens[j]) != expected:
                return False
        return True

    def to_unitary(self) -> np.ndarray:
        """A unitary realising this tableau (global phase fixed arbitrarily)."""
        n = self.n_qubits
        dim = 1 << n
        proj = np.eye(dim, dtype=complex)
        for p, s in self.z_images:
            proj = proj @ (np.eye(dim) + s * p.to_matrix()) / 2
        col0 = None
        for j in range(dim):
            v = proj[:, j]
            if np.linalg.norm(v) > 1e-6:
                col0 = v / np.linalg.norm(v)
                break
        u = np.zeros((dim, dim), dtype=complex)
        xs = [s * p.to_matrix() for p, s in self.x_images]
        for j in range(dim):
            v = col0
            for q in range(n):
                if _bit(j, q, n):
                    v = xs[q] @ v
            u[:, j] = v
        return u

    @classmethod
    def from_unitary(cls, u: np.ndarray, atol: float = 1e-9) -> "CliffordTableau":
        u = np.asarray(u, dtype=complex)
        n = int(round(np.log2(u.shape[0])))
        if u.shape != (1 << n, 1 << n):
            raise ValueError("unitary must be 2^n x 2^n")
        mats = pauli_matrices(n)
        dim = 1 << n

        def image(p: PauliOp):
            m = u @ p.to_matrix() @ u.conj().T
            coeffs = np.einsum("aji,ij->a", mats, m) / dim
            idx = int(np.argmax(np.abs(coeffs)))
            c = coeffs[idx]
            if abs(abs(c) - 1) > atol or abs(c.imag) > atol:
                raise ValueError("matrix is not a Clifford unitary")
            return PauliOp.from_index(idx, n), (1 if c.real > 0 else -1)

        xs = tuple(image(PauliOp(n, 1 << (n - 1 - q), 0)) for q in range(n))
        zs = tuple(image(PauliOp(n, 0, 1 << (n - 1 - q))) for q in range(n))
        return cls(n, xs, zs)

    def tensor(self, other: "CliffordTableau") -> "CliffordTableau":
        """``self ⊗ other`` with ``self`` on the leading qubits."""
        a, b = self.n_qubits, other.n_qubits
        ib, ia = PauliOp.identity(b), PauliOp.identity(a)
        xs = tuple((p.tensor(ib), s) for p, s in self.x_images) + tuple(
            (ia.tensor(p), s) for p, s in other.x_images
        )
        zs = tuple((p.tensor(ib), s) for p, s in self.z_images) + tuple(
            (ia.tensor(p), s) for p, s in other.z_images
        )
        return CliffordTableau(a + b, xs, zs)

    def to_json(self) -> dict:
        return {
            "n_qubits": self.n_qubits,
            "x_images": [[str(p), s] for p, s in self.x_images],
            "z_images": [[str(p), s] for p, s in self.z_images],
        }

    @classmethod
    def from_json(cls, data: dict | str) -> "CliffordTableau":
        if isinstance(data, str):
            data = json.loads(data)
        n = int(data["n_qubits"])

        def parse(entries):
            out = []
            for label, sign in entries:
                p = PauliOp.from_string(label) if n else PauliOp(0)
                out.append((p, int(sign)))
            return tuple(out)

        tab = cls(n, parse(data["x_images"]), parse(data["z_images"]))
        if not tab.is_symplectic():
            raise ValueError("tableau does not preserve commutation relations")
        return tab


def conjugate(g: CliffordTableau, p: PauliOp) -> tuple[PauliOp, int]:
    return g.conjugate(p)


# ---------------------------------------------------------------------------
# Named gates

_H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
_S = np.array([[1, 0], [0, 1j]], dtype=complex)


def _canonical_phase(u: np.ndarray) -> np.ndarray:
    flat = u.ravel()
    k = int(np.argmax(np.abs(flat) > 1e-9))
    return u * (abs(flat[k]) / flat[k])


@lru_cache(maxsize=None)
def single_qubit_cliffords() -> tuple[np.ndarray, ...]:
    """The 24 single-qubit Cliffords modulo phase, identity first (BFS over H, S)."""
    seen = []
    keys = set()
    frontier = [np.eye(2, dtype=complex)]
    while frontier:
        nxt = []
        for u in frontier:
            cu = _canonical_phase(u)
            key = tuple(np.round(cu, 8).ravel())
            if key in keys:
                continue
            keys.add(key)
            seen.append(cu)
            nxt.extend([_H @ cu, _S @ cu])
        frontier = nxt
    assert len(seen) == 24
    for u in seen:
        u.setflags(write=False)
    return tuple(seen)


@lru_cache(maxsize=None)
def single_qubit_clifford_tableaux() -> tuple[CliffordTableau, ...]:
    return tuple(CliffordTableau.from_unitary(u) for u in single_qubit_cliffords())


def solve_single_qubit_clifford(src: PauliOp, dst: PauliOp) -> int:
    """Index of the first canonical single-qubit Clifford mapping ``src`` to ``+dst``."""
    if src.n_qubits != 1 or dst.n_qubits != 1:
        raise ValueError("single-qubit Paulis required")
    if (pattern(src) == 0) != (pattern(dst) == 0):
        raise ValueError(f"pattern mismatch: {src} -> {dst}")
    for idx, tab in enumerate(single_qubit_clifford_tableaux()):
        if tab.conjugate(src) == (dst, 1):
            return idx
    raise AssertionError("unreachable: Clifford group acts transitively on X, Y, Z")


@dataclass(frozen=True)
class LocalClifford:
    """A tensor product of canonical single-qubit Cliffords, by table index."""

    indices: tuple

    @classmethod
    def identity(cls, n_qubits: int) -> "LocalClifford":
        return cls((0,) * n_qubits)

    @property
    def n_qubits(self) -> int:
        return len(self.indices)

    @property
    def is_identity(self) -> bool:
        return all(i == 0 for i in self.indices)

    def tableau(self) -> CliffordTableau:
        return _local_tableau(self.indices)

    def unitary(self) -> np.ndarray:
        return _local_unitary(self.indices)


@lru_cache(maxsize=4096)
def _local_tableau(indices: tuple) -> CliffordTableau:
    tabs = single_qubit_clifford_tableaux()
    out = CliffordTableau.identity(0)
    for i in indices:
        out = out.tensor(tabs[i])
    return out


@lru_cache(maxsize=4096)
def _local_unitary(indices: tuple) -> np.ndarray:
    us = single_qubit_cliffords()
    out = np.ones((1, 1), dtype=complex)
    for i in indices:
        out = np.kron(out, us[i])
    out.setflags(write=False)
    return out


def solve_local_clifford(src: PauliOp, dst: PauliOp) -> LocalClifford:
    """Tensor of single-qubit Cliffords mapping ``src`` to ``+dst`` qubit by qubit."""
    _check_size(src, dst)
    return LocalClifford(
        tuple(
            solve_single_qubit_clifford(src.qubit_factor(q), dst.qubit_factor(q))
            for q in range(src.n_qubits)
        )
    )


def cnot(n_qubits: int = 2, control: int = 0, target: int = 1) -> CliffordTableau:
    """CNOT tableau: X_c -> X_c X_t, Z_t -> Z_c Z_t."""
    n = n_qubits
    tab = CliffordTableau.identity(n)
    xs = list(tab.x_images)
    zs = list(tab.z_images)
    xc = xs[control][0]
    zt = zs[target][0]
    xs[control] = (PauliOp(n, xc.x | (1 << (n - 1 - target)), 0), 1)
    zs[target] = (PauliOp(n, 0, zt.z | (1 << (n - 1 - control))), 1)
    return CliffordTableau(n, tuple(xs), tuple(zs))


def hadamard(n_qubits: int, qubit: int) -> CliffordTableau:
    u = np.ones((1, 1), dtype=complex)
    for q in range(n_qubits):
        u = np.kron(u, _H if q == qubit else np.eye(2))
    return CliffordTableau.from_unitary(u)


def controlled_pauli(n_qubits: int, control: int, target: PauliOp, offset: int = 0) -> CliffordTableau:
    """Controlled-``target`` with ``target`` acting on qubits ``offset..offset+k-1``.

    X_c -> X_c (x) target; a Pauli anticommuting with ``target`` picks up Z_c.
    """
    n = n_qubits
    k = target.n_qubits
    if control in range(offset, offset + k):
        raise ValueError("control overlaps the target register")
    shift = n - offset - k
    tx, tz = target.x << shift, target.z << shift
    cbit = 1 << (n - 1 - control)
    ident = CliffordTableau.identity(n)
    xs, zs = [], []
    for q in range(n):
        for images, out in ((ident.x_images, xs), (ident.z_images, zs)):
            p, _ = images[q]
            if q == control and p.x:
                out.append((PauliOp(n, p.x | tx, p.z | tz), 1))
                continue
            if offset <= q < offset + k:
                t_full = PauliOp(n, tx, tz)
                if symplectic_inner(p, t_full):
                    out.append((PauliOp(n, p.x, p.z | cbit), 1))
                    continue
            out.append((p, 1))
    return CliffordTableau(n, tuple(xs), tuple(zs))


def named_gate(name: str, n: int = 1, m: int = 1) -> CliffordTableau:
    """Named gadget tableaux on ``m`` system qubits followed by ``n`` ancillas."""
    key = name.lower()
    if key in ("identity", "id"):
        return CliffordTableau.identity(n + m)
    if key in ("cnot", "cnot-sa", "cnot-as"):
        if n + m != 2:
            raise ValueError("CNOT gadgets need n + m == 2")
        # cnot / cnot-sa: first wire controls the second
        return cnot(2, 0, 1) if key != "cnot-as" else cnot(2, 1, 0)
    raise ValueError(f"unknown gate {name!r}")
