"""Pattern transfer graph: vertices are weight patterns, edges are Pauli fidelities.

Edge ``(x, y, Q)`` runs from ``pt(G^dagger(Q (x) Z^x))`` to ``pt(Q (x) Z^y)``.
Edges are stored in ``(x, y, Q)`` lexicographic order, which coincides with
the flattened layout of a :class:`~mcmbench.channels.FidelityTable`, so a
dense 1-chain can be dotted straight into ``log(fidelities.values).ravel()``.
"""

from __future__ import annotations

import itertools
import json
from collections.abc import Mapping
from dataclasses import dataclass
from fractions import Fraction
from functools import cached_property

import networkx as nx
import numpy as np

from .channels import gate_maps
from .pauli import (
    CliffordTableau,
    PauliOp,
    all_paulis,
    hadamard,
    controlled_pauli,
    pattern,
    pattern_str,
    symplectic_inner,
)

CUT_TOL = 1e-9


# ---------------------------------------------------------------------------
# chains


class _Chain(Mapping):
    """Sparse formal linear combination; zero coefficients are dropped."""

    __slots__ = ("_data",)

    def __init__(self, data=None):
        clean = {}
        for k, v in dict(data or {}).items():
            if v != 0:
                clean[k] = v
        self._data = clean

    def __getitem__(self, key):
        return self._data[key]

    def get(self, key, default=0):
        return self._data.get(key, default)

    def __iter__(self):
        return iter(sorted(self._data))

    def __len__(self):
        return len(self._data)

    def __eq__(self, other):
        return isinstance(other, Mapping) and dict(self.items()) == dict(other.items())

    __hash__ = None

    def _combine(self, other, sign):
        out = dict(self._data)
        for k, v in other.items():
            out[k] = out.get(k, 0) + sign * v
        return type(self)(out)

    def __add__(self, other):
        return self._combine(other, 1)

    def __sub__(self, other):
        return self._combine(other, -1)

    def __neg__(self):
        return type(self)({k: -v for k, v in self._data.items()})

    def __mul__(self, scalar):
        return type(self)({k: scalar * v for k, v in self._data.items()})

    __rmul__ = __mul__

    def norm(self) -> float:
        return float(np.sqrt(sum(float(v) ** 2 for v in self._data.values())))

    def __repr__(self):
        return f"{type(self).__name__}({dict(self.items())!r})"


class OneChain(_Chain):
    """Map ``(x, y, Q index)`` to a coefficient."""

    def dot(self, values: np.ndarray) -> float:
        """Pair with an edge-indexed table such as log-fidelities ``[x, y, Q]``."""
        return float(sum(float(c) * values[k] for k, c in self._data.items()))

    def to_json(self, n: int, m: int) -> dict:
        return {edge_key_str(k, n, m): float(v) for k, v in self.items()}

    @classmethod
    def from_json(cls, data: dict, m: int) -> "OneChain":
        out = {}
        for key, v in data.items():
            x, y, q = key.split("|")
            out[(int(x, 2) if x else 0, int(y, 2) if y else 0, PauliOp.from_string(q).index if m else 0)] = v
        return cls(out)


class ZeroChain(_Chain):
    """Map weight pattern (int) to a coefficient."""


def edge_key_str(key: tuple, n: int, m: int) -> str:
    x, y, q = key
    fmt = lambda v: format(v, f"0{n}b") if n else ""  # noqa: E731
    return f"{fmt(x)}|{fmt(y)}|{PauliOp.from_index(q, m) if m else ''}"


def edge_name(key: tuple, n: int, m: int) -> str:
    """Compact label such as ``Z01`` for ``(x=0, y=1, Q=Z)``."""
    x, y, q = key
    fmt = lambda v: format(v, f"0{n}b") if n else ""  # noqa: E731
    return f"{PauliOp.from_index(q, m) if m else ''}{fmt(x)}{fmt(y)}"


# ---------------------------------------------------------------------------
# graph


@dataclass(frozen=True)
class EdgeLabel:
    x: int
    y: int
    q: int
    src: int
    dst: int

    @property
    def key(self) -> tuple:
        return (self.x, self.y, self.q)

    @property
    def is_loop(self) -> bool:
        return self.src == self.dst


@dataclass(frozen=True, eq=False)
class PatternTransferGraph:
    n: int
    m: int
    gate: CliffordTableau
    edges: tuple

    @property
    def n_vertices(self) -> int:
        return 1 << (self.n + self.m)

    @cached_property
    def index(self) -> dict:
        return {e.key: i for i, e in enumerate(self.edges)}

    def edge(self, key) -> EdgeLabel:
        if isinstance(key, str):
            key = parse_edge_name(key, self.n, self.m)
        try:
            return self.edges[self.index[tuple(key)]]
        except KeyError:
            raise KeyError(f"edge {key!r} is not in this graph") from None

    @cached_property
    def incidence(self) -> np.ndarray:
        """``B[v, e]``: +1 at the head, -1 at the tail, 0 for loops."""
        B = np.zeros((self.n_vertices, len(self.edges)))
        for i, e in enumerate(self.edges):
            if not e.is_loop:
                B[e.dst, i] += 1
                B[e.src, i] -= 1
        return B

    @cached_property
    def touched(self) -> tuple:
        return tuple(sorted({e.src for e in self.edges} | {e.dst for e in self.edges}))

    def cycle_dimension(self) -> int:
        und = nx.MultiGraph()
        und.add_nodes_from(self.touched)
        und.add_edges_from((e.src, e.dst) for e in self.edges)
        return len(self.edges) - und.number_of_nodes() + nx.number_connected_components(und)

    def to_dense(self, chain: OneChain) -> np.ndarray:
        vec = np.zeros(len(self.edges))
        for k, c in chain.items():
            if tuple(k) not in self.index:
                raise KeyError(f"edge {k!r} is not in this graph")
            vec[self.index[tuple(k)]] = float(c)
        return vec

    def from_dense(self, vec: np.ndarray, tol: float = 0.0) -> OneChain:
        return OneChain({e.key: float(v) for e, v in zip(self.edges, vec) if abs(v) > tol})

    def to_json(self) -> dict:
        nq = self.n + self.m
        return {
            "n": self.n,
            "m": self.m,
            "gate": self.gate.to_json(),
            "vertices": [pattern_str(v, nq) for v in range(self.n_vertices)],
            "edges": [
                {
                    "key": edge_key_str(e.key, self.n, self.m),
                    "name": edge_name(e.key, self.n, self.m),
                    "src": pattern_str(e.src, nq),
                    "dst": pattern_str(e.dst, nq),
                }
                for e in self.edges
            ],
        }

    def to_dot(self) -> str:
        nq = self.n + self.m
        lines = ["digraph ptg {"]
        for v in range(self.n_vertices):
            lines.append(f'  "{pattern_str(v, nq)}";')
        for e in self.edges:
            lines.append(
                f'  "{pattern_str(e.src, nq)}" -> "{pattern_str(e.dst, nq)}" '
                f'[label="{edge_name(e.key, self.n, self.m)}"];'
            )
        lines.append("}")
        return "\n".join(lines) + "\n"


def parse_edge_name(name: str, n: int, m: int) -> tuple:
    q, x, y = name[:m], name[m : m + n], name[m + n :]
    return (int(x, 2) if n else 0, int(y, 2) if n else 0, PauliOp.from_string(q).index if m else 0)


def build_ptg(g: CliffordTableau, n: int, m: int) -> PatternTransferGraph:
    src, _, dst = gate_maps(g, n, m)
    nq = n + m
    pts = {}

    def pt(i):
        if i not in pts:
            pts[i] = pattern(PauliOp.from_index(int(i), nq))
        return pts[i]

    edges = []
    A = 1 << n
    for x, y, q in itertools.product(range(A), range(A), range(4**m)):
        edges.append(EdgeLabel(x, y, q, pt(src[x, q]), pt(dst[y, q])))
    return PatternTransferGraph(n, m, g, tuple(edges))


# ---------------------------------------------------------------------------
# boundary / coboundary


def boundary(mu: Mapping, graph: PatternTransferGraph) -> ZeroChain:
    out = {}
    for k, c in mu.items():
        e = graph.edge(k)
        if e.is_loop:
            continue
        out[e.dst] = out.get(e.dst, 0) + c
        out[e.src] = out.get(e.src, 0) - c
    return ZeroChain(out)


def coboundary(nu: Mapping, graph: PatternTransferGraph) -> OneChain:
    for v in nu:
        if not 0 <= int(v) < graph.n_vertices:
            raise KeyError(f"vertex {v!r} is not in this graph")
    out = {}
    for e in graph.edges:
        if e.is_loop:
            continue
        c = nu.get(e.dst, 0) - nu.get(e.src, 0)
        if c:
            out[e.key] = c
    return OneChain(out)


@dataclass(frozen=True)
class Decomposition:
    cycle_part: OneChain
    cut_part: OneChain
    potential: ZeroChain
    residual: float


def cycle_cut_decompose(mu: Mapping, graph: PatternTransferGraph) -> Decomposition:
    """Orthogonal split ``mu = cycle + cut`` with ``cut = delta(potential)``."""
    vec = graph.to_dense(mu)
    B = graph.incidence
    nu, *_ = np.linalg.lstsq(B.T, vec, rcond=None)
    cut = B.T @ nu
    cyc = vec - cut
    residual = float(np.abs(B @ cyc).max()) if len(vec) else 0.0
    return Decomposition(
        graph.from_dense(np.where(np.abs(cyc) > 1e-14, cyc, 0.0)),
        graph.from_dense(np.where(np.abs(cut) > 1e-14, cut, 0.0)),
        ZeroChain({v: float(c) for v, c in enumerate(nu) if abs(c) > 1e-14}),
        residual,
    )


def is_learnable(mu: Mapping, graph: PatternTransferGraph) -> bool:
    return cycle_cut_decompose(mu, graph).cut_part.norm() <= CUT_TOL


# ---------------------------------------------------------------------------
# cycle bases


def cycle_basis(graph: PatternTransferGraph) -> list[OneChain]:
    """Fundamental cycles of a BFS spanning forest (edges in ``(x, y, Q)`` order).

    Loops are cycles on their own.  Each non-tree edge is closed through the
    tree, with tree edges traversed against their direction getting ``-1``.
    """
    adj = {v: [] for v in graph.touched}
    for e in graph.edges:
        if not e.is_loop:
            adj[e.src].append(e)
            adj[e.dst].append(e)
    parent: dict[int, tuple | None] = {}
    tree = set()
    for root in graph.touched:
        if root in parent:
            continue
        parent[root] = None
        queue = [root]
        while queue:
            v = queue.pop(0)
            for e in adj[v]:
                w = e.dst if e.src == v else e.src
                if w not in parent:
                    parent[w] = (e, v)
                    tree.add(e.key)
                    queue.append(w)

    def root_path(v):
        """Chain from the root to ``v`` along the tree."""
        out = {}
        while parent[v] is not None:
            e, u = parent[v]
            out[e.key] = out.get(e.key, 0) + (1 if e.dst == v else -1)
            v = u
        return OneChain(out)

    basis = []
    for e in graph.edges:
        if e.is_loop:
            basis.append(OneChain({e.key: 1}))
        elif e.key not in tree:
            # e goes src -> dst; close with the tree path dst -> src
            basis.append(OneChain({e.key: 1}) + root_path(e.src) - root_path(e.dst))
    return basis


def _simple_edge_cycles(graph: PatternTransferGraph, length: int) -> list[list[tuple]]:
    """Simple directed cycles with exactly ``length`` edges, as ordered edge-key lists.

    Where several edges join the same two vertices only the first choice and
    its single-edge swaps are listed; every other choice is in their span.
    """
    if length == 1:
        return [[e.key] for e in graph.edges if e.is_loop]
    parallel: dict[tuple, list] = {}
    for e in graph.edges:
        parallel.setdefault((e.src, e.dst), []).append(e.key)
    dg = nx.DiGraph()
    dg.add_edges_from(pair for pair in parallel if pair[0] != pair[1])
    found = []
    for verts in nx.simple_cycles(dg, length_bound=length):
        if len(verts) != length:
            continue
        hops = [(verts[i], verts[(i + 1) % len(verts)]) for i in range(len(verts))]
        base = [parallel[h][0] for h in hops]
        found.append(base)
        for i, h in enumerate(hops):
            for alt in parallel[h][1:]:
                found.append(base[:i] + [alt] + base[i + 1 :])
    return found


def directed_cycle_basis(graph: PatternTransferGraph, limit: int = 50000) -> list[list[tuple]] | None:
    """Greedy basis of short directed cycles, or ``None`` if none is found.

    Candidates are taken in order of length, then edge keys; a candidate is
    kept if it raises the rank.  The search gives up after ``limit``
    candidates.  Each returned cycle is an ordered edge list that can be run
    as a path.
    """
    target = graph.cycle_dimension()
    n_vertices = len(graph.touched)
    # an edge between strongly connected components lies on no directed cycle
    dg = nx.DiGraph()
    dg.add_edges_from((e.src, e.dst) for e in graph.edges)
    comp = {v: i for i, c in enumerate(nx.strongly_connected_components(dg)) for v in c}
    if any(comp[e.src] != comp[e.dst] for e in graph.edges):
        return None

    def canon(c):
        i = min(range(len(c)), key=lambda j: c[j])
        return c[i:] + c[:i]

    chosen = []
    ortho = np.zeros((target, len(graph.edges)))  # orthonormal rows spanning the chosen cycles
    seen = 0
    for length in range(1, n_vertices + 1):
        cands = sorted((canon(c) for c in _simple_edge_cycles(graph, length)), key=sorted)
        for c in cands:
            seen += 1
            if seen > limit:
                return None
            vec = graph.to_dense(OneChain({k: 1 for k in c}))
            rank = len(chosen)
            resid = vec - ortho[:rank].T @ (ortho[:rank] @ vec)
            norm = np.linalg.norm(resid)
            if norm > 1e-9 * max(1.0, np.linalg.norm(vec)):
                ortho[rank] = resid / norm
                chosen.append(c)
                if len(chosen) == target:
                    return chosen
    return None


# ---------------------------------------------------------------------------
# error-rate chains and propositions


def _sign(bit: int) -> int:
    return -1 if bit & 1 else 1


def _dot_bits(a: int, b: int) -> int:
    return bin(a & b).count("1") & 1


def error_rate_chain(a: int, b: int, p: PauliOp | str, graph: PatternTransferGraph, exact: bool = False) -> OneChain:
    """``4^-(n+m) sum (-1)^{a.x + b.y + <P,Q>} e_{x,y}^Q``.

    Paired with log-fidelities this is the low-noise estimate of
    ``p_{a,b}^P`` minus the constant ``[a = b = 0, P = I]``.
    """
    if isinstance(p, str):
        p = PauliOp.from_string(p)
    n, m = graph.n, graph.m
    scale = Fraction(1, 4 ** (n + m)) if exact else 4.0 ** -(n + m)
    out = {}
    for e in graph.edges:
        q = PauliOp.from_index(e.q, m)
        s = _sign(_dot_bits(a, e.x) + _dot_bits(b, e.y) + symplectic_inner(p, q))
        out[e.key] = s * scale
    return OneChain(out)


def error_rate_offset(a: int, b: int, p: PauliOp | str) -> float:
    if isinstance(p, str):
        p = PauliOp.from_string(p)
    return 1.0 if a == 0 and b == 0 and p.weight == 0 else 0.0


def stabilizer_products(stabilizers, m):
    n = len(stabilizers)
    for k in range(1 << n):
        prod = PauliOp.identity(m)
        for i, s in enumerate(stabilizers):
            if (k >> (n - 1 - i)) & 1:
                prod = prod * s
        yield prod


def proposition_chains(kind: int, graph: PatternTransferGraph, *, a: int = 0, b: int = 0, p="I", stabilizers=(), exact: bool = True) -> OneChain:
    """Learnable rate combinations.

    kind 1: ``p_{a,b}^P`` with ``a, b != 0``.
    kind 2: ``sum_k p_{0,0}^{S^k P}``.
    kind 3: ``sum_k p_{0,a}^{S^k P} + p_{a,0}^{S^k P}``.
    """
    m = graph.m
    if isinstance(p, str):
        p = PauliOp.from_string(p) if m else PauliOp.identity(0)
    stabilizers = [PauliOp.from_string(s) if isinstance(s, str) else s for s in stabilizers]
    if kind == 1:
        return error_rate_chain(a, b, p, graph, exact)
    if len(stabilizers) != graph.n:
        raise ValueError("need one stabilizer per ancilla")
    for s in stabilizers:
        if symplectic_inner(s, p):
            raise ValueError(f"{p} anticommutes with stabilizer {s}")
    total = OneChain()
    for sp in stabilizer_products(stabilizers, m):
        target = sp * p
        if kind == 2:
            total = total + error_rate_chain(0, 0, target, graph, exact)
        elif kind == 3:
            total = total + error_rate_chain(0, a, target, graph, exact) + error_rate_chain(a, 0, target, graph, exact)
        else:
            raise ValueError(f"unknown proposition kind {kind}")
    return total


def build_syndrome_tableau(stabilizers) -> CliffordTableau:
    """Syndrome-extraction gadget: for ancilla ``i``, ``H . controlled-S_i . H``.

    System qubits come first, ancillas after them.
    """
    stabilizers = [PauliOp.from_string(s) if isinstance(s, str) else s for s in stabilizers]
    if not stabilizers:
        raise ValueError("need at least one stabilizer")
    m = stabilizers[0].n_qubits
    if any(s.n_qubits != m for s in stabilizers):
        raise ValueError("stabilizers must act on the same qubits")
    for s, t in itertools.combinations(stabilizers, 2):
        if symplectic_inner(s, t):
            raise ValueError(f"stabilizers {s} and {t} do not commute")
    nq = m + len(stabilizers)
    total = CliffordTableau.identity(nq)
    for i, s in enumerate(stabilizers):
        anc = m + i
        h = hadamard(nq, anc)
        step = h.compose(controlled_pauli(nq, anc, s, 0)).compose(h)
        total = step.compose(total)
    return total


def walsh_cycle_invariance_check(graph: PatternTransferGraph, atol: float = 1e-10) -> bool:
    """Check that the Walsh-Hadamard image of every basis cycle is a cycle (``n = 0`` only)."""
    if graph.n != 0:
        raise ValueError("the Walsh-Hadamard invariance only holds for n = 0")
    m = graph.m
    paulis = list(all_paulis(m))
    signs = np.array([[_sign(symplectic_inner(p, q)) for q in paulis] for p in paulis], dtype=float)
    for cyc in cycle_basis(graph):
        coeff = np.zeros(4**m)
        for (_, _, q), c in cyc.items():
            coeff += c * signs[q]
        image = OneChain({(0, 0, r): coeff[r] / 4**m for r in range(4**m)})
        bd = boundary(image, graph)
        if any(abs(v) > atol for v in bd.values()):
            return False
    return True


# ---------------------------------------------------------------------------
# closed-walk decomposition


def balance(mu_pos: Mapping, mu_neg: Mapping, graph: PatternTransferGraph) -> OneChain:
    """Cheapest non-negative integer chain ``w`` with ``d(mu_pos + w) = 0``.

    Requires ``d(mu_pos) = d(mu_neg)``; adding ``w`` to both sides keeps the
    difference unchanged.  Solved as a min-cost flow using one representative
    edge (lowest key) per vertex pair.
    """
    bp, bn = boundary(mu_pos, graph), boundary(mu_neg, graph)
    if any(bp.get(v, 0) != bn.get(v, 0) for v in set(bp) | set(bn)):
        raise ValueError("positive and negative parts have different boundaries")
    rep: dict[tuple, tuple] = {}
    for e in graph.edges:
        if not e.is_loop and (e.src, e.dst) not in rep:
            rep[(e.src, e.dst)] = e.key
    flow_graph = nx.DiGraph()
    flow_graph.add_nodes_from(range(graph.n_vertices))
    for (u, v), key in rep.items():
        flow_graph.add_edge(u, v, weight=1)
    for v in range(graph.n_vertices):
        flow_graph.nodes[v]["demand"] = -int(bp.get(v, 0))
    flow = nx.min_cost_flow(flow_graph)
    out = {}
    for u, targets in flow.items():
        for v, f in targets.items():
            if f:
                out[rep[(u, v)]] = f
    return OneChain(out)


def closed_walks(mu: Mapping, graph: PatternTransferGraph) -> list[list[tuple]]:
    """Split a balanced non-negative integer chain into closed walks (one per component)."""
    mg = nx.MultiDiGraph()
    for k in sorted(mu):
        c = mu[k]
        if c < 0 or int(c) != c:
            raise ValueError("closed-walk decomposition needs non-negative integer coefficients")
        e = graph.edge(k)
        for _ in range(int(c)):
            mg.add_edge(e.src, e.dst, key=len(mg.edges), label=k)
    walks = []
    for comp in sorted(nx.weakly_connected_components(mg), key=min):
        sub = mg.subgraph(comp)
        if not nx.is_eulerian(sub):
            raise ValueError("chain is not balanced")
        start = min(comp)
        walks.append([sub.edges[u, v, k]["label"] for u, v, k in nx.eulerian_circuit(sub, source=start, keys=True)])
    return walks


def signed_parts(mu: Mapping, scale) -> tuple[OneChain, OneChain]:
    """Integer positive and negative parts of ``mu / scale``."""
    pos, neg = {}, {}
    for k, c in mu.items():
        v = c / scale
        iv = int(round(float(v)))
        if abs(float(v) - iv) > 1e-9:
            raise ValueError("chain is not an integer multiple of the scale")
        if iv > 0:
            pos[k] = iv
        elif iv < 0:
            neg[k] = -iv
    return OneChain(pos), OneChain(neg)


def dump_chain(chain: OneChain, graph: PatternTransferGraph) -> str:
    return json.dumps(chain.to_json(graph.n, graph.m), sort_keys=True)


def random_path(graph: PatternTransferGraph, length: int, rng: np.random.Generator, closed: bool = False) -> list[tuple]:
    """Random walk of ``length`` edges; with ``closed`` it retries until it returns to its start."""
    out_edges: dict[int, list] = {}
    for e in graph.edges:
        out_edges.setdefault(e.src, []).append(e)
    for _ in range(10000):
        e = graph.edges[rng.integers(len(graph.edges))]
        walk = [e]
        while len(walk) < length and out_edges.get(walk[-1].dst):
            nxt = out_edges[walk[-1].dst]
            walk.append(nxt[rng.integers(len(nxt))])
        if len(walk) == length and (not closed or walk[-1].dst == walk[0].src):
            return [w.key for w in walk]
    raise ValueError("could not find a path of the requested shape")
