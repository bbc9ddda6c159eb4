"""Applications on top of the estimator: cycle characterization, independence
tests for measure-and-prepare structure, and error-rate reconstruction."""

from __future__ import annotations

import csv
import io
import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
import sympy

from .pauli import PauliOp
from .protocol import (
    EstimationReport,
    ShotBudget,
    SimulatorBackend,
    as_backend,
    compile_path,
    estimate_cycle_concatenated,
    estimate_path,
    predict_variance,
    seed_sequence,
)
from .ptgraph import (
    OneChain,
    PatternTransferGraph,
    balance,
    boundary,
    build_ptg,
    closed_walks,
    cycle_basis,
    cycle_cut_decompose,
    directed_cycle_basis,
    edge_name,
    error_rate_chain,
    error_rate_offset,
    proposition_chains,
    signed_parts,
    stabilizer_products,
)

TRIVIAL_EDGE = (0, 0, 0)
VERDICT_SIGMAS = 3.0


class EstimationFailed(RuntimeError):
    """An estimate had ``s / t <= 0``."""


# ---------------------------------------------------------------------------
# result types


@dataclass(frozen=True)
class CorrelationQuery:
    q: str
    x1: int
    x2: int
    y1: int
    y2: int

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise ValueError("queries need x1 < x2 and y1 < y2")

    def terms(self, m: int) -> list[tuple[int, tuple]]:
        qi = PauliOp.from_string(self.q).index if m else 0
        return [
            (1, (self.x1, self.y1, qi)),
            (1, (self.x2, self.y2, qi)),
            (-1, (self.x2, self.y1, qi)),
            (-1, (self.x1, self.y2, qi)),
        ]

    def label(self, n: int) -> str:
        f = lambda v: format(v, f"0{n}b")  # noqa: E731
        return f"c^{self.q}_{f(self.x1)},{f(self.x2)},{f(self.y1)},{f(self.y2)}"


@dataclass
class CycleEstimate:
    name: str
    edges: tuple
    coefficients: tuple
    report: EstimationReport
    geometric_mean: float
    geometric_mean_std: float
    truth: float | None = None
    predicted_std: float | None = None

    @property
    def trivial(self) -> bool:
        return self.edges == (TRIVIAL_EDGE,)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "geometric_mean": self.geometric_mean,
            "std": self.geometric_mean_std,
            "truth": self.truth,
            "predicted_std": self.predicted_std,
            "log_sum": self.report.value,
            "log_sum_std": self.report.std,
            "failed": self.report.failed,
        }


@dataclass
class QuantityEstimate:
    key: str
    value: float
    std: float
    truth: float | None = None
    verdict: str = ""
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"key": self.key, "value": self.value, "std": self.std, "truth": self.truth, "verdict": self.verdict}


@dataclass
class CharacterizationResult:
    cycle_estimates: list = field(default_factory=list)
    reconstructed_rates: dict = field(default_factory=dict)
    correlations: dict = field(default_factory=dict)

    def rows(self) -> list[dict]:
        out = []
        for c in self.cycle_estimates:
            if c.trivial:
                continue
            out.append({"key": c.name, "value": c.geometric_mean, "std": c.geometric_mean_std, "verdict": ""})
        for q in list(self.reconstructed_rates.values()) + list(self.correlations.values()):
            out.append({"key": q.key, "value": q.value, "std": q.std, "verdict": q.verdict})
        return out

    def to_json(self) -> dict:
        return {
            "cycles": [c.to_json() for c in self.cycle_estimates],
            "rates": [q.to_json() for q in self.reconstructed_rates.values()],
            "correlations": [q.to_json() for q in self.correlations.values()],
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["key", "value", "std", "verdict"])
        for row in self.rows():
            w.writerow([row["key"], _fmt(row["value"]), _fmt(row["std"]), row["verdict"]])
        return buf.getvalue()

    def plot_data(self) -> list[dict]:
        """``(x-label, y, yerr)`` triples in report order."""
        return [{"x": r["key"], "y": r["value"], "yerr": r["std"]} for r in self.rows()]


def _fmt(v) -> str:
    return "" if v is None else format(float(v), ".17g")


def _model_of(backend):
    return backend.model if isinstance(backend, SimulatorBackend) else None


# ---------------------------------------------------------------------------
# characterization


def _cycle_name(edges, coeffs, n, m) -> str:
    parts = []
    for i, (e, c) in enumerate(zip(edges, coeffs)):
        sign = "-" if c < 0 else ("+" if i else "")
        mag = "" if abs(c) == 1 else f"{abs(c)}"
        parts.append(f"{sign}{mag}{edge_name(e, n, m)}")
    return "".join(parts)


def _edge_sum_estimate(terms, backend, budget, seed, exact, workers) -> tuple[EstimationReport, list]:
    """Sum single-edge path estimates with coefficients; end points cancel for zero-boundary sums."""
    seeds = seed_sequence(seed).spawn(len(terms))
    reports, value, var = [], 0.0, 0.0
    for (c, key), sd in zip(terms, seeds):
        exp = compile_path([key], backend.gate, backend.n, backend.m)
        r = estimate_path(exp, backend, budget, sd, exact, workers)
        reports.append(r)
        if r.failed:
            return EstimationReport(None, float("nan"), r.s, r.t, 0, 0, 0, True, {"failed_edge": key}), reports
        value += c * r.value
        var += (c * r.std) ** 2
    rep = EstimationReport(
        value,
        math.sqrt(var),
        float("nan"),
        float("nan"),
        sum(r.shots_main for r in reports),
        sum(r.shots_aux for r in reports),
        sum(r.circuits for r in reports),
        False,
        {"terms": [r.value for r in reports], "stds": [r.std for r in reports]},
    )
    return rep, reports


def characterize(
    backend,
    budget: ShotBudget = ShotBudget(),
    seed=None,
    exact: bool = False,
    ell: int = 12,
    workers: int = 1,
    include_trivial: bool = True,
) -> CharacterizationResult:
    """Estimate every cycle-basis element.

    Uses a basis of short directed cycles when one exists, repeating each
    cycle ``ceil(ell / l)`` times; otherwise falls back to fundamental cycles
    estimated edge by edge.  The trivial ``I00`` loop (fidelity exactly 1)
    is estimated like the others but left out of report rows and plot data.
    """
    backend = as_backend(backend)
    graph = build_ptg(backend.gate, backend.n, backend.m)
    model = _model_of(backend)
    n, m = backend.n, backend.m
    directed = directed_cycle_basis(graph)
    if directed is not None:
        cycles = [(tuple(c), (1,) * len(c)) for c in directed]
    else:
        cycles = [(tuple(c.keys()), tuple(c.values())) for c in cycle_basis(graph)]
    if not include_trivial:
        cycles = [c for c in cycles if c[0] != (TRIVIAL_EDGE,)]
    seeds = seed_sequence(seed).spawn(len(cycles))
    result = CharacterizationResult()
    for (edges, coeffs), sd in zip(cycles, seeds):
        l = sum(abs(c) for c in coeffs)
        if directed is not None:
            L = max(1, math.ceil(ell / l))
            rep = estimate_cycle_concatenated(list(edges), [L], backend, budget, sd, exact, workers)
            ell_used = L * l
        else:
            rep, _ = _edge_sum_estimate(list(zip(coeffs, edges)), backend, budget, sd, exact, workers)
            ell_used = 1
        if rep.failed:
            geo, geo_std = float("nan"), float("nan")
        else:
            geo = math.exp(rep.value / l)
            geo_std = geo * rep.std / l
        truth = None
        if model is not None:
            lam = model.fidelities.values
            truth = math.exp(sum(c * math.log(lam[e]) for e, c in zip(edges, coeffs)) / l)
        predicted = None
        if directed is not None and not rep.failed and not exact:
            lam0 = rep.t
            N = rep.shots_main + rep.shots_aux
            predicted = math.sqrt(max(predict_variance(ell_used, N, min(lam0, 1.0), min(geo, 1.0)), 0.0))
        result.cycle_estimates.append(
            CycleEstimate(_cycle_name(edges, coeffs, n, m), edges, coeffs, rep, geo, geo_std, truth, predicted)
        )
    return result


# ---------------------------------------------------------------------------
# independence


def correlation_chain(query: CorrelationQuery, m: int) -> OneChain:
    out = {}
    for c, key in query.terms(m):
        out[key] = out.get(key, 0) + c
    return OneChain(out)


def independence_test(
    backend,
    queries,
    budget: ShotBudget = ShotBudget(),
    seed=None,
    exact: bool = False,
    workers: int = 1,
) -> dict:
    """Estimate correlations ``c^Q_{x1,x2,y1,y2}`` from four single-edge estimates each.

    The verdict is ``consistent`` when ``|value| <= 3 std``.  The four paths
    use disjoint circuits, so their variances add.
    """
    backend = as_backend(backend)
    graph = build_ptg(backend.gate, backend.n, backend.m)
    model = _model_of(backend)
    seeds = seed_sequence(seed).spawn(len(queries))
    out = {}
    for query, sd in zip(queries, seeds):
        chain = correlation_chain(query, backend.m)
        if boundary(chain, graph):
            raise ValueError(f"{query} does not have zero boundary")
        rep, _ = _edge_sum_estimate(query.terms(backend.m), backend, budget, sd, exact, workers)
        if rep.failed:
            raise EstimationFailed(f"estimate failed for {query.label(backend.n)}")
        truth = None
        if model is not None:
            truth = chain.dot(np.log(model.fidelities.values))
        if exact:
            verdict = "consistent" if abs(rep.value) <= 1e-10 else "nonzero"
        else:
            verdict = "consistent" if abs(rep.value) <= VERDICT_SIGMAS * rep.std else "nonzero"
        out[query] = QuantityEstimate(query.label(backend.n), rep.value, rep.std, truth, verdict, rep.diagnostics)
    return out


def all_correlation_queries(n: int, m: int) -> list[CorrelationQuery]:
    A = 1 << n
    labels = [str(PauliOp.from_index(i, m)) for i in range(4**m)]
    return [
        CorrelationQuery(q, x1, x2, y1, y2)
        for q in labels
        for x1, x2 in itertools.combinations(range(A), 2)
        for y1, y2 in itertools.combinations(range(A), 2)
    ]


# ---------------------------------------------------------------------------
# error rates


def rate_label(a: int, b: int, p, n: int) -> str:
    if n == 0:
        return f"p^{p}"
    f = lambda v: format(v, f"0{n}b") if n else ""  # noqa: E731
    return f"p_{f(a)},{f(b)}^{p}"


def error_rate_walks(a: int, b: int, p, graph: PatternTransferGraph):
    """Closed walks whose log-fidelity sums give the error-rate chain.

    Returns ``(scale, positive_walks, negative_walks, balancing_chain)`` with
    ``chain = scale * (sum positive - sum negative)`` once the trivial
    ``I00`` edge is dropped.
    """
    chain = error_rate_chain(a, b, p, graph, exact=True)
    decomp = cycle_cut_decompose(chain, graph)
    if decomp.cut_part.norm() > 1e-9:
        raise ValueError(f"{rate_label(a, b, p, graph.n)} is not learnable (cut norm {decomp.cut_part.norm():.3g})")
    chain = OneChain({k: v for k, v in chain.items() if k != TRIVIAL_EDGE})
    scale = Fraction(1, 4 ** (graph.n + graph.m))
    pos, neg = signed_parts(chain, scale)
    w = balance(pos, neg, graph)
    pw = closed_walks(pos + w, graph) if (pos + w) else []
    nw = closed_walks(neg + w, graph) if (neg + w) else []
    return scale, pw, nw, w


def reconstruct_error_rate(
    a: int,
    b: int,
    p,
    backend,
    budget: ShotBudget = ShotBudget(100, 10, 1, 1000),
    seed=None,
    exact: bool = False,
    repetitions: int = 1,
    workers: int = 1,
) -> QuantityEstimate:
    """Low-noise reconstruction of ``p_{a,b}^P`` from closed-walk estimates.

    With ``repetitions > 1`` the whole experiment is repeated and the std is
    the spread of the repetitions divided by ``sqrt(repetitions)``; otherwise
    bootstrap stds of the walks are propagated.
    """
    backend = as_backend(backend)
    graph = build_ptg(backend.gate, backend.n, backend.m)
    if isinstance(p, str):
        p = PauliOp.from_string(p)
    scale, pw, nw, w = error_rate_walks(a, b, p, graph)
    offset = error_rate_offset(a, b, p)
    walks = [(1, x) for x in pw] + [(-1, x) for x in nw]
    reps = 1 if exact else max(1, repetitions)
    seeds = seed_sequence(seed).spawn(reps)
    values, stds = [], []
    for sd in seeds:
        total, var = 0.0, 0.0
        for (sign, walk), wsd in zip(walks, sd.spawn(len(walks))):
            exp = compile_path(walk, backend.gate, backend.n, backend.m)
            r = estimate_path(exp, backend, budget, wsd, exact, workers)
            if r.failed:
                raise EstimationFailed(f"walk estimate failed for {rate_label(a, b, p, graph.n)}")
            total += sign * r.value
            var += r.std**2
        values.append(offset + float(scale) * total)
        stds.append(float(scale) * math.sqrt(var))
    if reps > 1:
        value = float(np.mean(values))
        std = float(np.std(values, ddof=1) / math.sqrt(reps))
    else:
        value, std = values[0], stds[0]
    model = _model_of(backend)
    truth = float(model.instrument.rates[a, b, p.index]) if model is not None else None
    details = {
        "walks": [[edge_name(k, graph.n, graph.m) for k in x] for _, x in walks],
        "signs": [s for s, _ in walks],
        "balancing": {edge_name(k, graph.n, graph.m): int(v) for k, v in w.items()},
        "repetition_values": values,
    }
    return QuantityEstimate(rate_label(a, b, p, graph.n), value, std, truth, "", details)


def linearized_rate(a: int, b: int, p, model) -> float:
    """What :func:`reconstruct_error_rate` converges to: the chain applied to exact log-fidelities."""
    graph = build_ptg(model.gate, model.n, model.m)
    chain = error_rate_chain(a, b, p, graph)
    return error_rate_offset(a, b, p) + chain.dot(np.log(model.fidelities.values))


# ---------------------------------------------------------------------------
# learnable rate combinations


SEARCH_MAX_KEYS = 64


def _rate_keys(n: int, m: int):
    A = 1 << n
    return list(itertools.product(range(A), range(A), range(4**m)))


def _combo_label(terms, n, m) -> str:
    out = []
    for i, (c, (a, b, q)) in enumerate(terms):
        lab = rate_label(a, b, PauliOp.from_index(q, m) if m else "", n)
        if i == 0:
            out.append(("-" if c < 0 else "") + lab)
        else:
            out.append((" - " if c < 0 else " + ") + lab)
    return "".join(out)


def _combo_chain(terms, graph, exact=True) -> OneChain:
    total = OneChain()
    for c, (a, b, q) in terms:
        p = PauliOp.from_index(q, graph.m) if graph.m else PauliOp.identity(0)
        total = total + c * error_rate_chain(a, b, p, graph, exact)
    return total


def _boundary_vectors(graph, keys) -> np.ndarray:
    """Integer boundary of each rate chain, scaled by ``4**(n+m)``."""
    scale = 4 ** (graph.n + graph.m)
    B = graph.incidence
    out = []
    for a, b, q in keys:
        p = PauliOp.from_index(q, graph.m) if graph.m else PauliOp.identity(0)
        ch = error_rate_chain(a, b, p, graph)
        out.append(np.rint(B @ graph.to_dense(ch) * scale))
    return np.array(out, dtype=np.int64)


def _search_combinations(graph, max_support: int):
    """Signed +-1 rate combinations with zero boundary, by support size."""
    keys = _rate_keys(graph.n, graph.m)
    bvec = _boundary_vectors(graph, keys)
    found = []
    zero = np.zeros(graph.n_vertices, dtype=np.int64)
    for i in range(len(keys)):
        if not bvec[i].any():
            found.append(((1, i),))
    if max_support >= 2:
        for i, j in itertools.combinations(range(len(keys)), 2):
            for s in (1, -1):
                if np.array_equal(bvec[i] + s * bvec[j], zero):
                    found.append(((1, i), (s, j)))
    if max_support >= 3:
        pair = {}
        for j, k in itertools.combinations(range(len(keys)), 2):
            for s1, s2 in itertools.product((1, -1), repeat=2):
                pair.setdefault(tuple(s1 * bvec[j] + s2 * bvec[k]), []).append(((s1, j), (s2, k)))
        for i in range(len(keys)):
            for (s1, j), (s2, k) in pair.get(tuple(-bvec[i]), []):
                if i < j:
                    found.append(((1, i), (s1, j), (s2, k)))
        if max_support >= 4:
            for key, combos in pair.items():
                neg = tuple(-v for v in key)
                for (s1, i), (s2, j) in combos:
                    if s1 != 1:
                        continue
                    for (t1, k), (t2, l) in pair.get(neg, []):
                        if j < k:
                            found.append(((1, i), (s2, j), (t1, k), (t2, l)))
    return keys, found


def learnable_rate_combinations(graph: PatternTransferGraph, stabilizers=(), max_support: int = 4) -> list[tuple[str, OneChain]]:
    """Learnable linear combinations of error rates.

    Emits single rates ``p_{a,b}^P`` with ``a, b != 0``, the stabilizer sums
    when ``stabilizers`` are given, and then short signed combinations found
    by search until the span matches the cycle space.  Every chain returned
    has zero boundary.
    """
    n, m = graph.n, graph.m
    keys = _rate_keys(n, m)
    index = {k: i for i, k in enumerate(keys)}
    out: list[tuple[str, OneChain]] = []
    rows: list[np.ndarray] = []

    def add(label, chain, coeff_vec, force=False):
        if boundary(chain, graph):
            raise AssertionError(f"{label} has non-zero boundary")
        if coeff_vec is not None and not force:
            trial = np.vstack(rows + [coeff_vec])
            if np.linalg.matrix_rank(trial) == len(rows):
                return False
        if coeff_vec is not None:
            rows.append(coeff_vec)
        out.append((label, chain))
        return True

    def vec(terms):
        v = np.zeros(len(keys))
        for c, k in terms:
            v[index[k]] += c
        return v

    A = 1 << n
    for a, b in itertools.product(range(1, A), repeat=2):
        for q in range(4**m):
            terms = [(1, (a, b, q))]
            add(_combo_label(terms, n, m), _combo_chain(terms, graph), vec(terms))

    if stabilizers:
        stabs = [PauliOp.from_string(s) if isinstance(s, str) else s for s in stabilizers]
        group = list(stabilizer_products(stabs, m))
        seen = set()
        for q in range(4**m):
            p = PauliOp.from_index(q, m)
            try:
                proposition_chains(2, graph, p=p, stabilizers=stabs)
            except ValueError:
                continue
            coset = frozenset((g * p).index for g in group)
            if coset in seen:
                continue
            seen.add(coset)
            members = sorted(coset)
            terms2 = [(1, (0, 0, i)) for i in members]
            add(_combo_label(terms2, n, m), proposition_chains(2, graph, p=p, stabilizers=stabs), vec(terms2))
            for a in range(1, A):
                terms3 = [(1, (0, a, i)) for i in members] + [(1, (a, 0, i)) for i in members]
                add(
                    _combo_label(terms3, n, m),
                    proposition_chains(3, graph, a=a, p=p, stabilizers=stabs),
                    vec(terms3),
                )

    target = graph.cycle_dimension()
    # the signed search grows like len(keys)**4; larger gadgets go straight to the nullspace
    if len(rows) < target and len(keys) <= SEARCH_MAX_KEYS:
        _, combos = _search_combinations(graph, max_support)
        combos.sort(key=lambda c: (len(c), [i for _, i in c], [-s for s, _ in c]))
        for combo in combos:
            terms = [(s, keys[i]) for s, i in combo]
            add(_combo_label(terms, n, m), _combo_chain(terms, graph), vec(terms))
            if len(rows) == target:
                break
    if len(rows) < target:
        # complete with exact nullspace vectors of the boundary map
        B = sympy.Matrix(_boundary_vectors(graph, keys).T.tolist())
        for basis_vec in B.nullspace():
            coeffs = [Fraction(int(c.p), int(c.q)) for c in basis_vec]
            terms = [(c, keys[i]) for i, c in enumerate(coeffs) if c != 0]
            add(_combo_label([(1 if c > 0 else -1, k) for c, k in terms], n, m) + " (weighted)",
                _combo_chain(terms, graph), vec([(float(c), k) for c, k in terms]))
            if len(rows) == target:
                break
    return out
