"""Path compilation and the SPAM-robust log-fidelity estimator.

A path ``e_1 ... e_l`` in the pattern transfer graph compiles into a main
circuit (``l`` MCMs with local-Clifford interleavers, outcome weights
``(-1)^{m_i.(x_i+y_i)}``) and an auxiliary prepare-and-measure circuit.  The
log of the ratio of their means estimates

    sum_i log lambda_{x_i,y_i}^{Q_i} + log lambda_M^{v_l} - log lambda_M^{v_0},

so the SPAM terms cancel whenever the path is closed.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .channels import NoiseModel, gate_maps
from .pauli import CliffordTableau, PauliOp, pattern, solve_local_clifford
from .simulator import CircuitSpec, enumerate_expectation, fourier_sign, run_circuit_arrays


# ---------------------------------------------------------------------------
# paths and compilation


@dataclass(frozen=True)
class PathSpec:
    """Ordered edge keys ``(x, y, Q index)``."""

    edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "edges", tuple(tuple(int(v) for v in e) for e in self.edges))
        if not self.edges:
            raise ValueError("a path needs at least one edge")

    def __len__(self) -> int:
        return len(self.edges)

    def repeat(self, times: int) -> "PathSpec":
        return PathSpec(self.edges * times)


@dataclass(frozen=True)
class CompiledExperiment:
    path: PathSpec
    main_spec: CircuitSpec
    aux_spec: CircuitSpec
    signs: tuple  # s_i with G^dagger(Q_i (x) Z^{x_i}) = s_i R_i
    vertices: tuple  # v_0 ... v_l

    @property
    def main_sign(self) -> int:
        return int(np.prod(self.signs))

    @property
    def fourier_mask(self) -> tuple:
        return self.main_spec.fourier_mask

    @property
    def is_cycle(self) -> bool:
        return self.vertices[0] == self.vertices[-1]


def compile_path(path: PathSpec | Sequence, g: CliffordTableau, n: int, m: int) -> CompiledExperiment:
    """Solve for the prep rotation and interleavers of a path.

    The prep rotation takes ``Z^{v_0}`` to ``R_1`` and interleaver ``i`` takes
    ``Q_i (x) Z^{y_i}`` to ``R_{i+1}``, all with sign +1, so every conjugation
    sign ends up in :attr:`CompiledExperiment.signs`.
    """
    if not isinstance(path, PathSpec):
        path = PathSpec(tuple(path))
    nq = n + m
    src, sign, dst = gate_maps(g, n, m)
    reps, signs, outs, verts = [], [], [], []
    for x, y, q in path.edges:
        if not (0 <= x < 1 << n and 0 <= y < 1 << n and 0 <= q < 4**m):
            raise ValueError(f"edge {(x, y, q)} out of range")
        reps.append(PauliOp.from_index(int(src[x, q]), nq))
        signs.append(int(sign[x, q]))
        outs.append(PauliOp.from_index(int(dst[y, q]), nq))
    verts.append(pattern(reps[0]))
    for i in range(len(path)):
        if i + 1 < len(path) and pattern(outs[i]) != pattern(reps[i + 1]):
            raise ValueError(f"edges {i} and {i + 1} do not form a path")
        verts.append(pattern(outs[i]))
    z_v0 = PauliOp(nq, 0, verts[0])
    prep = solve_local_clifford(z_v0, reps[0])
    inter = tuple(solve_local_clifford(outs[i], reps[i + 1]) for i in range(len(path) - 1))
    mask = tuple(x ^ y for x, y, _ in path.edges)
    main = CircuitSpec(n, m, prep, inter, outs[-1], mask, len(path))
    aux = CircuitSpec(n, m, prep, (), reps[0], (), 0)
    return CompiledExperiment(path, main, aux, tuple(signs), tuple(verts))


# ---------------------------------------------------------------------------
# backends


class Backend(Protocol):
    """Anything that can run a circuit spec: the analysis layer only needs this."""

    n: int
    m: int
    gate: CliffordTableau

    def run(self, spec: CircuitSpec, shots: int, seed) -> tuple[np.ndarray, np.ndarray]: ...

    def expectation(self, spec: CircuitSpec) -> float: ...


@dataclass(frozen=True, eq=False)
class SimulatorBackend:
    model: NoiseModel
    explicit_measurement: bool = False

    @property
    def n(self) -> int:
        return self.model.n

    @property
    def m(self) -> int:
        return self.model.m

    @property
    def gate(self) -> CliffordTableau:
        return self.model.gate

    def run(self, spec, shots, seed):
        rng = np.random.default_rng(seed)
        return run_circuit_arrays(spec, self.model, shots, rng, self.explicit_measurement)

    def expectation(self, spec):
        return enumerate_expectation(spec, self.model)


def as_backend(obj) -> Backend:
    return SimulatorBackend(obj) if isinstance(obj, NoiseModel) else obj


# ---------------------------------------------------------------------------
# estimation


@dataclass(frozen=True)
class ShotBudget:
    circuits: int = 100
    shots_per_circuit: int = 100
    aux_circuits: int | None = None
    aux_shots_per_circuit: int | None = None
    bootstrap: int = 200

    def __post_init__(self):
        if self.circuits < 1 or self.shots_per_circuit < 1:
            raise ValueError("budget needs at least one circuit and one shot")

    @property
    def n_aux_circuits(self) -> int:
        return self.aux_circuits or self.circuits

    @property
    def n_aux_shots(self) -> int:
        return self.aux_shots_per_circuit or self.shots_per_circuit

    @property
    def total_main(self) -> int:
        return self.circuits * self.shots_per_circuit

    @property
    def total_aux(self) -> int:
        return self.n_aux_circuits * self.n_aux_shots


@dataclass
class EstimationReport:
    value: float | None
    std: float
    s: float
    t: float
    shots_main: int
    shots_aux: int
    circuits: int
    failed: bool = False
    diagnostics: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "value": self.value,
            "std": self.std,
            "s": self.s,
            "t": self.t,
            "shots_main": self.shots_main,
            "shots_aux": self.shots_aux,
            "circuits": self.circuits,
            "failed": self.failed,
            "diagnostics": self.diagnostics,
        }


def seed_sequence(seed) -> np.random.SeedSequence:
    return seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)


def _circuit_means(backend, spec, sign, n_circuits, shots, seeds):
    means = np.empty(n_circuits)
    for c in range(n_circuits):
        outcomes, r = backend.run(spec, shots, seeds[c])
        means[c] = sign * float(np.mean(fourier_sign(outcomes, spec.fourier_mask) * r))
    return means


def _chunked_means(args):
    return _circuit_means(*args)


def _run_means(backend, spec, sign, n_circuits, shots, seeds, workers):
    if workers <= 1 or n_circuits < 2:
        return _circuit_means(backend, spec, sign, n_circuits, shots, seeds)
    chunks = np.array_split(np.arange(n_circuits), workers)
    jobs = [(backend, spec, sign, len(ch), shots, [seeds[i] for i in ch]) for ch in chunks if len(ch)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return np.concatenate(list(pool.map(_chunked_means, jobs)))


def _bootstrap_log_ratio(main: np.ndarray, aux: np.ndarray, reps: int, rng, scale: float = 1.0) -> float:
    if reps < 2:
        return 0.0
    mi = rng.integers(len(main), size=(reps, len(main)))
    ai = rng.integers(len(aux), size=(reps, len(aux)))
    s = main[mi].mean(axis=1)
    t = aux[ai].mean(axis=1)
    ok = (s > 0) & (t > 0)
    if ok.sum() < 2:
        return float("nan")
    return float(np.std(np.log(s[ok] / t[ok]) / scale, ddof=1))


def estimate_path(
    exp: CompiledExperiment,
    backend,
    budget: ShotBudget = ShotBudget(),
    seed=None,
    exact: bool = False,
    workers: int = 1,
) -> EstimationReport:
    """Run main and auxiliary circuits and return ``log(s / t)``.

    Randomness: the seed is split into one child per main circuit, one per
    auxiliary circuit and one for the bootstrap, so results do not depend on
    ``workers``.  The bootstrap resamples per-circuit means.
    """
    backend = as_backend(backend)
    if exact:
        s = exp.main_sign * backend.expectation(exp.main_spec)
        t = backend.expectation(exp.aux_spec)
        failed = not (s > 0 and t > 0)
        return EstimationReport(
            None if failed else math.log(s / t), 0.0, s, t, 0, 0, 0, failed, {"mode": "exact"}
        )
    ss = seed_sequence(seed)
    children = ss.spawn(budget.circuits + budget.n_aux_circuits + 1)
    main_seeds = children[: budget.circuits]
    aux_seeds = children[budget.circuits : -1]
    main = _run_means(backend, exp.main_spec, exp.main_sign, budget.circuits, budget.shots_per_circuit, main_seeds, workers)
    aux = _run_means(backend, exp.aux_spec, 1, budget.n_aux_circuits, budget.n_aux_shots, aux_seeds, workers)
    s, t = float(main.mean()), float(aux.mean())
    failed = not (s > 0 and t > 0)
    std = _bootstrap_log_ratio(main, aux, budget.bootstrap, np.random.default_rng(children[-1]))
    return EstimationReport(
        None if failed else math.log(s / t),
        std,
        s,
        t,
        budget.total_main,
        budget.total_aux,
        budget.circuits,
        failed,
        {"mode": "sampled", "main_means": main.tolist(), "aux_means": aux.tolist()},
    )


def estimate_cycle_concatenated(
    cycle: PathSpec | Sequence,
    L_values: Sequence[int],
    backend,
    budget: ShotBudget = ShotBudget(),
    seed=None,
    exact: bool = False,
    workers: int = 1,
) -> EstimationReport:
    """Estimate ``sum log lambda`` around a directed cycle by repeating it ``L`` times.

    ``value`` is the fitted slope per repetition (one cycle's log-fidelity
    sum).  With a single ``L`` the fit goes through the origin; with several
    an intercept absorbs any leftover SPAM offset.  ``diagnostics`` carries the
    geometric-mean fidelity ``exp(value / l)`` and its std.
    """
    backend = as_backend(backend)
    if not isinstance(cycle, PathSpec):
        cycle = PathSpec(tuple(cycle))
    if not L_values or any(L < 1 for L in L_values):
        raise ValueError("L values must be positive")
    base = compile_path(cycle, backend.gate, backend.n, backend.m)
    if not base.is_cycle:
        raise ValueError("path does not close")
    l = len(cycle)
    seeds = seed_sequence(seed).spawn(len(L_values))
    points = []
    for L, sd in zip(L_values, seeds):
        exp = compile_path(cycle.repeat(L), backend.gate, backend.n, backend.m)
        points.append((L, estimate_path(exp, backend, budget, sd, exact, workers)))
    good = [(L, r) for L, r in points if not r.failed]
    diag = {
        "per_L": [{"L": L, **{k: v for k, v in r.to_json().items() if k != "diagnostics"}} for L, r in points],
        "cycle_length": l,
        "partial": len(good) < len(points),
    }
    if not good:
        return EstimationReport(None, float("nan"), float("nan"), float("nan"), 0, 0, 0, True, diag)
    Ls = np.array([L for L, _ in good], dtype=float)
    vals = np.array([r.value for _, r in good])
    stds = np.array([r.std for _, r in good])
    if len(set(Ls)) == 1:
        weights = Ls / (Ls @ Ls)
        slope = float(weights @ vals)
        intercept = 0.0
    else:
        X = np.column_stack([Ls, np.ones_like(Ls)])
        pinv = np.linalg.pinv(X)
        slope, intercept = (float(v) for v in pinv @ vals)
        weights = pinv[0]
    resid = float(np.max(np.abs(vals - (slope * Ls + intercept))))
    std = float(np.sqrt(np.sum(weights**2 * stds**2)))
    geo = math.exp(slope / l)
    diag.update(
        intercept=intercept,
        fit_residual=resid,
        geometric_mean=geo,
        geometric_mean_std=geo * std / l,
    )
    first = good[0][1]
    return EstimationReport(
        slope,
        std,
        first.s,
        first.t,
        sum(r.shots_main for _, r in good),
        sum(r.shots_aux for _, r in good),
        sum(r.circuits for _, r in good),
        False,
        diag,
    )


def predict_variance(l_total: int, N: int, lambda0: float, lambda_geo: float) -> float:
    """Low-noise variance of the geometric-mean estimate ``exp(log(s/t) / l_total)``.

    ``N`` counts main plus auxiliary shots, split evenly.
    """
    half = N / 2
    return 2 * (1 - lambda0**2) / (l_total**2 * half) + lambda0**2 * (1 - lambda_geo**2) / (l_total * half)


def true_path_value(exp: CompiledExperiment, model: NoiseModel) -> float:
    """Closed form of what :func:`estimate_path` converges to."""
    lam = model.fidelities.values
    total = sum(math.log(lam[x, y, q]) for x, y, q in exp.path.edges)
    tf = model.spam.term_fidelities
    return total + math.log(tf[exp.vertices[-1]]) - math.log(tf[exp.vertices[0]])
