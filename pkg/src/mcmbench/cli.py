"""Command-line front end.

Exit codes: 0 success, 2 configuration error, 3 estimation failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from . import __version__
from .analysis import (
    CharacterizationResult,
    CorrelationQuery,
    EstimationFailed,
    all_correlation_queries,
    characterize,
    independence_test,
    learnable_rate_combinations,
    reconstruct_error_rate,
)
from .channels import (
    NoiseModel,
    load_instrument,
    random_instrument,
    random_measure_and_prepare,
    random_spam,
)
from .pauli import CliffordTableau, named_gate
from .protocol import ShotBudget
from .ptgraph import build_ptg, build_syndrome_tableau, cycle_basis, directed_cycle_basis, edge_name

EXIT_CONFIG = 2
EXIT_ESTIMATION = 3
EXIT_VERIFY = 4


class ConfigError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _write(out_dir: Path, name: str, payload: str) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    path.write_text(payload)
    return path


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_meta(out_dir: Path, stem: str, args) -> None:
    cfg = {k: v for k, v in vars(args).items() if k != "func" and not callable(v)}
    meta = {"config": cfg, "version": __version__, "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S")}
    _write(out_dir, f"{stem}.meta.json", _dump(meta))


def _gate(args) -> CliffordTableau:
    if getattr(args, "stabilizers", None):
        stabs = [s.strip() for s in args.stabilizers.split(",") if s.strip()]
        g = build_syndrome_tableau(stabs)
        args.n, args.m = len(stabs), len(stabs[0])
        return g
    if getattr(args, "tableau", None):
        g = CliffordTableau.from_json(Path(args.tableau).read_text())
        if g.n_qubits != args.n + args.m:
            raise ConfigError("tableau size does not match --n + --m")
        return g
    return named_gate(args.gate, args.n, args.m)


def _instrument(args):
    if getattr(args, "instrument", None):
        inst = load_instrument(Path(args.instrument).read_text())
        args.n, args.m = inst.n, inst.m
        return inst
    if args.kind == "map":
        return random_measure_and_prepare(args.n, args.m, args.eps, args.seed, args.concentration).to_usi()
    planted = {}
    for item in args.plant or []:
        key, _, w = item.partition("=")
        a, b, p = key.split(",")
        planted[(int(a, 2) if a else 0, int(b, 2) if b else 0, p)] = float(w)
    return random_instrument(args.n, args.m, args.eps, args.seed, args.concentration, planted)


def _model(args) -> NoiseModel:
    # a loaded instrument fixes n and m; a stabilizer list does the same via the gate
    if getattr(args, "instrument", None):
        inst = _instrument(args)
        g = _gate(args)
    else:
        g = _gate(args)
        inst = _instrument(args)
    if (inst.n, inst.m) != (args.n, args.m):
        raise ConfigError("instrument and gate sizes disagree")
    spam_seed = args.spam_seed if args.spam_seed is not None else args.seed + 1
    spam = random_spam(args.n + args.m, spam_seed, args.prep_error, args.meas_error)
    return NoiseModel(inst, g, spam)


def _budget(args) -> ShotBudget:
    return ShotBudget(args.circuits, args.shots, args.aux_circuits, args.aux_shots, args.bootstrap)


def _require_seed(args):
    if args.seed is None:
        raise ConfigError("--seed is required for sampling commands")


def _emit(args, stem: str, result: CharacterizationResult) -> None:
    out = Path(args.out_dir)
    if args.format == "csv":
        _write(out, f"{stem}.csv", result.to_csv())
    else:
        _write(out, f"{stem}.json", _dump(result.to_json()))
    _write(out, f"{stem}.plot.json", _dump(result.plot_data()))
    _write_meta(out, stem, args)


# ---------------------------------------------------------------------------
# commands


def cmd_generate(args) -> int:
    if args.seed is None:
        args.seed = 0
    if args.kind == "map":
        mp = random_measure_and_prepare(args.n, args.m, args.eps, args.seed, args.concentration)
        inst, data = mp.to_usi(), mp.to_json()
    else:
        inst = _instrument(args)
        data = inst.to_json()
    name = args.output or "instrument.json"
    _write(Path(args.out_dir), name, _dump(data))
    print(f"wrote {Path(args.out_dir) / name}; rates sum to {inst.rates.sum():.17g}")
    return 0


def cmd_graph(args) -> int:
    g = _gate(args)
    graph = build_ptg(g, args.n, args.m)
    out = Path(args.out_dir)
    _write(out, "graph.json", _dump(graph.to_json()))
    _write(out, "graph.dot", graph.to_dot())
    fundamental = [c.to_json(graph.n, graph.m) for c in cycle_basis(graph)]
    directed = directed_cycle_basis(graph)
    payload = {
        "symplectic": g.is_symplectic(),
        "cycle_dimension": graph.cycle_dimension(),
        "fundamental_cycles": fundamental,
        "directed_cycles": None
        if directed is None
        else [[edge_name(k, graph.n, graph.m) for k in c] for c in directed],
        "learnable_rates": [label for label, _ in learnable_rate_combinations(graph, _stabilizer_list(args))],
    }
    _write(out, "cycles.json", _dump(payload))
    print(f"{len(graph.edges)} edges, cycle dimension {graph.cycle_dimension()}")
    return 0


def _stabilizer_list(args):
    if getattr(args, "stabilizers", None):
        return [s.strip() for s in args.stabilizers.split(",") if s.strip()]
    return ()


def cmd_learn(args) -> int:
    _require_seed(args)
    model = _model(args)
    res = characterize(model, _budget(args), args.seed, args.exact, args.ell, args.workers)
    _emit(args, "learn", res)
    if any(c.report.failed for c in res.cycle_estimates):
        print("estimation failed for at least one cycle", file=sys.stderr)
        return EXIT_ESTIMATION
    for c in res.cycle_estimates:
        print(f"{c.name:16s} {c.geometric_mean:.6f} +- {c.geometric_mean_std:.6f}")
    return 0


def _parse_queries(args):
    if not args.queries:
        return all_correlation_queries(args.n, args.m)
    out = []
    for item in args.queries.split(";"):
        q, x1, x2, y1, y2 = item.split(",")
        out.append(CorrelationQuery(q, int(x1, 2), int(x2, 2), int(y1, 2), int(y2, 2)))
    return out


def cmd_independence(args) -> int:
    _require_seed(args)
    model = _model(args)
    res = CharacterizationResult()
    res.correlations = independence_test(model, _parse_queries(args), _budget(args), args.seed, args.exact, args.workers)
    _emit(args, "independence", res)
    for q in res.correlations.values():
        print(f"{q.key:16s} {q.value:+.6f} +- {q.std:.6f}  {q.verdict}")
    return 0


def cmd_error_rate(args) -> int:
    _require_seed(args)
    model = _model(args)
    est = reconstruct_error_rate(
        int(args.a, 2), int(args.b, 2), args.pauli, model, _budget(args), args.seed, args.exact, args.repetitions, args.workers
    )
    res = CharacterizationResult()
    res.reconstructed_rates = {est.key: est}
    _emit(args, "error_rate", res)
    print(f"{est.key} = {est.value:.6g} +- {est.std:.3g} (true {est.truth:.6g})")
    return 0


def cmd_verify(args) -> int:
    from .verify import run_suite

    seeds = [args.seed] if args.seed is not None else list(range(args.seed_from, args.seed_to + 1))
    failures = run_suite(seeds)
    for line in failures:
        print(line, file=sys.stderr)
    _write(Path(args.out_dir), "verify.json", _dump({"seeds": seeds, "failures": failures}))
    if failures:
        return EXIT_VERIFY
    label = str(seeds[0]) if len(seeds) == 1 else f"{seeds[0]}..{seeds[-1]}"
    print(f"all invariants hold for seeds {label}")
    return 0


# ---------------------------------------------------------------------------
# parser


def _add_model_args(p):
    p.add_argument("--instrument", help="instrument JSON file (overrides generator flags)")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--eps", type=float, default=0.01)
    p.add_argument("--kind", choices=["usi", "map"], default="usi")
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--plant", action="append", help="extra rate, e.g. 1,1,I=0.01")
    p.add_argument("--gate", default="cnot")
    p.add_argument("--tableau", help="tableau JSON file")
    p.add_argument("--stabilizers", help="comma-separated stabilizers for a syndrome gadget")
    p.add_argument("--spam-seed", type=int)
    p.add_argument("--prep-error", type=float, default=0.02)
    p.add_argument("--meas-error", type=float, default=0.02)


def _add_budget_args(p, circuits=100, shots=100, aux_circuits=None, aux_shots=None):
    p.add_argument("--circuits", type=int, default=circuits)
    p.add_argument("--shots", type=int, default=shots)
    p.add_argument("--aux-circuits", type=int, default=aux_circuits)
    p.add_argument("--aux-shots", type=int, default=aux_shots)
    p.add_argument("--bootstrap", type=int, default=200)


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    """Global flags; the subcommand copy uses SUPPRESS so it never clobbers values given earlier."""
    p = argparse.ArgumentParser(add_help=False)
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(None))
    p.add_argument("--workers", type=int, default=d(1))
    p.add_argument("--exact", action="store_true", default=d(False), help="replace sampling by exact expectations")
    p.add_argument("--out-dir", default=d("."))
    p.add_argument("--format", choices=["json", "csv"], default=d("json"))
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(
        prog="mcmbench", description=__doc__.splitlines()[0], parents=[_global_flags(suppress=False)]
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", parents=[common], help="write a random instrument")
    _add_model_args(p)
    p.add_argument("--output", help="file name inside --out-dir")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("graph", parents=[common], help="pattern transfer graph and cycle bases")
    p.add_argument("--n", type=int, default=1)
    p.add_argument("--m", type=int, default=1)
    p.add_argument("--gate", default="cnot")
    p.add_argument("--tableau")
    p.add_argument("--stabilizers")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("learn", parents=[common], help="estimate every cycle-basis element")
    _add_model_args(p)
    _add_budget_args(p)
    p.add_argument("--ell", type=int, default=12, help="MCMs per main circuit")
    p.set_defaults(func=cmd_learn)

    p = sub.add_parser("independence", parents=[common], help="test measure-and-prepare structure")
    _add_model_args(p)
    _add_budget_args(p, 100, 500, 100, 500)
    p.add_argument("--queries", help="Q,x1,x2,y1,y2;... (default: all)")
    p.set_defaults(func=cmd_independence)

    p = sub.add_parser("error-rate", parents=[common], help="reconstruct one error rate")
    _add_model_args(p)
    _add_budget_args(p, 100, 10, 1, 1000)
    p.add_argument("--a", default="1")
    p.add_argument("--b", default="1")
    p.add_argument("--pauli", default="I")
    p.add_argument("--repetitions", type=int, default=10)
    p.set_defaults(func=cmd_error_rate)

    p = sub.add_parser("verify", parents=[common], help="exact-mode invariant suite")
    p.add_argument("--seed-from", type=int, default=1)
    p.add_argument("--seed-to", type=int, default=5)
    p.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ValueError, KeyError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except EstimationFailed as exc:
        print(f"estimation failed: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION


if __name__ == "__main__":
    sys.exit(main())
