"""Command-line entry point: ``ulmw <subcommand> ...``.

Reports go to stdout unless an output directory is given with ``--out-dir``
or the ``ULMW_OUTPUT_DIR`` environment variable, in which case each run
writes ``<dir>/<subcommand>.<csv|json>`` and prints the path.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.stats import chisquare

from . import __version__
from .arbor import MAX_VERTICES, enumerate_rooted_trees, enumerate_unicycles, forest_count, markov_tree_pi
from .errors import ULMWError
from .graph import FAMILIES, graph_from_descriptor
from .local_chain import build_q_system, preset, spec_from_descriptor, validate
from .mixing import (
    D_CURVE_MAX,
    DEFAULT_TAIL_CONVENTION,
    cover_tail,
    cutoff_experiment,
    d_curve,
    loop_complete_chain,
)
from .rng import DEFAULT_SEED, make_rng
from .sim import SAMPLER_METHODS, initial_state, run, unicycle_histogram
from .spectral import (
    DENSE_MAX,
    closed_walk_count,
    eig_spectrum,
    km_laplacian_spectrum_formula,
    laplacian_matrix,
    range_constancy_check,
    regular_degree,
    ucyc_spectrum_formula,
    unicycle_adjacency,
)
from .total_chain import (
    FULL_CHAIN_MAX,
    build_full_chain,
    build_total_P,
    decompose,
    duality_gap,
    one_step_closed,
    support_duality,
    support_is_irreducible,
    power_stationary,
    recurrent_states,
    reversibilisations,
    stationarity_residual,
    stationary_mu,
    time_reversal_total,
)

EXIT_OK = 0
EXIT_VERIFY_FAILED = 1
EXIT_USAGE = 2

GUARDS = {
    "max_vertices": MAX_VERTICES,
    "dense_eig_max": DENSE_MAX,
    "full_chain_max": FULL_CHAIN_MAX,
    "d_curve_max": D_CURVE_MAX,
}


class UsageError(Exception):
    pass


@dataclass
class ExperimentConfig:
    """Everything that determines a run; hashed for provenance."""

    command: str
    graph: dict | None
    chain: dict | None
    params: dict = field(default_factory=dict)
    seed: int = DEFAULT_SEED

    def as_dict(self) -> dict:
        return {"command": self.command, "graph": self.graph, "chain": self.chain, "params": self.params, "seed": self.seed}

    def digest(self) -> str:
        blob = json.dumps(self.as_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


# --- argument parsing ----------------------------------------------------


def _add_graph_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--graph", help="JSON graph file: {\"m\": .., \"edges\": [[u, v], ..]}")
    p.add_argument("--family", choices=sorted(FAMILIES), help="graph family shortcut")
    p.add_argument("--m", type=int, help="vertex count for --family")
    p.add_argument("--loops", action="store_true", help="add a loop at every vertex (complete, cycle)")


def _add_chain_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--preset", help="uniform | rotor | p_walk:P | excited:EPS")
    p.add_argument("--chain", help="JSON local-chain file")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config with 'graph', 'chain' and parameter defaults")
    p.add_argument("--seed", type=int, default=None, help=f"root seed (default {DEFAULT_SEED})")
    p.add_argument("--out-dir", default=None, help="write the report here (overrides ULMW_OUTPUT_DIR)")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ulmw", description="Locally Markov walks: total chains, spectra, mixing.")
    ap.add_argument("--version", action="version", version=f"ulmw {__version__}")
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("enumerate", help="rooted trees and unicycle states of a graph")
    _add_graph_args(p)
    _add_common(p)
    p.add_argument("--list", action="store_true", help="include the state list")

    p = sub.add_parser("stationary", help="local stationary rows, pi and the closed-form mu")
    _add_graph_args(p)
    _add_chain_args(p)
    _add_common(p)

    p = sub.add_parser("spectrum", help="unicycle adjacency / Laplacian spectrum")
    _add_graph_args(p)
    _add_common(p)
    p.add_argument("--mode", choices=["numeric", "formula", "both"], default="both")
    p.add_argument("--tol", type=float, default=None, help="grouping radius (default 1e-6)")
    p.add_argument("--defect-tol", type=float, default=None, help="centroid merge radius for defective eigenvalues (default 1e-3)")

    p = sub.add_parser("mixing", help="worst-case TV curve of the uniform walk on K_m with loops")
    _add_common(p)
    p.add_argument("--m", type=int, required=False)
    p.add_argument("--eps", type=float, default=None, help="curve stops once d drops below eps / 100 (default 0.25)")
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--exact", action="store_true", help="iterate the total chain instead of using cover-time tails")

    p = sub.add_parser("cutoff", help="t_mix(eps) / t_mix(1 - eps) from exact cover-time tails")
    _add_common(p)
    p.add_argument("--ms", default=None, help="comma-separated m values (default 10,100,1000)")
    p.add_argument("--eps", type=float, default=None, help="default 0.25")

    p = sub.add_parser("simulate", help="simulate the walk and emit CSV")
    _add_graph_args(p)
    _add_chain_args(p)
    _add_common(p)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--start", type=int, default=0)
    p.add_argument("--record", choices=["path", "counts", "exits"], default="counts")
    p.add_argument("--random-init", action="store_true", help="draw the initial exits from the stationary rows")

    p = sub.add_parser("sample-unicycle", help="histogram of covering-walk unicycle samples")
    _add_graph_args(p)
    _add_common(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--method", choices=SAMPLER_METHODS, default="last-exit")

    p = sub.add_parser("verify", help="run the invariant battery; exit 1 on any failure")
    _add_graph_args(p)
    _add_chain_args(p)
    _add_common(p)
    p.add_argument("--mode", choices=["strict", "simulation"], default="strict")
    return ap


def _load_config(args) -> dict:
    if getattr(args, "config", None) is None:
        return {}
    with open(args.config) as fh:
        return json.load(fh)


def _graph_desc(args, cfg: dict) -> dict:
    if getattr(args, "graph", None):
        with open(args.graph) as fh:
            return json.load(fh)
    if getattr(args, "family", None):
        if args.m is None:
            raise UsageError("--family needs --m")
        return {"family": args.family, "m": args.m, "loops": bool(args.loops)}
    if "graph" in cfg:
        return cfg["graph"]
    raise UsageError("give --graph FILE, --family NAME --m M, or a config with 'graph'")


def _chain_desc(args, cfg: dict) -> dict:
    if getattr(args, "chain", None):
        with open(args.chain) as fh:
            return json.load(fh)
    if getattr(args, "preset", None):
        return {"preset": args.preset}
    if "chain" in cfg:
        return cfg["chain"]
    return {"preset": "uniform"}


def _param(args, cfg: dict, name: str, default=None):
    val = getattr(args, name, None)
    if val is not None:
        return val
    return cfg.get("params", {}).get(name, cfg.get(name, default))


# --- output --------------------------------------------------------------


def _out_dir(args) -> Path | None:
    d = getattr(args, "out_dir", None) or os.environ.get("ULMW_OUTPUT_DIR")
    return Path(d) if d else None


def _emit(args, name: str, text: str) -> None:
    d = _out_dir(args)
    if d is None:
        sys.stdout.write(text)
        return
    d.mkdir(parents=True, exist_ok=True)
    path = d / name
    path.write_text(text)
    print(path)


def _json_report(cfg: ExperimentConfig, result: dict) -> str:
    doc = {
        "tool": "ulmw",
        "version": __version__,
        "config": cfg.as_dict(),
        "config_hash": cfg.digest(),
        "seed": cfg.seed,
        "guards": GUARDS,
        "result": result,
    }
    return json.dumps(doc, indent=2, default=_json_default) + "\n"


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, complex):
        return {"re": o.real, "im": o.imag}
    raise TypeError(f"not JSON serializable: {type(o).__name__}")


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(r)
    return buf.getvalue()


def _fmt(x: float) -> str:
    return repr(float(x))


# --- subcommands ---------------------------------------------------------


def cmd_enumerate(args, cfg: dict) -> int:
    gd = _graph_desc(args, cfg)
    g = graph_from_descriptor(gd)
    index = enumerate_unicycles(g)
    trees = {x: len(enumerate_rooted_trees(g, x)) for x in range(g.m)}
    result = {
        "m": g.m,
        "edges": g.edge_count,
        "rooted_trees": trees,
        "rooted_trees_matrix_tree": {x: forest_count(g, [x]) for x in range(g.m)},
        "unicycle_states": len(index),
    }
    if args.list:
        result["states"] = [{"x": s.x, "rho": list(s.rho), "cycle": list(s.cycle)} for s in index.states]
    ec = ExperimentConfig("enumerate", gd, None, {"list": bool(args.list)}, _seed(args, cfg))
    _emit(args, "enumerate.json", _json_report(ec, result))
    return EXIT_OK


def _seed(args, cfg: dict) -> int:
    s = getattr(args, "seed", None)
    if s is None:
        s = cfg.get("seed", DEFAULT_SEED)
    return int(s)


def cmd_stationary(args, cfg: dict) -> int:
    gd, cd = _graph_desc(args, cfg), _chain_desc(args, cfg)
    g = graph_from_descriptor(gd)
    spec = spec_from_descriptor(g, cd)
    q = build_q_system(g, spec)
    result = {"Q": q.Q, "pi": q.pi, "pi_from_trees": markov_tree_pi(g, q), "violations": validate(g, spec, "simulation")}
    index = enumerate_unicycles(g)
    P = build_total_P(g, spec, index)
    mu = stationary_mu(index, q)
    result["states"] = len(index)
    result["mu"] = [{"x": s.x, "rho": list(s.rho), "mu": float(v)} for s, v in zip(index.states, mu)]
    result["residual"] = stationarity_residual(P, mu)
    ec = ExperimentConfig("stationary", gd, cd, {}, _seed(args, cfg))
    _emit(args, "stationary.json", _json_report(ec, result))
    return EXIT_OK


def _triples(report, source: str) -> list[dict]:
    return [
        {"eigenvalue": {"re": float(v.real), "im": float(v.imag)}, "multiplicity": int(k), "source": source}
        for v, k in report.eigenvalues
    ]


def cmd_spectrum(args, cfg: dict) -> int:
    gd = _graph_desc(args, cfg)
    g = graph_from_descriptor(gd)
    index = enumerate_unicycles(g)
    tol = float(_param(args, cfg, "tol", 1e-6))
    dtol = float(_param(args, cfg, "defect_tol", 1e-3))
    self_loops = g.has_loops()
    adj = unicycle_adjacency(index, g, self_loops=self_loops)
    result: dict = {"states": len(index), "adjacency_keeps_self_moves": self_loops}
    numeric = formula = None
    if args.mode in ("numeric", "both"):
        numeric = eig_spectrum(adj, tol, defect_tol=dtol)
        result["numeric"] = _triples(numeric, "numeric")
    if args.mode in ("formula", "both"):
        formula = ucyc_spectrum_formula(g, tol=tol)
        result["formula"] = _triples(formula, "formula")
        result["formula_flags"] = formula.flags
    discrepancies = []
    if numeric is not None and formula is not None:
        for v, k in formula.eigenvalues:
            if abs(v) <= tol:
                continue
            got = numeric.multiplicity(v, dtol)
            if got != k:
                discrepancies.append({"eigenvalue": float(v.real), "numeric": got, "formula": k})
    try:
        r = regular_degree(g)
    except ULMWError:
        r = None
    if r is not None:
        lap = {}
        for conv in ("loop-free", "degree"):
            L = laplacian_matrix(index, g, conv)
            entry = {"diagonal": L.diagonal, "flags": L.flags}
            if args.mode in ("numeric", "both"):
                entry["numeric"] = _triples(eig_spectrum(L.matrix, tol, defect_tol=dtol), "numeric")
            lap[conv] = entry
        result["laplacian"] = lap
        complete = all(len(set(g.out_neighbors[x]) - {x}) == g.m - 1 for x in range(g.m))
        if complete and g.m >= 3:
            km = km_laplacian_spectrum_formula(g.m)
            result["km_laplacian_formula"] = km.to_json()
            if args.mode == "both":
                ref = eig_spectrum(laplacian_matrix(index, g, "loop-free").matrix, tol, defect_tol=dtol)
                for t in km.terms:
                    got = ref.multiplicity(t.eigenvalue, dtol)
                    if t.multiplicity != got:
                        discrepancies.append(
                            {"km_laplacian_i": t.index, "eigenvalue": t.eigenvalue, "numeric": got, "formula": str(t.multiplicity)}
                        )
                if km.total != len(index):
                    discrepancies.append({"km_laplacian_total": str(km.total), "states": len(index)})
    result["discrepancies"] = discrepancies
    ec = ExperimentConfig("spectrum", gd, None, {"mode": args.mode, "tol": tol, "defect_tol": dtol}, _seed(args, cfg))
    _emit(args, "spectrum.json", _json_report(ec, result))
    return EXIT_OK


def cmd_mixing(args, cfg: dict) -> int:
    m = _param(args, cfg, "m")
    if m is None:
        raise UsageError("mixing needs --m")
    m = int(m)
    eps = float(_param(args, cfg, "eps", 0.25))
    horizon = _param(args, cfg, "horizon")
    if args.exact:
        P, mu = loop_complete_chain(m)
        curve = d_curve(P, mu, int(horizon) if horizon is not None else 10_000, stop_below=None if horizon else eps / 100)
        rows = [(m, t, _fmt(d)) for t, d in curve.rows()]
    else:
        rows, t = [], 0
        while True:
            d = cover_tail(m, t, DEFAULT_TAIL_CONVENTION)
            rows.append((m, t, _fmt(d)))
            if (horizon is not None and t >= int(horizon)) or (horizon is None and d < eps / 100):
                break
            t += 1
    _emit(args, "mixing.csv", _csv_text(["m", "t", "d"], rows))
    return EXIT_OK


def cmd_cutoff(args, cfg: dict) -> int:
    ms = _param(args, cfg, "ms", "10,100,1000")
    if isinstance(ms, str):
        ms = [int(v) for v in ms.split(",") if v.strip()]
    eps = float(_param(args, cfg, "eps", 0.25))
    rows = [(r.m, _fmt(r.ratio), _fmt(r.lower_bound), _fmt(r.upper_bound)) for r in cutoff_experiment(ms, eps)]
    _emit(args, "cutoff.csv", _csv_text(["m", "ratio", "lower_bound", "upper_bound"], rows))
    return EXIT_OK


def cmd_simulate(args, cfg: dict) -> int:
    gd, cd = _graph_desc(args, cfg), _chain_desc(args, cfg)
    g = graph_from_descriptor(gd)
    spec = spec_from_descriptor(g, cd)
    problems = validate(g, spec, "simulation")
    if problems:
        raise UsageError("; ".join(problems))
    steps = int(_param(args, cfg, "steps", 1000))
    seed = _seed(args, cfg)
    if args.random_init:
        init = initial_state(spec, args.start, make_rng(seed, 1), build_q_system(g, spec))
    else:
        init = initial_state(spec, args.start)
    traj = run(init, steps, spec, seed=seed)
    if args.record == "path":
        configs = traj.configs()
        rows = [(n, int(x), " ".join(map(str, configs[n]))) for n, x in enumerate(traj.positions)]
        text = _csv_text(["n", "x", "rho"], rows)
    elif args.record == "counts":
        rows = [(x, int(c), _fmt(c / traj.visit_counts.sum())) for x, c in enumerate(traj.visit_counts)]
        text = _csv_text(["x", "visits", "frequency"], rows)
    else:
        rows = [(x, k, traj.visit_times[x][k], y) for x in range(g.m) for k, y in enumerate(traj.exits[x])]
        text = _csv_text(["x", "k", "visit_time", "exit"], rows)
    _emit(args, "simulate.csv", text)
    return EXIT_OK


def cmd_sample_unicycle(args, cfg: dict) -> int:
    gd = _graph_desc(args, cfg)
    g = graph_from_descriptor(gd)
    n = int(_param(args, cfg, "n", 10_000))
    seed = _seed(args, cfg)
    index = enumerate_unicycles(g)
    counts = unicycle_histogram(g, n, seed=seed, index=index, method=args.method)
    mu = stationary_mu(index, build_q_system(g, preset("uniform", g)))
    chi = chisquare(counts, mu * n) if len(index) > 1 else None
    result = {
        "method": args.method,
        "samples": n,
        "histogram": [{"index": i, "x": s.x, "rho": list(s.rho), "count": int(c)} for i, (s, c) in enumerate(zip(index.states, counts))],
        "chi2": None if chi is None else float(chi.statistic),
        "p_value": None if chi is None else float(chi.pvalue),
    }
    ec = ExperimentConfig("sample-unicycle", gd, None, {"n": n, "method": args.method}, seed)
    _emit(args, "sample-unicycle.json", _json_report(ec, result))
    return EXIT_OK


def verify_battery(g, spec, mode: str = "strict") -> list[dict]:
    """Invariant checks for one graph and spec; each entry has ``name``, ``passed``, ``detail``."""
    checks: list[dict] = []

    def add(name, passed, detail=None):
        checks.append({"name": name, "passed": bool(passed), "detail": detail})

    problems = validate(g, spec, mode)
    add("spec_valid", not problems, problems)
    index = enumerate_unicycles(g)
    expected = sum(forest_count(g, [x]) * g.out_degree(x) for x in range(g.m))
    add("unicycle_count_matrix_tree", len(index) == expected, {"enumerated": len(index), "matrix_tree": expected})
    q = build_q_system(g, spec)
    P = build_total_P(g, spec, index)
    add("row_stochastic", np.abs(P.row_sums() - 1).max() <= 1e-12)
    mu = stationary_mu(index, q)
    res = stationarity_residual(P, mu)
    add("stationary_mu", res <= 1e-10, res)
    tv = 0.5 * float(np.abs(power_stationary(P) - mu).sum())
    add("cesaro_matches_mu", tv <= 1e-8, tv)
    add("tree_pi_matches_q_system", np.abs(markov_tree_pi(g, q) - q.pi).max() <= 1e-10)
    size = g.m * int(np.prod([len(s) for s in spec.exits]))
    if spec.is_positive() and size <= FULL_CHAIN_MAX:
        rec = recurrent_states(build_full_chain(g, spec))
        add("recurrent_states_are_unicycles", rec == set(index.lookup), {"full_states": size, "recurrent": len(rec)})
    dec = decompose(P, index)
    add("decomposition_exact", dec.exact and dec.block_diagonal)
    P_hat = time_reversal_total(index, spec, q)
    gap = duality_gap(P, P_hat, mu)
    add("time_reversal_duality", gap <= 1e-12, gap)
    add("one_step_closure", one_step_closed(P, index) and one_step_closed(P_hat, index))
    add("support_duality", all(support_duality(P, P_hat, index, n) for n in (1, 2, 3)))
    if spec.is_positive():
        add("irreducible", support_is_irreducible(P))
    rv = reversibilisations(P, P_hat, spec, index)
    add("multiplicative_reversibilisation_blocks", rv.block_gap <= 1e-12, rv.block_gap)
    walks = [closed_walk_count(g, k, index) for k in range(1, 7)]
    add("closed_walk_identity", all(w.match for w in walks), [[w.trace, w.formula] for w in walks])
    if spec.is_uniform():
        rc = range_constancy_check(P, index, spec)
        add("range_constancy", rc.passed, rc.max_deviation)
    return checks


def cmd_verify(args, cfg: dict) -> int:
    gd, cd = _graph_desc(args, cfg), _chain_desc(args, cfg)
    g = graph_from_descriptor(gd)
    spec = spec_from_descriptor(g, cd)
    checks = verify_battery(g, spec, args.mode)
    ok = all(c["passed"] for c in checks)
    ec = ExperimentConfig("verify", gd, cd, {"mode": args.mode}, _seed(args, cfg))
    _emit(args, "verify.json", _json_report(ec, {"passed": ok, "checks": checks}))
    return EXIT_OK if ok else EXIT_VERIFY_FAILED


COMMANDS = {
    "enumerate": cmd_enumerate,
    "stationary": cmd_stationary,
    "spectrum": cmd_spectrum,
    "mixing": cmd_mixing,
    "cutoff": cmd_cutoff,
    "simulate": cmd_simulate,
    "sample-unicycle": cmd_sample_unicycle,
    "verify": cmd_verify,
}


def run_cli(argv: list[str] | None = None) -> int:
    parser = build_parser()
    argv = sys.argv[1:] if argv is None else list(argv)
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_USAGE
    if args.command is None:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        cfg = _load_config(args)
        return COMMANDS[args.command](args, cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"ulmw {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ULMWError, OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"ulmw {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
