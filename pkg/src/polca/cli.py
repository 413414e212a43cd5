"""Command-line front end: ``polca {domain,solve,minimize,simulate,compare}``.

Exit codes: 0 success, 1 runtime or validation failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import abstraction, baselines, domains, formats, solvers
from .executor import ExecutionError, evaluate, run_episode
from .hierarchy import (HierarchicalPolicy, HierarchyError, PlanningError, PlanOptions,
                        check_task_graph, condition_mask, polca_plan)
from .model import ModelError, check_model, point_belief

ALGOS = ("flat", "polca", "polca+", "qmdp")
COUNTING_RULE = ("n_params = sum over subtasks of |C|*|A_h| reward entries "
                 "+ nonzero projected transition entries; q_values = sum of |C|*|A_h|")


class UsageError(Exception):
    pass


# -- argument parsing

def _global_flags(defaults: bool) -> argparse.ArgumentParser:
    """Global flags are accepted before or after the command name."""
    p = argparse.ArgumentParser(add_help=False,
                                argument_default=None if defaults else argparse.SUPPRESS)
    g = p.add_argument_group("global options")
    kw = (lambda v: {"default": v}) if defaults else (lambda v: {})
    g.add_argument("--seed", type=int, **kw(0), help="random seed (default 0)")
    g.add_argument("--gamma", type=float, **kw(None), help="discount override")
    g.add_argument("--tolerance", type=float, **kw(None), help="solver convergence tolerance")
    g.add_argument("--max-iters", type=int, **kw(None), help="solver iteration cap")
    g.add_argument("--top-solver", choices=("exact", "qmdp"), **kw("exact"),
                   help="solver for the root subtask in POMDP mode")
    g.add_argument("-v", "--verbose", action="store_true", **kw(False))
    return p


def _add_source(p: argparse.ArgumentParser, hierarchy: bool = True) -> None:
    p.add_argument("--domain", help="built-in domain name (instead of --model)")
    p.add_argument("--model", type=Path, help="model JSON file")
    if hierarchy:
        p.add_argument("--hierarchy", type=Path, help="hierarchy JSON file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="polca", parents=[_global_flags(True)],
                                     description="Hierarchical MDP/POMDP planning with "
                                                 "policy-contingent state abstraction.")
    sub = parser.add_subparsers(dest="command", required=True)
    late = _global_flags(False)

    p = sub.add_parser("domain", parents=[late], help="build a domain and write its files")
    p.add_argument("--name", required=True)
    p.add_argument("--emit", type=Path, metavar="DIR",
                   help="write NAME.model.json and NAME.hierarchy.json into DIR")
    p.add_argument("--model-out", type=Path)
    p.add_argument("--hierarchy-out", type=Path)

    p = sub.add_parser("solve", parents=[late], help="plan bottom-up and write a policy")
    _add_source(p)
    p.add_argument("--mode", choices=abstraction.MODES, default="mdp")
    p.add_argument("--out", type=Path, help="policy JSON output")
    p.add_argument("--prune", choices=("lp", "sample"), default="lp")
    p.add_argument("--max-clusters", type=int, default=solvers.DEFAULT_MAX_CLUSTERS)

    p = sub.add_parser("minimize", parents=[late], help="minimize a flat model")
    _add_source(p, hierarchy=False)
    p.add_argument("--mode", choices=abstraction.MODES, default="mdp")
    p.add_argument("--out", type=Path, help="cluster report JSON output")

    p = sub.add_parser("simulate", parents=[late], help="run a saved policy")
    _add_source(p)
    p.add_argument("--policy", type=Path, required=True)
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--initial", help="start state index, or 'uniform' (default: domain "
                                     "initial belief if known, else uniform)")
    p.add_argument("--jsonl", type=Path, help="trajectory JSON-lines output (first episode)")
    p.add_argument("--transcript", type=Path, help="transcript table output (first episode)")
    p.add_argument("--interactive", action="store_true",
                   help="read observations from stdin instead of sampling")

    p = sub.add_parser("compare", parents=[late], help="evaluate planners side by side")
    p.add_argument("--domain", required=True)
    p.add_argument("--algos", default="flat,polca", help=f"comma list from {','.join(ALGOS)}")
    p.add_argument("--seeds", help="comma list of evaluation seeds (default: --seed)")
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--out", type=Path, help="metrics CSV output")
    p.add_argument("--report", type=Path, help="report CSV output (default stdout)")
    return parser


# -- shared helpers

def _options(args, **kw) -> PlanOptions:
    o = PlanOptions(gamma=args.gamma, top_solver=args.top_solver, **kw)
    if args.tolerance is not None:
        o.tolerance = o.pomdp_tolerance = args.tolerance
    if args.max_iters is not None:
        o.max_iters = args.max_iters
    return o


def _load(args, hierarchy: bool = True):
    """(model, graph, initial) from --domain or --model/--hierarchy."""
    if args.domain and args.model:
        raise UsageError("give either --domain or --model, not both")
    if args.domain:
        try:
            d = domains.build(args.domain)
        except KeyError as exc:
            raise UsageError(exc.args[0]) from None
        model, graph, initial = d.model, d.graph, d.initial
    elif args.model:
        model = check_model(formats.loads_model(formats.read_text(args.model)))
        graph, initial = None, None
        if hierarchy:
            if not args.hierarchy:
                raise UsageError("--hierarchy is required with --model")
            graph = formats.loads_graph(formats.read_text(args.hierarchy))
    else:
        raise UsageError("one of --domain or --model is required")
    if args.gamma is not None:
        if not 0.0 < args.gamma < 1.0:
            raise UsageError("--gamma must lie in (0, 1)")
        model = model.with_discount(args.gamma)
    return model, graph, initial


def _emit(path: Path | None, text: str) -> None:
    if path is None:
        sys.stdout.write(text)
    else:
        path.parent.mkdir(parents=True, exist_ok=True)
        formats.write_text(path, text)


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.3g}"
    return "-" if x is None else str(x)


def _table(rows: list[dict], cols: list[str]) -> str:
    cells = [cols] + [[_fmt(r[c]) for c in cols] for r in rows]
    widths = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    return "\n".join("  ".join(v.ljust(w) for v, w in zip(row, widths)).rstrip()
                     for row in cells) + "\n"


# -- commands

def cmd_domain(args) -> int:
    try:
        d = domains.build(args.name)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    model_out, graph_out = args.model_out, args.hierarchy_out
    if args.emit is not None:
        model_out = model_out or args.emit / f"{args.name}.model.json"
        graph_out = graph_out or args.emit / f"{args.name}.hierarchy.json"
    if model_out:
        _emit(model_out, formats.dumps_model(d.model))
    if graph_out:
        _emit(graph_out, formats.dumps_graph(d.graph))
    m = d.model
    print(f"{args.name}: {m.n_states} states, {m.n_actions} actions, "
          f"{m.n_observations} observations, {len(d.graph.nodes)} subtasks")
    for path in (model_out, graph_out):
        if path:
            print(f"wrote {path}")
    return 0


def cmd_solve(args) -> int:
    model, graph, _ = _load(args)
    if args.mode == "pomdp" and model.kind != "pomdp":
        raise ModelError("POMDP mode needs a model with observations")
    check_task_graph(graph, model)
    t0 = time.perf_counter()
    policy = polca_plan(model, graph, args.mode,
                        _options(args, prune=args.prune, max_clusters=args.max_clusters))
    rows = [policy.subtasks[h].stats() for h in policy.order]
    sys.stdout.write(_table(rows, ["subtask", "states", "clusters", "actions", "solver",
                                   "iterations", "residual", "n_params", "seconds"]))
    print(f"total: {policy.n_params()} parameters, {policy.n_q_values()} Q-values, "
          f"{time.perf_counter() - t0:.2f}s")
    if args.out:
        _emit(args.out, formats.dumps_policy(policy))
        print(f"wrote {args.out}")
    return 0


def cmd_minimize(args) -> int:
    model, _, _ = _load(args, hierarchy=False)
    cmap = abstraction.minimize(model, mode=args.mode)
    cm = abstraction.project_model(model, cmap, mode=args.mode)
    if args.out:
        _emit(args.out, formats.dumps_cluster_report(abstraction.cluster_report(cm)))
    print(f"{cmap.n_states} states -> {cmap.n_clusters} clusters, {cm.n_params()} parameters")
    return 0


def _initial(spec: str | None, model, default):
    pomdp = model.kind == "pomdp"
    if spec is None:
        if default is not None:
            return default
        spec = "uniform"
    if spec == "uniform":
        if pomdp:
            return np.full(model.n_states, 1.0 / model.n_states)
        return lambda rng: int(rng.integers(model.n_states))
    try:
        s = int(spec)
    except ValueError:
        raise UsageError(f"--initial must be a state index or 'uniform', got {spec!r}") from None
    if not 0 <= s < model.n_states:
        raise UsageError(f"--initial state {s} out of range")
    return point_belief(model.n_states, s) if pomdp else s


def _typed_observation(model):
    names = list(model.observations)

    def ask(t, action):
        while True:
            sys.stdout.write(f"[{t}] {action} -> observation ({'/'.join(names)}): ")
            sys.stdout.flush()
            line = sys.stdin.readline()
            if not line:
                raise ExecutionError("input ended")
            if line.strip() in names:
                return line.strip()
            print(f"unknown observation {line.strip()!r}")
    return ask


def cmd_simulate(args) -> int:
    model, graph, default_init = _load(args)
    policy = formats.loads_policy(formats.read_text(args.policy), model, graph)
    if args.episodes < 1 or args.steps < 1:
        raise UsageError("--episodes and --steps must be positive")
    init = _initial(args.initial, model, default_init)
    if args.interactive and model.kind != "pomdp":
        raise UsageError("--interactive needs a POMDP model")
    source = _typed_observation(model) if args.interactive else None
    seeds = np.random.SeedSequence(args.seed).spawn(args.episodes)
    returns, aborted = [], 0
    for i, ss in enumerate(seeds):
        start = init(np.random.default_rng(ss.spawn(1)[0])) if callable(init) else init
        traj = run_episode(policy, model, start, args.steps, ss, observation_source=source)
        returns.append(traj.total_reward)
        if i == 0:
            if args.jsonl:
                _emit(args.jsonl, traj.to_jsonl())
            if args.transcript:
                _emit(args.transcript, traj.transcript())
            elif args.episodes == 1 and not args.jsonl:
                sys.stdout.write(traj.transcript())
        if traj.aborted:
            aborted += 1
            print(f"episode {i}: aborted ({traj.aborted})", file=sys.stderr)
    print(f"{args.episodes} episode(s): mean return {np.mean(returns):.4f}")
    return 1 if aborted else 0


def _plan_algo(algo: str, d, args):
    m, g = d.model, d.graph
    if algo == "flat":
        return baselines.plan_flat(m, qmdp=m.kind == "pomdp")
    if algo == "qmdp":
        return baselines.plan_qmdp(m)
    mode = "pomdp" if algo == "polca+" else "mdp"
    return polca_plan(m, g, mode, _options(args))


def _counts(planner) -> tuple[int, int]:
    if isinstance(planner, HierarchicalPolicy):
        return planner.n_params(), planner.n_q_values()
    return planner.n_params(), planner.clustered.n_q_values()


def cmd_compare(args) -> int:
    algos = [a.strip() for a in args.algos.split(",") if a.strip()]
    if not algos:
        raise UsageError("--algos is empty")
    bad = [a for a in algos if a not in ALGOS]
    if bad:
        raise UsageError(f"unknown algorithm(s) {bad}; choose from {list(ALGOS)}")
    try:
        d = domains.build(args.domain)
    except KeyError as exc:
        raise UsageError(exc.args[0]) from None
    if args.gamma is not None:
        d.model = d.model.with_discount(args.gamma)
    pomdp = d.model.kind == "pomdp"
    for a in algos:
        if a in ("polca+", "qmdp") and not pomdp:
            raise UsageError(f"{a} needs a POMDP domain; {args.domain} is an MDP")
    try:
        seeds = [int(s) for s in args.seeds.split(",")] if args.seeds else [args.seed]
    except ValueError:
        raise UsageError(f"bad --seeds {args.seeds!r}") from None
    if args.episodes < 1 or args.steps < 1:
        raise UsageError("--episodes and --steps must be positive")

    initial = d.initial
    terminal = condition_mask(d.model.space, d.graph.nodes[d.graph.root].terminal)
    optimal = None
    if not pomdp:
        ref = baselines.plan_flat(d.model)
        optimal = baselines.evaluate_state_policy(d.model, ref.policy, terminal=terminal)
    checkpoints = sorted({max(1, args.steps * k // 4) for k in (1, 2, 3, 4)})

    metric_rows, report_rows = [], []
    for algo in sorted(algos):
        t0 = time.perf_counter()
        planner = _plan_algo(algo, d, args)
        seconds = time.perf_counter() - t0
        n_params, n_q = _counts(planner)
        gap = ""
        if optimal is not None:
            states = planner.resolved_policy() if isinstance(planner, HierarchicalPolicy) \
                else planner.policy
            v = baselines.evaluate_state_policy(d.model, states, terminal=terminal)
            gap = f"{float(np.max(optimal - v)):.6g}"
        label = algo + (" (approximate: QMDP)" if algo == "flat" and pomdp else "")
        for seed in seeds:
            met = evaluate(planner, d.model, args.episodes, args.steps, rng_seed=seed,
                           initial=initial)
            metric_rows += met.to_csv_rows(algo, args.domain, seed)
            report_rows.append([args.domain, label, str(seed), str(n_params), str(n_q),
                                f"{seconds:.4f}", f"{met.mean_return:.6f}",
                                *(f"{met.curve[c - 1]:.6f}" for c in checkpoints), gap])
    header = ["domain", "algo", "seed", "n_params", "q_values", "solve_seconds", "mean_return",
              *(f"reward@{c}" for c in checkpoints), "gap_vs_flat_vi"]
    report = [f"# {COUNTING_RULE}",
              "# gap_vs_flat_vi = max over states of V_flat(s) - V_algo(s) (exact evaluation; "
              "MDP domains only)",
              ",".join(header)] + [",".join(r) for r in report_rows]
    _emit(args.report, "\n".join(report) + "\n")
    if args.out:
        _emit(args.out, "step,mean_cum_reward,algo,domain,seed\n" + "\n".join(metric_rows) + "\n")
    return 0


COMMANDS = {"domain": cmd_domain, "solve": cmd_solve, "minimize": cmd_minimize,
            "simulate": cmd_simulate, "compare": cmd_compare}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"polca: error: {exc}", file=sys.stderr)
        return 2
    except (PlanningError, HierarchyError, ExecutionError, solvers.TooLargeError,
            json.JSONDecodeError, OSError, *formats.FORMAT_ERRORS) as exc:
        print(f"polca: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
