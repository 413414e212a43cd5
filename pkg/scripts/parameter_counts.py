"""Per-subtask Q-entry counts: PolCA, PolCA+ (POMDP domains) and no abstraction.

    python scripts/parameter_counts.py taxi taxi2 nursebot-small
    python scripts/parameter_counts.py nursebot --top-solver qmdp   # about two minutes
"""

import argparse

from polca import PlanOptions, build_domain, polca_plan


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("domains", nargs="+")
    ap.add_argument("--top-solver", choices=("exact", "qmdp"), default="exact")
    args = ap.parse_args()
    for name in args.domains:
        d = build_domain(name)
        plans = {"polca": polca_plan(d.model, d.graph, "mdp")}
        if d.model.kind == "pomdp":
            plans["polca+"] = polca_plan(d.model, d.graph, "pomdp", PlanOptions(top_solver=args.top_solver))
        print(f"{name} ({d.model.n_states} states)")
        print(f"  {'subtask':10s} {'noabs':>7s} " + " ".join(f"{k:>7s}" for k in plans) + "  refines")
        totals = dict.fromkeys(["noabs", *plans], 0)
        for h in plans["polca"].order:
            subs = {k: p.subtasks[h] for k, p in plans.items()}
            noabs = d.model.n_states * len(subs["polca"].actions)
            totals["noabs"] += noabs
            cells = []
            for k, s in subs.items():
                totals[k] += s.clustered.n_q_values()
                cells.append(f"{s.clustered.n_q_values():7d}")
            ref = ""
            if "polca+" in subs:
                ref = "yes" if subs["polca+"].cluster_map.refines(subs["polca"].cluster_map) else "NO"
            print(f"  {h:10s} {noabs:7d} " + " ".join(cells) + f"  {ref}")
        print(f"  {'total':10s} " + " ".join(f"{v:7d}" for v in totals.values()))


if __name__ == "__main__":
    main()
