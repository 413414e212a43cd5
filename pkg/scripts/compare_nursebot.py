"""PolCA+ vs PolCA vs QMDP on the small Nursebot dialogue.

Writes per-step mean cumulative reward to a metrics CSV and prints mean
returns, clarification counts and a paired t-test.

    python scripts/compare_nursebot.py --episodes 100 --steps 200 --out nursebot.csv
"""

import argparse

import numpy as np
from scipy import stats

from polca import PlanOptions, baselines, build_domain, polca_plan
from polca.domains.nursebot import CLARIFICATIONS
from polca.executor import evaluate


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--domain", default="nursebot-small")
    ap.add_argument("--episodes", type=int, default=100)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--seeds", default="0")
    ap.add_argument("--top-solver", choices=("exact", "qmdp"), default="exact")
    ap.add_argument("--out", help="metrics CSV")
    args = ap.parse_args()

    d = build_domain(args.domain)
    planners = {
        "polca+": polca_plan(d.model, d.graph, "pomdp", PlanOptions(top_solver=args.top_solver)),
        "polca": polca_plan(d.model, d.graph, "mdp"),
        "qmdp": baselines.plan_qmdp(d.model),
    }
    rows, returns = [], {}
    for seed in (int(s) for s in args.seeds.split(",")):
        for name, p in planners.items():
            trajs = []
            met = evaluate(p, d.model, args.episodes, args.steps, rng_seed=seed, initial=d.initial, keep=trajs)
            rows += met.to_csv_rows(name, args.domain, seed)
            returns.setdefault(name, []).extend(met.returns)
            asks = np.mean([sum(a in CLARIFICATIONS for a in t.actions) for t in trajs])
            print(f"seed {seed}  {name:7s} mean return {met.mean_return:9.2f}  clarifications/episode {asks:6.1f}")
    t = stats.ttest_rel(returns["polca+"], returns["qmdp"])
    print(f"paired t-test polca+ vs qmdp: t={t.statistic:.2f} p={t.pvalue:.2e}")
    if args.out:
        with open(args.out, "w") as f:
            f.write("step,mean_cum_reward,algo,domain,seed\n" + "\n".join(rows) + "\n")


if __name__ == "__main__":
    main()
