"""Wall-clock planning time for Taxi, Taxi2 and the 576-state Nursebot.

    python scripts/time_plans.py
"""

import time

from polca import PlanOptions, build_domain, polca_plan


def timed(name, mode, opts=None):
    d = build_domain(name)
    t0 = time.perf_counter()
    policy = polca_plan(d.model, d.graph, mode, opts)
    seconds = time.perf_counter() - t0
    worst = max(s.residual() for s in policy.subtasks.values())
    solvers = ",".join(sorted({s.solver for s in policy.subtasks.values()}))
    print(f"{name:15s} {mode:5s} {seconds:8.2f}s  solvers {solvers:18s} worst residual {worst:.1e}")


if __name__ == "__main__":
    timed("taxi", "mdp")
    timed("taxi2", "mdp")
    timed("nursebot", "mdp")
    timed("nursebot", "pomdp", PlanOptions(top_solver="qmdp"))
