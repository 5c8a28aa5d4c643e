"""Solving a small stochastic shortest path problem.

A robot walks a four-cell corridor.  The 'run' action is faster on average
but sometimes slips back a cell; 'walk' always advances.
"""

from competence_aware.ssp import evaluate_policy, solve, validate_ssp, Ssp

cells = ["c0", "c1", "c2", "goal"]
transition, cost, available = {}, {}, {}
for i, s in enumerate(cells[:-1]):
    nxt, back = cells[i + 1], cells[max(i - 1, 0)]
    available[s] = ["walk", "run"]
    transition[(s, "walk")] = {nxt: 1.0}
    cost[(s, "walk")] = 2.0
    transition[(s, "run")] = {nxt: 0.8, back: 0.2} if nxt != back else {nxt: 1.0}
    cost[(s, "run")] = 1.0
available["goal"] = ["walk"]
transition[("goal", "walk")] = {"goal": 1.0}
cost[("goal", "walk")] = 0.0

model = Ssp.from_tables(cells, ["walk", "run"], available, transition, cost, "c0", "goal")
print("problems found:", validate_ssp(model))

solution = solve(model)
for s in cells:
    print(f"{s:>5}: V = {solution.value(s):6.3f}  take {solution.action(s)}")

# the cautious policy for comparison
walking = evaluate_policy(model, {s: "walk" for s in cells})
print("always walking from c0 costs", round(walking["c0"], 3))
print(f"converged in {solution.iterations} sweeps, residual {solution.residual:.1e}")
