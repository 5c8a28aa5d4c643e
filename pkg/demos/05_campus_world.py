"""The campus delivery world.

Loads the bundled map, shows how the robot's state space grows when it
starts paying attention to more features, and samples the simulated
person's reactions at a crosswalk.
"""

from collections import Counter

import numpy as np

from competence_aware import campus
from competence_aware.cas import Level

cmap = campus.load_map(campus.default_map_path())
print("\n".join(cmap.grid))
print(f"{len(cmap.doors)} doors, {len(cmap.crosswalks)} crosswalks, rooms: {', '.join(cmap.room_names())}")
print("structure warnings:", list(cmap.warnings) or "none")

rng = np.random.default_rng(1)
task = campus.sample_task(cmap, "random", rng)
print(f"\ntask: {task.start} -> {task.goal}")
for active in (campus.INITIAL_ACTIVE, ("traffic", "open", "visibility", "size", "mechanism")):
    catalog = campus.campus_catalog(active)
    model = campus.build_domain_ssp(cmap, catalog, task)
    contexts = campus.obstacle_contexts(cmap, catalog)
    # static features do not add states at a given cell, but they tell
    # obstacles apart, so the feedback profile sees more distinct situations
    print(f"  active {', '.join(catalog.active_names):<44} {model.n_states:4d} states, "
          f"{len(contexts):2d} obstacle contexts")

busy = next(c for c in cmap.crosswalks if c.attr("visibility") == "clear")
human = campus.OracleAuthority()
print(f"\nasking to cross at {busy.label} (visibility clear), 1000 times per traffic level:")
for traffic in campus.FEATURE_VALUES["traffic"]:
    full = campus.obstacle_assignment(busy, traffic)
    answers = Counter(campus.oracle_feedback(human, full, campus.CROSS, Level.L1, rng).label for _ in range(1000))
    print(f"  {traffic:>5} traffic: {dict(sorted(answers.items()))}")
