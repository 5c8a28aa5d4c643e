"""Finding the door features that explain the human's answers.

The robot starts out seeing only whether a door is open.  Asking before
opening closed doors produces a log where the same context gets both
approvals and refusals.  Each refinement step looks for such a confusing
situation, ranks the unused features by how well they line up with the
answers, and keeps a feature only if it makes held-out predictions better
without leaving any finer situation unpredictable.
"""

import numpy as np

from competence_aware import campus
from competence_aware.cas import Level
from competence_aware.feedback import FeedbackDataset, FeedbackRecord
from competence_aware.refinement import RefinementParams, format_event, refine_step

cmap = campus.load_map(campus.default_map_path())
human = campus.OracleAuthority(epsilon=0.05)
rng = np.random.default_rng(3)

log = FeedbackDataset(campus.campus_catalog())
for i in range(300):
    door = cmap.doors[rng.integers(len(cmap.doors))]
    full = campus.obstacle_assignment(door, "closed")
    signal = campus.oracle_feedback(human, full, campus.OPEN_DOOR, Level.L1, rng)
    log.record(FeedbackRecord(i, door.label, full, campus.OPEN_DOOR, Level.L1, Level.L1, signal))

catalog = log.catalog
params = RefinementParams(estimator="frequency")
print("active features:", ", ".join(catalog.active_names))
for step in range(6):
    log.catalog = catalog
    out = refine_step(log, catalog, params, rng, episode=step)
    if out.event.get("target") is not None:
        print(format_event(out.event))
    if out.changed:
        catalog = out.catalog
        print("  -> active features now:", ", ".join(catalog.active_names))
    elif out.reason == "no indiscriminate situation":
        print("every situation is predicted confidently; stopping")
        break
