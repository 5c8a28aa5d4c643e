"""Planning over autonomy levels.

One hallway with a door in the middle.  The robot can open the door itself
(l3), ask first (l1), go ahead under supervision (l2), or let a person do it
(l0).  How the human is expected to react decides which level pays off.
"""

import numpy as np

from competence_aware.cas import (
    AutonomyModel,
    HumanFeedbackModel,
    Level,
    Signal,
    build_cas,
    compute_competence,
    level_rho,
    solve_cas,
)
from competence_aware.ssp import Ssp

domain = Ssp.from_tables(
    ["hall", "door", "room"],
    ["go", "open"],
    {"hall": ["go"], "door": ["open"], "room": ["go"]},
    {("hall", "go"): {"door": 1.0}, ("door", "open"): {"room": 1.0}, ("room", "go"): {"room": 1.0}},
    {("hall", "go"): 1.0, ("door", "open"): 1.0, ("room", "go"): 0.0},
    "hall",
    "room",
)


def human(approve, lets_be):
    """Approval chance when asked (l1) and chance of no intervention (l2)."""

    def profile(s, prior, a, lvl):
        out = np.zeros(4)
        if lvl == Level.L1:
            out[Signal.APPROVE], out[Signal.DISAPPROVE] = approve, 1 - approve
        elif lvl == Level.L2:
            out[Signal.NONE], out[Signal.OVERRIDE] = lets_be, 1 - lets_be
        else:
            out[Signal.NONE] = 1.0
        return out

    return profile


rho = level_rho({Level.L0: 20.0, Level.L1: 2.0, Level.L2: 1.0, Level.L3: 0.0})
door_levels = frozenset({Level.L0, Level.L1})  # ask first or hand over
am = AutonomyModel(kappa={("door", "open"): door_levels}, default=frozenset({Level.L3}))

for approve in (0.9, 0.4, 0.1):
    hm = HumanFeedbackModel(human(approve, 0.5), rho)
    cas = build_cas(domain, am, hm)
    sol = solve_cas(cas)
    action, level = sol.action(("door", Level.L3))
    print(f"approval {approve:.1f}: at the door take {action} at {Level(level).label}, "
          f"expected cost from the hall {sol.value(('hall', Level.L3)):.2f}")

# competence: the best level under the human's true reactions, every level allowed
chi = compute_competence(domain, HumanFeedbackModel(human(1.0, 1.0), rho))
print("competence at the door when the human never objects:", chi[(("door", Level.L3), "open")].label)
