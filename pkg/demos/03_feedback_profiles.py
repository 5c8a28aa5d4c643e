"""Learning how a person reacts from logged feedback.

The robot asked (l1) before opening doors.  The person approved light and
medium push doors and refused the rest, with occasional slips.  We fit both
estimators on the door size alone, then on size and mechanism.
"""

import numpy as np

from competence_aware.cas import Level, Signal
from competence_aware.feedback import (
    Feature,
    FeatureCatalog,
    FeedbackDataset,
    FeedbackRecord,
    evaluate,
    split,
    train_profile,
)

rng = np.random.default_rng(0)
catalog = FeatureCatalog(
    (Feature("size", ("light", "medium", "heavy")), Feature("mechanism", ("push", "pull"))),
    frozenset({"size"}),
)
log = FeedbackDataset(catalog)
for i in range(400):
    size = ("light", "medium", "heavy")[rng.integers(3)]
    mech = ("push", "pull")[rng.integers(2)]
    ok = size != "heavy" and mech == "push"
    if rng.random() < 0.05:
        ok = not ok
    sig = Signal.APPROVE if ok else Signal.DISAPPROVE
    log.record(FeedbackRecord(i, "door", (size, mech), "open-door", Level.L1, Level.L1, sig))

train, valid, _ = split(log, 0.75, seed=0)
print(f"{len(train)} training and {len(valid)} validation records")

for estimator in ("frequency", "ga2m"):
    coarse = train_profile(train, estimator=estimator)
    fine = train_profile(train, candidate=["mechanism"], estimator=estimator)
    print(f"{estimator:>9}: accuracy with size only {evaluate(coarse, valid):.3f}, "
          f"with size and mechanism {evaluate(fine, valid):.3f}")

fine = train_profile(log, candidate=["mechanism"], estimator="frequency")
for size in ("light", "heavy"):
    for mech in ("push", "pull"):
        p = fine.predict({"size": size, "mechanism": mech}, "open-door", Level.L1, Level.L1)
        print(f"  {size:>5} {mech:>4} door: P(approve) = {p[Signal.APPROVE]:.2f}")
