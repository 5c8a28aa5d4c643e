"""Standard vs modified system on the campus, end to end.

A shortened version of the acceptance experiment: a few trials of random
delivery tasks.  The standard system keeps its initial features; the
modified one may add features when the person's answers look inconsistent.
Results are written the same way the command line tool writes them.
"""

import sys
import tempfile
from dataclasses import replace

import numpy as np

from competence_aware.cli import default_config_path
from competence_aware.harness import ExperimentConfig, emit, run_experiment

trials = int(sys.argv[1]) if len(sys.argv) > 1 else 3
episodes = int(sys.argv[2]) if len(sys.argv) > 2 else 150
base = replace(ExperimentConfig.load(default_config_path()), trials=trials, episodes=episodes)

window = 20
for refinement in (False, True):
    result = run_experiment(replace(base, refinement=refinement))
    lo = result.matrix("level_optimality_all")[:, -window:].mean()
    signals = result.matrix("signals")
    early, late = signals[:, :window].mean(), signals[:, -window:].mean()
    feats = {r.active_features for r in result.rows if r.episode == episodes - 1}
    name = "modified" if refinement else "standard"
    print(f"{name}: level-optimality {lo:.3f}, signals per episode {early:.2f} early -> {late:.2f} late")
    print(f"  final feature sets: {sorted(feats)}")
    out = tempfile.mkdtemp(prefix=f"cas-{name}-")
    paths = emit(result, out)
    print(f"  wrote {paths['metrics']}")

curve = np.nanmean(result.matrix("level_optimality_all"), axis=0)
print("modified level-optimality every 25 episodes:", np.round(curve[::25], 2).tolist())
