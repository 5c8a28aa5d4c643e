"""Online feature discovery for competence-aware systems.

A situation (active-feature context, action, level) is indiscriminate when it
has been visited at least m times yet the feedback profile predicts no signal
with probability >= theta.  For a sampled indiscriminate situation the
inactive features are scored by how strongly their one-hot value indicators
correlate (Pearson) with the one-hot feedback signals received there; the
best candidate is kept only if it raises validation accuracy by at least
alpha without turning any discriminated situation indiscriminate.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, NamedTuple, Optional, Sequence

import numpy as np

from .cas import SIGNALS, Level
from .feedback import (
    FeatureCatalog,
    FeedbackDataset,
    TrainedProfile,
    context_counts,
    evaluate,
    split,
    train_profile,
)

log = logging.getLogger(__name__)

DEFAULT_THETA = 0.95
DEFAULT_M = 30
DEFAULT_K = 1
DEFAULT_ALPHA = 0.05
DEFAULT_MAX_CARDINALITY = 2


class Situation(NamedTuple):
    context: tuple  # ((feature, value), ...) over the profile's features
    action: str
    level: Level

    def matches(self, assignment: dict) -> bool:
        return all(assignment.get(k) == v for k, v in self.context)

    def project(self, names: Iterable[str]) -> "Situation":
        names = set(names)
        return Situation(tuple((k, v) for k, v in self.context if k in names), self.action, self.level)

    def describe(self) -> str:
        ctx = ",".join(f"{k}={v}" for k, v in self.context) or "-"
        return f"[{ctx}] {self.action}@{Level(self.level).label}"


@dataclass(frozen=True)
class IndiscriminateQuery:
    theta: float = DEFAULT_THETA
    m: int = DEFAULT_M
    target: Optional[Situation] = None

    def __post_init__(self):
        if not 1.0 / len(SIGNALS) < self.theta < 1.0:
            raise ValueError(f"theta must lie in (1/{len(SIGNALS)}, 1)")
        if self.m < 1:
            raise ValueError("m must be at least 1")


def _situation(profile: TrainedProfile, key) -> Situation:
    values, action, level = key
    return Situation(tuple(zip(profile.features, values)), action, Level(level))


def find_indiscriminate(
    profile: TrainedProfile, dataset: FeedbackDataset, query: IndiscriminateQuery
) -> list[Situation]:
    """Situations seen >= m times whose most likely signal is below theta."""
    counts = context_counts(dataset, profile.features)
    out = []
    for key in sorted(counts, key=lambda k: (k[1], k[2], k[0])):
        if counts[key].sum() < query.m:
            continue
        if profile.predict_key(key).max() >= query.theta:
            continue
        sit = _situation(profile, key)
        if query.target is not None and sit != query.target:
            continue
        out.append(sit)
    return out


def sample_indiscriminate(situations: Sequence[Situation], rng: np.random.Generator) -> Optional[Situation]:
    if not situations:
        return None
    return situations[int(rng.integers(len(situations)))]


# -- correlation and discrimination ------------------------------------------


@dataclass(frozen=True, eq=False)
class CorrelationMatrix:
    rows: tuple  # ((feature, value), ...)
    entries: np.ndarray  # (len(rows), len(SIGNALS))
    n_records: int = 0
    reason: str = ""

    @property
    def empty(self) -> bool:
        return len(self.rows) == 0

    def row(self, feature: str, value) -> np.ndarray:
        return self.entries[self.rows.index((feature, value))]


def pearson(x: np.ndarray, y: np.ndarray) -> float:
    """Pearson correlation; 0 when either side has zero variance."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    dx, dy = x - x.mean(), y - y.mean()
    sx, sy = np.sqrt(dx @ dx), np.sqrt(dy @ dy)
    if sx < 1e-12 or sy < 1e-12:
        return 0.0
    return float(np.clip((dx @ dy) / (sx * sy), -1.0, 1.0))


def isolate(dataset: FeedbackDataset, target: Situation) -> np.ndarray:
    """Indices of records matching the situation's context, action and level."""
    catalog = dataset.catalog
    arr = dataset.arrays()
    if len(dataset) == 0:
        return np.zeros(0, dtype=np.int64)
    mask = arr.level == int(target.level)
    if target.action in arr.actions:
        mask &= arr.action == arr.actions.index(target.action)
    else:
        return np.zeros(0, dtype=np.int64)
    for name, value in target.context:
        feat = catalog.feature(name)
        mask &= arr.codes[:, catalog.index(name)] == feat.code(value)
    return np.flatnonzero(mask)


def correlation_matrix(
    train: FeedbackDataset, target: Situation, candidates: Iterable[str]
) -> CorrelationMatrix:
    idx = isolate(train, target)
    if len(idx) < 2:
        return CorrelationMatrix((), np.zeros((0, len(SIGNALS))), len(idx), "fewer than 2 records")
    arr = train.arrays()
    signals = arr.signal[idx]
    if len(np.unique(signals)) < 2:
        return CorrelationMatrix((), np.zeros((0, len(SIGNALS))), len(idx), "single signal")
    catalog = train.catalog
    sig_ind = np.stack([(signals == s).astype(float) for s in SIGNALS], axis=1)
    rows, entries = [], []
    for name in catalog.ordered(candidates):
        feat = catalog.feature(name)
        codes = arr.codes[idx, catalog.index(name)]
        for code in np.unique(codes):
            ind = (codes == code).astype(float)
            rows.append((name, feat.values[code]))
            entries.append([pearson(ind, sig_ind[:, j]) for j in range(len(SIGNALS))])
    return CorrelationMatrix(tuple(rows), np.asarray(entries, dtype=float).reshape(-1, len(SIGNALS)), len(idx))


def discrimination_scores(corr: CorrelationMatrix, candidate_sets: Iterable[Sequence[str]]) -> dict:
    """Mean over a set's feature-value rows of the row's max |correlation|."""
    row_max = np.abs(corr.entries).max(axis=1) if len(corr.rows) else np.zeros(0)
    out = {}
    for cand in candidate_sets:
        cand = tuple(cand)
        sel = [i for i, (name, _) in enumerate(corr.rows) if name in cand]
        out[cand] = float(row_max[sel].mean()) if sel else 0.0
    return out


@dataclass(frozen=True)
class Discriminator:
    features: tuple
    score: float = 0.0

    def __post_init__(self):
        if not self.features:
            raise ValueError("a discriminator needs at least one feature")


def candidate_sets(catalog: FeatureCatalog, candidates: Iterable[str], max_cardinality: int) -> list[tuple]:
    names = catalog.ordered(candidates)
    out = []
    for size in range(1, max_cardinality + 1):
        out.extend(itertools.combinations(names, size))
    return out


def get_discriminators(
    train: FeedbackDataset,
    k: int,
    target: Situation,
    candidates: Iterable[str] | None = None,
    max_cardinality: int = DEFAULT_MAX_CARDINALITY,
) -> list[Discriminator]:
    """Top-k candidate feature sets for the target situation.

    Ties break toward smaller sets, then catalog order.  Returns [] when the
    correlation matrix is empty.
    """
    catalog = train.catalog
    if candidates is None:
        candidates = catalog.inactive_names
    candidates = catalog.ordered(candidates)
    if set(candidates) & set(catalog.active):
        raise ValueError("discriminator candidates must be inactive features")
    corr = correlation_matrix(train, target, candidates)
    if corr.empty:
        return []
    sets = candidate_sets(catalog, candidates, max_cardinality)
    scores = discrimination_scores(corr, sets)
    position = {n: i for i, n in enumerate(catalog.names)}
    ranked = sorted(sets, key=lambda c: (-scores[c], len(c), [position[n] for n in c]))
    return [Discriminator(c, scores[c]) for c in ranked[:k]]


# -- validation ----------------------------------------------------------------


@dataclass(frozen=True)
class Verdict:
    accepted: bool
    reason: str
    old_accuracy: float
    new_accuracy: float
    regressions: tuple = ()

    def __bool__(self) -> bool:
        return self.accepted


def accept_decision(old_accuracy: float, new_accuracy: float, alpha: float, regressions: Sequence = ()) -> tuple:
    """(accepted, reason) from accuracies and newly indiscriminate situations."""
    gain = new_accuracy - old_accuracy
    if gain < alpha - 1e-12:
        return False, f"accuracy gain {gain:.4f} < alpha {alpha:g}"
    if regressions:
        return False, f"{len(regressions)} situation(s) became indiscriminate"
    return True, f"accuracy gain {gain:.4f}"


def validate_discriminator(
    candidate: Discriminator,
    old_profile: TrainedProfile,
    new_profile: TrainedProfile,
    validation: FeedbackDataset,
    alpha: float,
    query: IndiscriminateQuery,
    dataset: FeedbackDataset | None = None,
) -> Verdict:
    """Accept iff accuracy gain >= alpha and no new indiscriminate situation.

    A finer situation counts as a regression when its projection onto the old
    profile's features was not indiscriminate before.  Visit counts come from
    `dataset` (defaults to the validation set).
    """
    reference = dataset if dataset is not None else validation
    old_acc = evaluate(old_profile, validation)
    new_acc = evaluate(new_profile, validation)
    plain = IndiscriminateQuery(query.theta, query.m)
    before = set(find_indiscriminate(old_profile, reference, plain))
    after = find_indiscriminate(new_profile, reference, plain)
    regressions = tuple(s for s in after if s.project(old_profile.features) not in before)
    accepted, reason = accept_decision(old_acc, new_acc, alpha, regressions)
    return Verdict(accepted, reason, old_acc, new_acc, regressions)


# -- the refinement step -----------------------------------------------------


@dataclass(frozen=True)
class RefinementParams:
    theta: float = DEFAULT_THETA
    m: int = DEFAULT_M
    k: int = DEFAULT_K
    alpha: float = DEFAULT_ALPHA
    split_ratio: float = 0.75
    max_cardinality: int = DEFAULT_MAX_CARDINALITY
    estimator: str = "ga2m"

    @property
    def query(self) -> IndiscriminateQuery:
        return IndiscriminateQuery(self.theta, self.m)


@dataclass
class RefinementOutcome:
    changed: bool
    catalog: FeatureCatalog
    profile: TrainedProfile
    reason: str
    event: dict = field(default_factory=dict)
    cas: object = None


def refine_step(
    dataset: FeedbackDataset,
    catalog: FeatureCatalog,
    params: RefinementParams = RefinementParams(),
    rng: np.random.Generator | None = None,
    profile: TrainedProfile | None = None,
    rebuild: Callable[[FeatureCatalog, TrainedProfile], object] | None = None,
    episode: int | None = None,
) -> RefinementOutcome:
    """One pass of the feature-discovery loop.

    1 sample an indiscriminate situation (stop if none), 2 split the data,
    3 rank discriminators, 4-5 train and evaluate one profile per candidate,
    6 validate the best, 7 on success activate it, retrain on all data and
    rebuild the planning model through `rebuild`.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    if profile is None:
        profile = train_profile(dataset, catalog, estimator=params.estimator, allow_empty=True)
    event: dict = {"episode": episode, "active": list(catalog.active_names)}

    def no_change(reason: str) -> RefinementOutcome:
        event.update(accepted=False, reason=reason)
        return RefinementOutcome(False, catalog, profile, reason, event)

    situations = find_indiscriminate(profile, dataset, params.query)
    target = sample_indiscriminate(situations, rng)
    if target is None:
        return no_change("no indiscriminate situation")
    event["target"] = target.describe()
    seed = int(rng.integers(2**31 - 1))
    train, validation, warning = split(dataset, params.split_ratio, seed)
    if warning:
        return no_change(warning)
    discriminators = get_discriminators(
        train, params.k, target, catalog.inactive_names, params.max_cardinality
    )
    event["candidates"] = [{"features": list(d.features), "score": round(d.score, 6)} for d in discriminators]
    if not discriminators:
        return no_change("empty correlation matrix")
    trained = [
        train_profile(train, catalog, candidate=d.features, estimator=params.estimator, seed=seed)
        for d in discriminators
    ]
    accuracies = [evaluate(p, validation) for p in trained]
    best = int(np.argmax(accuracies))
    chosen, new_profile = discriminators[best], trained[best]
    old_profile = train_profile(train, catalog, estimator=params.estimator, seed=seed)
    verdict = validate_discriminator(chosen, old_profile, new_profile, validation, params.alpha, params.query, dataset)
    event.update(
        chosen=list(chosen.features),
        old_accuracy=round(verdict.old_accuracy, 6),
        new_accuracy=round(verdict.new_accuracy, 6),
    )
    if not verdict:
        return no_change(verdict.reason)
    new_catalog = catalog.augment(chosen.features)
    refit = train_profile(dataset, new_catalog, estimator=params.estimator, seed=seed)
    event.update(accepted=True, reason=verdict.reason, active_after=list(new_catalog.active_names))
    log.info("refinement accepted %s for %s", chosen.features, target.describe())
    cas = rebuild(new_catalog, refit) if rebuild is not None else None
    return RefinementOutcome(True, new_catalog, refit, verdict.reason, event, cas)


def format_event(event: dict) -> str:
    return json.dumps(event, sort_keys=True)
