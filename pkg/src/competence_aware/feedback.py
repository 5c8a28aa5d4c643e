"""Human feedback records and the learned feedback profile.

Records always keep the complete feature assignment so that a profile can be
retrained on any active feature space later.  Two estimators back a profile:
an add-one smoothed frequency table (exact and fast on small discrete spaces)
and a boosted pairwise additive model (see `gam`).
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .cas import FEEDBACK_LEVELS, LEGAL_SIGNALS, SIGNALS, Level, Signal, legal_mask, uniform_signals

NA = "na"


class FeedbackError(ValueError):
    pass


@dataclass(frozen=True)
class Feature:
    name: str
    values: tuple

    def __post_init__(self):
        if len(self.values) < 2:
            raise FeedbackError(f"feature {self.name!r} needs at least two values")
        if len(set(self.values)) != len(self.values):
            raise FeedbackError(f"feature {self.name!r} has duplicate values")

    def code(self, value) -> int:
        try:
            return self.values.index(value)
        except ValueError:
            raise FeedbackError(f"{value!r} is not a value of feature {self.name!r}") from None


@dataclass(frozen=True)
class FeatureCatalog:
    """The complete feature space, partitioned into active and inactive."""

    features: tuple
    active: frozenset = frozenset()

    def __post_init__(self):
        names = [f.name for f in self.features]
        if len(set(names)) != len(names):
            raise FeedbackError("feature names must be unique")
        unknown = set(self.active) - set(names)
        if unknown:
            raise FeedbackError(f"unknown active features: {sorted(unknown)}")
        object.__setattr__(self, "active", frozenset(self.active))

    @cached_property
    def names(self) -> tuple:
        return tuple(f.name for f in self.features)

    @cached_property
    def active_names(self) -> tuple:
        return tuple(n for n in self.names if n in self.active)

    @cached_property
    def inactive_names(self) -> tuple:
        return tuple(n for n in self.names if n not in self.active)

    @cached_property
    def active_positions(self) -> tuple:
        return tuple(i for i, n in enumerate(self.names) if n in self.active)

    @cached_property
    def _positions(self) -> dict:
        return {n: i for i, n in enumerate(self.names)}

    def feature(self, name: str) -> Feature:
        return self.features[self.index(name)]

    def index(self, name: str) -> int:
        try:
            return self._positions[name]
        except KeyError:
            raise FeedbackError(f"unknown feature {name!r}") from None

    def ordered(self, names: Iterable[str]) -> tuple:
        names = set(names)
        return tuple(n for n in self.names if n in names)

    def with_active(self, names: Iterable[str]) -> "FeatureCatalog":
        return FeatureCatalog(self.features, frozenset(names))

    def augment(self, names: Iterable[str]) -> "FeatureCatalog":
        return self.with_active(self.active | set(names))


@dataclass(frozen=True)
class FeedbackRecord:
    episode: int
    location: str
    features: tuple
    action: str
    prior_level: Level
    level: Level
    signal: Signal

    def __post_init__(self):
        object.__setattr__(self, "prior_level", Level(self.prior_level))
        object.__setattr__(self, "level", Level(self.level))
        object.__setattr__(self, "signal", Signal(self.signal))
        object.__setattr__(self, "features", tuple(self.features))
        if self.level not in FEEDBACK_LEVELS:
            raise FeedbackError(f"no feedback is recorded at {self.level.label}")
        if self.signal not in LEGAL_SIGNALS[self.level]:
            raise FeedbackError(f"{self.signal.label} cannot be received at {self.level.label}")


class FeedbackDataset:
    """Append-only multiset of feedback records over one feature catalog."""

    def __init__(self, catalog: FeatureCatalog, records: Iterable[FeedbackRecord] = ()):
        self.catalog = catalog
        self._records: list[FeedbackRecord] = []
        self._arrays = None
        for rec in records:
            self.record(rec)

    def record(self, rec: FeedbackRecord) -> "FeedbackDataset":
        if len(rec.features) != len(self.catalog.features):
            raise FeedbackError("record must assign every feature of the complete space")
        for feat, value in zip(self.catalog.features, rec.features):
            feat.code(value)
        self._records.append(rec)
        self._arrays = None
        return self

    def extend(self, recs: Iterable[FeedbackRecord]) -> "FeedbackDataset":
        for rec in recs:
            self.record(rec)
        return self

    def __len__(self) -> int:
        return len(self._records)

    def __iter__(self):
        return iter(self._records)

    def __getitem__(self, i) -> FeedbackRecord:
        return self._records[i]

    @property
    def records(self) -> tuple:
        return tuple(self._records)

    def subset(self, indices: Iterable[int]) -> "FeedbackDataset":
        out = FeedbackDataset(self.catalog)
        out._records = [self._records[i] for i in indices]
        return out

    def arrays(self) -> "DatasetArrays":
        if self._arrays is None:
            self._arrays = DatasetArrays.build(self.catalog, self._records)
        return self._arrays

    # -- persistence -----------------------------------------------------

    def header(self) -> list[str]:
        return ["episode", "location", *self.catalog.names, "action", "prior_level", "level", "signal"]

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.header())
        for r in self._records:
            writer.writerow(
                [r.episode, r.location, *r.features, r.action, r.prior_level.label, r.level.label, r.signal.label]
            )
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text

    @classmethod
    def from_csv(cls, source, catalog: FeatureCatalog) -> "FeedbackDataset":
        text = Path(source).read_text() if not isinstance(source, str) or "\n" not in source else source
        reader = csv.reader(io.StringIO(text))
        header = next(reader)
        expected = cls(catalog).header()
        if header != expected:
            raise FeedbackError(f"header mismatch: expected {expected}, got {header}")
        nf = len(catalog.features)
        ds = cls(catalog)
        for line_no, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise FeedbackError(f"line {line_no}: expected {len(header)} columns, got {len(row)}")
            ds.record(
                FeedbackRecord(
                    episode=int(row[0]),
                    location=row[1],
                    features=tuple(row[2 : 2 + nf]),
                    action=row[2 + nf],
                    prior_level=Level.parse(row[3 + nf]),
                    level=Level.parse(row[4 + nf]),
                    signal=Signal.parse(row[5 + nf]),
                )
            )
        return ds


@dataclass(frozen=True, eq=False)
class DatasetArrays:
    codes: np.ndarray  # (n, n_features) value indices
    actions: tuple  # action vocabulary
    action: np.ndarray
    prior: np.ndarray
    level: np.ndarray
    signal: np.ndarray

    @classmethod
    def build(cls, catalog: FeatureCatalog, records: Sequence[FeedbackRecord]) -> "DatasetArrays":
        n, nf = len(records), len(catalog.features)
        codes = np.zeros((n, nf), dtype=np.int64)
        lookups = [{v: i for i, v in enumerate(f.values)} for f in catalog.features]
        vocab: dict = {}
        action = np.zeros(n, dtype=np.int64)
        prior = np.zeros(n, dtype=np.int64)
        level = np.zeros(n, dtype=np.int64)
        signal = np.zeros(n, dtype=np.int64)
        for i, r in enumerate(records):
            codes[i] = [lk[v] for lk, v in zip(lookups, r.features)]
            action[i] = vocab.setdefault(r.action, len(vocab))
            prior[i], level[i], signal[i] = r.prior_level, r.level, r.signal
        return cls(codes, tuple(vocab), action, prior, level, signal)


class Split(NamedTuple):
    train: FeedbackDataset
    validation: FeedbackDataset
    warning: Optional[str] = None


def _largest_remainder(sizes: Sequence[int], total: int) -> list[int]:
    exact = [s * total / max(sum(sizes), 1) for s in sizes]
    alloc = [min(int(math.floor(e)), s) for e, s in zip(exact, sizes)]
    order = sorted(range(len(sizes)), key=lambda i: (-(exact[i] - alloc[i]), i))
    for i in order:
        if sum(alloc) >= total:
            break
        if alloc[i] < sizes[i]:
            alloc[i] += 1
    return alloc


def split(dataset: FeedbackDataset, ratio: float = 0.75, seed: int = 0) -> Split:
    """Seeded shuffle split; stratified by signal when every class has >= 4 records."""
    n = len(dataset)
    if n == 0:
        raise FeedbackError("cannot split an empty dataset")
    if not 0 < ratio < 1:
        raise FeedbackError("ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    n_train = min(n, max(1, int(round(ratio * n))))
    signals = dataset.arrays().signal
    classes, counts = np.unique(signals, return_counts=True)
    if len(classes) > 1 and counts.min() >= 4:
        quotas = _largest_remainder(counts.tolist(), n_train)
        train_idx, val_idx = [], []
        for cls_, quota in zip(classes, quotas):
            members = rng.permutation(np.flatnonzero(signals == cls_))
            train_idx.extend(members[:quota].tolist())
            val_idx.extend(members[quota:].tolist())
    else:
        perm = rng.permutation(n)
        train_idx, val_idx = perm[:n_train].tolist(), perm[n_train:].tolist()
    warning = None
    if not val_idx:
        warning = f"validation set is empty ({n} record(s))"
    return Split(dataset.subset(sorted(train_idx)), dataset.subset(sorted(val_idx)), warning)


# -- feedback profiles ---------------------------------------------------------


def _encode_contexts(arrays: DatasetArrays, columns: Sequence[int]) -> np.ndarray:
    return np.column_stack([arrays.codes[:, columns], arrays.level])


class TrainedProfile:
    """Predicts a distribution over signals from (features, action, level).

    The profile pools over the prior level.  Any context that never occurred
    in training predicts the uniform distribution over the level's legal
    signals.
    """

    def __init__(
        self,
        catalog: FeatureCatalog,
        features: Sequence[str],
        counts: Mapping[tuple, np.ndarray],
        estimator: str = "frequency",
        model=None,
        training_size: int = 0,
    ):
        self.catalog = catalog
        self.features = catalog.ordered(features)
        self.columns = [catalog.index(n) for n in self.features]
        self.counts = dict(counts)
        self.estimator = estimator
        self.model = model
        self.training_size = training_size
        self.accuracy: Optional[float] = None
        self._cache: dict = {}

    def context_key(self, assignment, action: str, level) -> tuple:
        """Key for a full or partial assignment (mapping or full tuple)."""
        if isinstance(assignment, Mapping):
            values = tuple(assignment[n] for n in self.features)
        else:
            values = tuple(assignment[i] for i in self.columns)
        return (values, action, int(level))

    def predict(self, assignment, action: str, prior_level, level) -> np.ndarray:
        return self.predict_key(self.context_key(assignment, action, level))

    def predict_key(self, key: tuple) -> np.ndarray:
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        level = Level(key[2])
        if level not in FEEDBACK_LEVELS:
            out = np.zeros(len(SIGNALS))
            out[Signal.NONE] = 1.0
        else:
            counts = self.counts.get(key)
            if counts is None or counts.sum() == 0:
                out = uniform_signals(level)
            elif self.estimator == "frequency":
                mask = legal_mask(level)
                out = np.where(mask, counts + 1.0, 0.0)
                out = out / out.sum()
            else:
                out = self.model.predict_one(key)
        self._cache[key] = out
        return out

    def visits(self, key: tuple) -> int:
        c = self.counts.get(key)
        return 0 if c is None else int(c.sum())

    def predict_dataset(self, dataset: FeedbackDataset) -> np.ndarray:
        out = np.empty((len(dataset), len(SIGNALS)))
        for i, r in enumerate(dataset):
            out[i] = self.predict_key(self.context_key(r.features, r.action, r.level))
        return out


def context_counts(dataset: FeedbackDataset, features: Sequence[str]) -> dict:
    """(feature values, action, level) -> signal counts over the dataset."""
    if len(dataset) == 0:
        return {}
    catalog = dataset.catalog
    names = catalog.ordered(features)
    cols = [catalog.index(n) for n in names]
    arr = dataset.arrays()
    keys = np.column_stack([arr.codes[:, cols], arr.action, arr.level, arr.signal])
    uniq, counts = np.unique(keys, axis=0, return_counts=True)
    out: dict = {}
    feats = [catalog.features[c] for c in cols]
    for row, cnt in zip(uniq, counts):
        values = tuple(f.values[v] for f, v in zip(feats, row[: len(cols)]))
        key = (values, arr.actions[row[len(cols)]], int(row[len(cols) + 1]))
        vec = out.setdefault(key, np.zeros(len(SIGNALS)))
        vec[row[-1]] += cnt
    return out


def train_profile(
    train: FeedbackDataset,
    catalog: FeatureCatalog | None = None,
    candidate: Iterable[str] = (),
    estimator: str = "ga2m",
    seed: int = 0,
    allow_empty: bool = False,
    **gam_options,
) -> TrainedProfile:
    """Fit a feedback profile on the active features (plus a candidate set)."""
    catalog = catalog or train.catalog
    if len(train) == 0 and not allow_empty:
        raise FeedbackError("cannot train a feedback profile on an empty dataset")
    features = catalog.ordered(set(catalog.active) | set(candidate))
    counts = context_counts(train, features)
    model = None
    if estimator == "ga2m":
        from .gam import fit_ga2m

        if len(train):
            model = fit_ga2m(train, features, seed=seed, **gam_options)
    elif estimator != "frequency":
        raise FeedbackError(f"unknown estimator {estimator!r}")
    return TrainedProfile(catalog, features, counts, estimator, model, len(train))


def uniform_profile(catalog: FeatureCatalog) -> TrainedProfile:
    return TrainedProfile(catalog, catalog.active_names, {}, "frequency", None, 0)


def evaluate(profile: TrainedProfile, validation: FeedbackDataset) -> float:
    """Top-1 accuracy; a tied argmax counts as incorrect."""
    if len(validation) == 0:
        raise FeedbackError("cannot evaluate on an empty validation set")
    probs = profile.predict_dataset(validation)
    top = probs.max(axis=1, keepdims=True)
    unique_top = (np.isclose(probs, top, rtol=0, atol=1e-12)).sum(axis=1) == 1
    pred = probs.argmax(axis=1)
    truth = validation.arrays().signal
    return float(np.mean(unique_top & (pred == truth)))
