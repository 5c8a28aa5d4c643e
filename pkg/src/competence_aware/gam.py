"""Boosted additive model with pairwise interactions over categorical inputs.

Each signal class gets a log-odds score

    f_c(x) = b_c + sum_i g_ci(x_i) + sum_{i<j} h_cij(x_i, x_j)

where every g and h is a lookup table (a categorical input needs no binning).
Terms are fit by cyclic Newton boosting on the softmax loss, restricted to
the signals that are legal at each record's level.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .cas import SIGNALS, legal_mask

LEARNING_RATES = (0.1, 0.3)
ROUNDS = (20, 60)
L2 = 1.0


def _level_masks() -> np.ndarray:
    return np.stack([legal_mask(l) for l in range(4)])


def _softmax(logits: np.ndarray, mask: np.ndarray) -> np.ndarray:
    z = np.where(mask, logits, -np.inf)
    z = z - z.max(axis=1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Ga2mModel:
    cardinalities: list
    value_lookup: list  # per input: value -> code
    intercept: np.ndarray
    singles: dict = field(default_factory=dict)
    pairs: dict = field(default_factory=dict)
    learning_rate: float = 0.1
    rounds: int = 20

    def logits(self, X: np.ndarray) -> np.ndarray:
        out = np.tile(self.intercept, (len(X), 1))
        for i, table in self.singles.items():
            out += table[X[:, i]]
        for (i, j), table in self.pairs.items():
            out += table[X[:, i], X[:, j]]
        return out

    def predict_codes(self, X: np.ndarray) -> np.ndarray:
        masks = _level_masks()[X[:, -1]]
        return _softmax(self.logits(X), masks)

    def encode_key(self, key) -> np.ndarray | None:
        values, action, level = key
        raw = (*values, action, int(level))
        codes = []
        for lookup, v in zip(self.value_lookup, raw):
            if v not in lookup:
                return None
            codes.append(lookup[v])
        return np.asarray([codes], dtype=np.int64)

    def predict_one(self, key) -> np.ndarray:
        X = self.encode_key(key)
        if X is None:
            mask = legal_mask(int(key[2]))
            return mask / mask.sum()
        return self.predict_codes(X)[0]


def _design(dataset, features: Sequence[str]):
    catalog = dataset.catalog
    arr = dataset.arrays()
    cols = [catalog.index(n) for n in features]
    X = np.column_stack([arr.codes[:, cols], arr.action, arr.level]).astype(np.int64)
    cards = [len(catalog.features[c].values) for c in cols] + [max(len(arr.actions), 1), 4]
    lookup = [{v: k for k, v in enumerate(catalog.features[c].values)} for c in cols]
    lookup.append({a: k for k, a in enumerate(arr.actions)})
    lookup.append({l: l for l in range(4)})
    return X, arr.signal, cards, lookup


def _boost(X, y, cards, lookup, learning_rate: float, rounds: int) -> Ga2mModel:
    n, n_in = X.shape
    k = len(SIGNALS)
    masks = _level_masks()[X[:, -1]]
    Y = np.zeros((n, k))
    Y[np.arange(n), y] = 1.0
    prior = (Y.sum(axis=0) + 1.0) / (n + k)
    model = Ga2mModel(cards, lookup, np.log(prior), learning_rate=learning_rate, rounds=rounds)
    terms = [(i,) for i in range(n_in)] + list(itertools.combinations(range(n_in), 2))
    cells = {}
    for t in terms:
        if len(t) == 1:
            cells[t] = X[:, t[0]]
            model.singles[t[0]] = np.zeros((cards[t[0]], k))
        else:
            i, j = t
            cells[t] = X[:, i] * cards[j] + X[:, j]
            model.pairs[t] = np.zeros((cards[i], cards[j], k))
    F = model.logits(X)
    for _ in range(rounds):
        for t in terms:
            P = _softmax(F, masks)
            G = Y - P
            H = P * (1.0 - P)
            idx = cells[t]
            size = cards[t[0]] if len(t) == 1 else cards[t[0]] * cards[t[1]]
            step = np.zeros((size, k))
            for c in range(k):
                g = np.bincount(idx, weights=G[:, c], minlength=size)
                h = np.bincount(idx, weights=H[:, c], minlength=size)
                step[:, c] = learning_rate * g / (h + L2)
            if len(t) == 1:
                model.singles[t[0]] += step
            else:
                model.pairs[t] += step.reshape(cards[t[0]], cards[t[1]], k)
            F += step[idx]
    return model


def _log_loss(model: Ga2mModel, X, y) -> float:
    P = model.predict_codes(X)
    return float(-np.mean(np.log(np.clip(P[np.arange(len(y)), y], 1e-12, None))))


def fit_ga2m(
    dataset,
    features: Sequence[str],
    seed: int = 0,
    learning_rates: Sequence[float] = LEARNING_RATES,
    rounds: Sequence[int] = ROUNDS,
    holdout: float = 0.2,
) -> Ga2mModel:
    """Grid-search learning rate x rounds on a seeded holdout, then refit."""
    X, y, cards, lookup = _design(dataset, features)
    grid = [(lr, r) for lr in learning_rates for r in rounds]
    best = grid[0]
    n_hold = int(round(holdout * len(y)))
    if len(grid) > 1 and n_hold >= 5 and len(y) - n_hold >= 5:
        perm = np.random.default_rng(seed).permutation(len(y))
        hold, fit = perm[:n_hold], perm[n_hold:]
        scores = []
        for lr, r in grid:
            m = _boost(X[fit], y[fit], cards, lookup, lr, r)
            scores.append(_log_loss(m, X[hold], y[hold]))
        best = grid[int(np.argmin(scores))]
    return _boost(X, y, cards, lookup, *best)
