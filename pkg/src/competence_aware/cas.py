"""Competence-aware systems: the product SSP over (domain state, level).

A CAS augments a domain SSP with four levels of autonomy.  Each product
action (a, l') executes the domain action at level l', and its outcome
distribution blends the agent's own dynamics T, the human takeover dynamics
tau and the predicted feedback distribution lambda:

    l0: tau(s, a, .)
    l1: lambda(approve) T(s, a, .) + lambda(disapprove) [s' = s]
    l2: lambda(none) T(s, a, .) + lambda(override) tau(s, a, .)
    l3: T(s, a, .)

The successor level is always the level just operated at.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Hashable, Iterable, Mapping, Optional

import numpy as np

from .ssp import DEFAULT_TOLERANCE, Solution, Ssp, backup, solve


class Level(enum.IntEnum):
    L0 = 0  # no autonomy: the human performs the action
    L1 = 1  # verified: approval requested before acting
    L2 = 2  # supervised: the human may override
    L3 = 3  # unsupervised

    @property
    def label(self) -> str:
        return f"l{self.value}"

    @classmethod
    def parse(cls, text) -> "Level":
        if isinstance(text, Level):
            return text
        text = str(text).strip().lower()
        return cls(int(text[1:] if text.startswith("l") else text))


class Signal(enum.IntEnum):
    APPROVE = 0
    DISAPPROVE = 1
    OVERRIDE = 2
    NONE = 3

    @property
    def label(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, text) -> "Signal":
        if isinstance(text, Signal):
            return text
        return cls[str(text).strip().upper()]


LEVELS = tuple(Level)
SIGNALS = tuple(Signal)
ALL_LEVELS = frozenset(LEVELS)

# signals that can be observed at each level
LEGAL_SIGNALS = {
    Level.L0: (Signal.NONE,),
    Level.L1: (Signal.APPROVE, Signal.DISAPPROVE),
    Level.L2: (Signal.NONE, Signal.OVERRIDE),
    Level.L3: (Signal.NONE,),
}
FEEDBACK_LEVELS = (Level.L1, Level.L2)

DEFAULT_RHO = {Level.L0: 5.0, Level.L1: 2.0, Level.L2: 1.0, Level.L3: 0.0}
DEFAULT_SWITCH_COST = 0.5

SUPPORT_ATOL = 1e-9


class CasError(ValueError):
    pass


def legal_mask(level: Level) -> np.ndarray:
    mask = np.zeros(len(SIGNALS), dtype=bool)
    mask[list(LEGAL_SIGNALS[Level(level)])] = True
    return mask


def uniform_signals(level: Level) -> np.ndarray:
    mask = legal_mask(level)
    return mask / mask.sum()


def forced_none() -> np.ndarray:
    out = np.zeros(len(SIGNALS))
    out[Signal.NONE] = 1.0
    return out


def switch_cost(amount: float = DEFAULT_SWITCH_COST) -> Callable:
    """mu: zero when staying at the same level, `amount` otherwise."""

    def mu(s, prior, a, level) -> float:
        return 0.0 if prior is None or Level(prior) == Level(level) else amount

    mu.amount = amount
    return mu


def level_rho(table: Mapping[Level, float] | None = None) -> Callable:
    """rho that depends only on the level operated at."""
    table = {Level(k): float(v) for k, v in (table or DEFAULT_RHO).items()}

    def rho(s, prior, a, level) -> float:
        return table[Level(level)]

    rho.table = table
    return rho


@dataclass(frozen=True)
class AutonomyModel:
    """<L, kappa, mu>.  kappa maps (state, action) to allowed levels."""

    kappa: Mapping[tuple, frozenset] = field(default_factory=dict)
    mu: Callable = field(default_factory=switch_cost)
    default: frozenset = ALL_LEVELS
    levels: tuple = LEVELS

    def __post_init__(self):
        if tuple(self.levels) != LEVELS:
            raise CasError("exactly four levels l0..l3 are supported")
        for key, allowed in self.kappa.items():
            if not allowed:
                raise CasError(f"kappa{key!r} is empty")

    def allowed(self, s: Hashable, a: Hashable) -> frozenset:
        return self.kappa.get((s, a), self.default)

    def with_kappa(self, kappa: Mapping[tuple, frozenset]) -> "AutonomyModel":
        return replace(self, kappa=dict(kappa))


@dataclass(frozen=True)
class HumanFeedbackModel:
    """<Sigma, lambda, rho, tau>.

    `profile(s, prior, a, level)` returns a length-4 probability vector over
    SIGNALS; `tau(s, a)` returns a successor distribution or None to mean the
    human completes the action exactly as the agent would (tau = T).
    """

    profile: Callable
    rho: Callable = field(default_factory=level_rho)
    tau: Optional[Callable] = None
    signals: tuple = SIGNALS


@dataclass(frozen=True, eq=False)
class Cas:
    base: Ssp
    domain: Ssp
    kappa_ref: AutonomyModel
    aggregation_weights: tuple = (1.0, 1.0, 1.0)
    # per product pair: domain pair index, prior level, level
    pair_domain: np.ndarray = field(default=None, repr=False)
    pair_prior: np.ndarray = field(default=None, repr=False)
    pair_level: np.ndarray = field(default=None, repr=False)

    def state(self, s: Hashable, level) -> tuple:
        return (s, Level(level))


def product_action_order(domain: Ssp) -> tuple:
    # higher autonomy first inside each domain action so index ties favour it
    return tuple((a, l) for a in domain.actions for l in reversed(LEVELS))


def check_support(dist: np.ndarray, level: Level, where) -> np.ndarray:
    dist = np.asarray(dist, dtype=float)
    if dist.shape != (len(SIGNALS),):
        raise CasError(f"feedback distribution at {where!r} must have {len(SIGNALS)} entries")
    if np.any(dist < -SUPPORT_ATOL) or abs(dist.sum() - 1.0) > SUPPORT_ATOL:
        raise CasError(f"feedback distribution at {where!r} is not a probability vector")
    if np.any(dist[~legal_mask(level)] > SUPPORT_ATOL):
        raise CasError(f"feedback at {where!r} puts mass on signals illegal at {Level(level).label}")
    return dist


def _ranges(lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    """Concatenation of arange(lo[i], hi[i]) for all i."""
    lengths = hi - lo
    total = int(lengths.sum())
    if total == 0:
        return np.zeros(0, dtype=np.int64)
    starts = np.repeat(lo - np.concatenate(([0], np.cumsum(lengths)[:-1])), lengths)
    return starts + np.arange(total)


def _level_costs(fn, fallback, triples, domain):
    """Vectorised mu/rho when the callable is one of the table helpers."""
    p_arr, prior_arr, lvl_arr = triples
    table = getattr(fn, "table", None)
    if table is not None:
        lookup = np.array([table[l] for l in LEVELS])
        return lookup[lvl_arr]
    amount = getattr(fn, "amount", None)
    if amount is not None:
        return np.where(prior_arr == lvl_arr, 0.0, float(amount))
    out = np.empty(len(p_arr))
    for i, (p, prior, lvl) in enumerate(zip(p_arr, prior_arr, lvl_arr)):
        s = domain.states[domain.pair_state[p]]
        a = domain.actions[domain.pair_action[p]]
        out[i] = float(fallback(s, Level(int(prior)), a, Level(int(lvl))))
    return out


def build_cas(
    domain: Ssp,
    am: AutonomyModel,
    hm: HumanFeedbackModel,
    weights: tuple = (1.0, 1.0, 1.0),
    start_level: Level = Level.L3,
    tau_equals_t: bool | None = None,
) -> Cas:
    """Compose the product SSP from domain, autonomy and feedback models.

    Product state (s, l) has index s * 4 + l and product action (a, l') has
    index a * 4 + (3 - l'), so within a domain action the more autonomous
    levels come first.
    """
    w_c, w_mu, w_rho = (float(w) for w in weights)
    if min(w_c, w_mu, w_rho) < 0:
        raise CasError("aggregation weights must be nonnegative")
    n_levels = len(LEVELS)
    states = tuple((s, l) for s in domain.states for l in LEVELS)
    actions = product_action_order(domain)
    goal = domain.state_index[domain.goal]
    tmat = domain.transition.tocsr()
    if tau_equals_t is None:
        tau_equals_t = hm.tau is None

    # one triple (domain pair, prior level, level) per product pair
    t_pair, t_prior, t_level = [], [], []
    t_mult, h_mult, stay_mult = [], [], []
    for p in range(len(domain.pair_state)):
        si = int(domain.pair_state[p])
        if si == goal:
            for prior in range(n_levels):
                t_pair.append(p)
                t_prior.append(prior)
                t_level.append(prior)
                t_mult.append(0.0)
                h_mult.append(0.0)
                stay_mult.append(1.0)
            continue
        s, a = domain.states[si], domain.actions[domain.pair_action[p]]
        allowed = sorted((Level(l) for l in am.allowed(s, a)), reverse=True)
        if not allowed:
            raise CasError(f"kappa({s!r}, {a!r}) is empty")
        for prior in LEVELS:
            for lvl in allowed:
                t_pair.append(p)
                t_prior.append(int(prior))
                t_level.append(int(lvl))
                if lvl == Level.L3:
                    t_mult.append(1.0), h_mult.append(0.0), stay_mult.append(0.0)
                elif lvl == Level.L0:
                    t_mult.append(0.0), h_mult.append(1.0), stay_mult.append(0.0)
                else:
                    lam = check_support(hm.profile(s, prior, a, lvl), lvl, (s, prior.label, a, lvl.label))
                    if lvl == Level.L1:
                        t_mult.append(lam[Signal.APPROVE]), h_mult.append(0.0)
                        stay_mult.append(lam[Signal.DISAPPROVE])
                    else:
                        t_mult.append(lam[Signal.NONE]), h_mult.append(lam[Signal.OVERRIDE])
                        stay_mult.append(0.0)

    t_pair = np.asarray(t_pair, dtype=np.int64)
    t_prior = np.asarray(t_prior, dtype=np.int64)
    t_level = np.asarray(t_level, dtype=np.int64)
    t_mult = np.asarray(t_mult, dtype=float)
    h_mult = np.asarray(h_mult, dtype=float)
    stay_mult = np.asarray(stay_mult, dtype=float)
    t_state = domain.pair_state[t_pair]
    n = len(t_pair)
    is_goal = t_state == goal

    rows, cols, probs = [], [], []

    def add_matrix(matrix, mult):
        sel = np.flatnonzero(mult > 0)
        if not len(sel):
            return
        lo, hi = matrix.indptr[t_pair[sel]], matrix.indptr[t_pair[sel] + 1]
        gather = _ranges(lo, hi)
        owner = np.repeat(sel, hi - lo)
        rows.append(owner)
        cols.append(matrix.indices[gather].astype(np.int64) * n_levels + t_level[owner])
        probs.append(matrix.data[gather] * mult[owner])

    if tau_equals_t:
        add_matrix(tmat, t_mult + h_mult)
    else:
        add_matrix(tmat, t_mult)
        add_matrix(_tau_matrix(domain, hm.tau, tmat), h_mult)
    sel = np.flatnonzero(stay_mult > 0)
    rows.append(sel)
    cols.append(t_state[sel] * n_levels + t_level[sel])
    probs.append(stay_mult[sel])

    triples = (t_pair, t_prior, t_level)
    mu = _level_costs(am.mu, am.mu, triples, domain)
    rho = _level_costs(hm.rho, hm.rho, triples, domain)
    costs = w_c * domain.cost[t_pair] + w_mu * mu + w_rho * rho
    costs[is_goal] = 0.0
    if np.any(costs < 0):
        i = int(np.flatnonzero(costs < 0)[0])
        s = domain.states[t_state[i]]
        raise CasError(f"aggregated cost at ({s!r}, l{t_prior[i]}, l{t_level[i]}) is negative")

    pair_state = t_state * n_levels + t_prior
    pair_action = domain.pair_action[t_pair] * n_levels + (3 - t_level)
    base = Ssp.from_arrays(
        states,
        actions,
        pair_state,
        pair_action,
        np.concatenate(rows),
        np.concatenate(cols),
        np.concatenate(probs),
        costs,
        start=(domain.start, Level(start_level)),
        goal=(domain.goal, Level(start_level)),
        meta={"domain": domain},
    )
    order = np.lexsort((pair_action, pair_state))
    return Cas(
        base=base,
        domain=domain,
        kappa_ref=am,
        aggregation_weights=(w_c, w_mu, w_rho),
        pair_domain=t_pair[order],
        pair_prior=t_prior[order],
        pair_level=t_level[order],
    )


def _tau_matrix(domain: Ssp, tau: Callable, tmat):
    """Human takeover dynamics as a CSR matrix aligned with domain pairs."""
    rows, cols, probs = [], [], []
    for p in range(len(domain.pair_state)):
        s, a = domain.states[domain.pair_state[p]], domain.actions[domain.pair_action[p]]
        h = tau(s, a)
        if h is None:
            lo, hi = tmat.indptr[p], tmat.indptr[p + 1]
            rows.extend([p] * (hi - lo))
            cols.extend(tmat.indices[lo:hi].tolist())
            probs.extend(tmat.data[lo:hi].tolist())
            continue
        for s2, prob in h.items():
            rows.append(p)
            cols.append(domain.state_index[s2])
            probs.append(float(prob))
    import scipy.sparse as sp

    return sp.csr_matrix((probs, (rows, cols)), shape=tmat.shape)


def solve_cas(cas: Cas, tolerance: float = DEFAULT_TOLERANCE, **kwargs) -> Solution:
    return solve(cas.base, tolerance, **kwargs)


@dataclass(frozen=True)
class CompetenceMap:
    chi: dict

    def __getitem__(self, key) -> Level:
        return self.chi[key]

    def get(self, key, default=None):
        return self.chi.get(key, default)

    def __len__(self) -> int:
        return len(self.chi)


def greedy_levels(cas: Cas, values: np.ndarray, tie_tolerance: float = 1e-9) -> dict:
    """For every (product state, domain action): the least-cost allowed level.

    Ties go to the more autonomous level.
    """
    q = backup(cas.base, values)
    base, domain = cas.base, cas.domain
    groups: dict = {}
    for p in range(len(q)):
        ps = base.states[base.pair_state[p]]
        if ps[0] == domain.goal:
            continue
        a = domain.actions[domain.pair_action[cas.pair_domain[p]]]
        groups.setdefault((ps, a), []).append((float(q[p]), Level(int(cas.pair_level[p]))))
    out = {}
    for key, items in groups.items():
        qmin = min(v for v, _ in items)
        out[key] = max(lvl for v, lvl in items if v <= qmin + tie_tolerance)
    return out


def compute_competence(
    domain: Ssp,
    oracle: HumanFeedbackModel,
    am: AutonomyModel | None = None,
    weights: tuple = (1.0, 1.0, 1.0),
    tolerance: float = DEFAULT_TOLERANCE,
) -> CompetenceMap:
    """chi(s_bar, a) = argmin_l Q(s_bar, (a, l); lambda_H).

    With `am` omitted every level is allowed everywhere.
    """
    if am is None:
        am = AutonomyModel()
    cas = build_cas(domain, am, oracle, weights)
    sol = solve_cas(cas, tolerance)
    return CompetenceMap(greedy_levels(cas, sol.value_array, tie_tolerance=tolerance))


def level_optimality(policy: Mapping, chi: CompetenceMap | Mapping, subset: Iterable) -> Optional[float]:
    """Fraction of `subset` where the policy's level equals the competence.

    `policy` maps product state -> (domain action, level).  Returns None for
    an empty subset.
    """
    subset = list(subset)
    if not subset:
        return None
    hits = 0
    for sbar in subset:
        a, lvl = policy[sbar]
        if chi[(sbar, a)] == Level(lvl):
            hits += 1
    return hits / len(subset)


def policy_levels(cas: Cas, solution: Solution) -> dict:
    """product state -> (domain action, level) for a solved CAS."""
    out = {}
    for ps, act in solution.policy.items():
        out[ps] = (act[0], Level(act[1]))
    return out


# -- autonomy profile updates ------------------------------------------------

ESCALATION_SIGNAL = {Level.L1: Signal.APPROVE, Level.L2: Signal.NONE}
NEGATIVE_SIGNAL = {Level.L1: Signal.DISAPPROVE, Level.L2: Signal.OVERRIDE}


def _rejected(profile, visits, s, a, lvl, m, threshold) -> bool:
    if lvl not in NEGATIVE_SIGNAL or visits(s, a, lvl) < m:
        return False
    return profile(s, None, a, lvl)[NEGATIVE_SIGNAL[lvl]] >= threshold


def update_autonomy_profile(
    am: AutonomyModel,
    profile: Callable,
    visit_counts: Mapping | Callable,
    m: int = 30,
    threshold: float = 0.9,
    keys: Iterable[tuple] | None = None,
) -> AutonomyModel:
    """One escalation/de-escalation step per (state, action) in kappa.

    Only pairs with at least `m` visits at their current maximum level move.
    l0 -> l1 is unconditional; l1 -> l2 needs P(approve) >= threshold and
    l2 -> l3 needs P(none) >= threshold.  The current maximum is dropped when
    its negative signal reaches the threshold.  A level whose own feedback
    already rejects it is not re-added.
    """
    visits = visit_counts if callable(visit_counts) else (lambda s, a, l: visit_counts.get((s, a, l), 0))
    kappa = dict(am.kappa)
    for key in list(keys if keys is not None else kappa):
        s, a = key
        allowed = set(kappa.get(key, am.default))
        top = max(allowed)
        if top == Level.L3 or visits(s, a, top) < m:
            continue
        if top == Level.L0:
            if not _rejected(profile, visits, s, a, Level.L1, m, threshold):
                allowed.add(Level.L1)
        else:
            dist = profile(s, None, a, top)
            if dist[NEGATIVE_SIGNAL[top]] >= threshold:
                if len(allowed) > 1:
                    allowed.discard(top)
            elif dist[ESCALATION_SIGNAL[top]] >= threshold:
                nxt = Level(top + 1)
                if not _rejected(profile, visits, s, a, nxt, m, threshold):
                    allowed.add(nxt)
        kappa[key] = frozenset(allowed)
    return am.with_kappa(kappa)


def autonomy_fixed_point(
    am: AutonomyModel,
    profile: Callable,
    keys: Iterable[tuple],
    m: int = 30,
    threshold: float = 0.9,
    max_rounds: int = 16,
) -> AutonomyModel:
    """Apply the update rule with unlimited visits until kappa stops changing.

    With the human's true feedback distribution as `profile` this gives the
    levels the human would eventually sanction for each key.
    """
    keys = list(keys)
    for _ in range(max_rounds):
        nxt = update_autonomy_profile(am, profile, lambda s, a, l: m, m, threshold, keys)
        if all(nxt.allowed(*k) == am.allowed(*k) for k in keys):
            return nxt
        am = nxt
    return am
