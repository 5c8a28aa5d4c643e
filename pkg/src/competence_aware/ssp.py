"""Finite stochastic shortest path models and a value-iteration solver.

Models are stored sparsely: every available (state, action) pair is one row
of a CSR transition matrix, and pairs are laid out grouped by state in
action-index order.  That layout lets the Bellman backup run as one sparse
matrix-vector product followed by a segmented minimum.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Any, Hashable, Iterable, Mapping, Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

DEFAULT_TOLERANCE = 1e-6
DEFAULT_MAX_ITERATIONS = 100_000
# sweeps before a stalled value iteration jumps to exact policy values
STALL_SWEEPS = 5_000
MAX_POLICY_JUMPS = 100
ROW_SUM_ATOL = 1e-9


class SolverError(RuntimeError):
    """Raised when value iteration or policy evaluation does not converge."""


class ImproperPolicyError(SolverError):
    """Raised when a policy never reaches the goal from some state."""

    def __init__(self, message: str, state: Hashable):
        super().__init__(message)
        self.state = state


@dataclass(frozen=True)
class Violation:
    kind: str
    state: Hashable = None
    action: Hashable = None
    detail: str = ""

    def __str__(self) -> str:
        where = ""
        if self.state is not None:
            where = f" at state {self.state!r}"
        if self.action is not None:
            where += f" action {self.action!r}"
        return f"{self.kind}{where}: {self.detail}" if self.detail else f"{self.kind}{where}"


@dataclass(frozen=True, eq=False)
class Ssp:
    """An immutable SSP <S, A, T, C, s0, sg> in pair-major sparse form."""

    states: tuple
    actions: tuple
    pair_state: np.ndarray
    pair_action: np.ndarray
    transition: sp.csr_matrix
    cost: np.ndarray
    start: Hashable
    goal: Hashable
    meta: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_tables(
        cls,
        states: Iterable[Hashable],
        actions: Iterable[Hashable],
        available: Mapping[Hashable, Iterable[Hashable]],
        transition: Mapping[tuple, Mapping[Hashable, float]],
        cost: Mapping[tuple, float],
        start: Hashable,
        goal: Hashable,
    ) -> "Ssp":
        states = tuple(states)
        actions = tuple(actions)
        s_index = {s: i for i, s in enumerate(states)}
        a_index = {a: i for i, a in enumerate(actions)}
        pair_state, pair_action, rows, cols, probs, costs = [], [], [], [], [], []
        for s in states:
            acts = sorted(available.get(s, ()), key=a_index.__getitem__)
            for a in acts:
                row = len(pair_state)
                pair_state.append(s_index[s])
                pair_action.append(a_index[a])
                for s2, p in transition.get((s, a), {}).items():
                    if p == 0:
                        continue
                    if s2 not in s_index:
                        raise KeyError(f"successor {s2!r} of ({s!r}, {a!r}) is not a state")
                    rows.append(row)
                    cols.append(s_index[s2])
                    probs.append(float(p))
                costs.append(float(cost.get((s, a), 0.0)))
        return cls.from_arrays(
            states, actions, pair_state, pair_action, rows, cols, probs, costs, start, goal
        )

    @classmethod
    def from_arrays(
        cls,
        states: Sequence[Hashable],
        actions: Sequence[Hashable],
        pair_state,
        pair_action,
        rows,
        cols,
        probs,
        costs,
        start: Hashable,
        goal: Hashable,
        meta: dict | None = None,
    ) -> "Ssp":
        pair_state = np.asarray(pair_state, dtype=np.int64)
        pair_action = np.asarray(pair_action, dtype=np.int64)
        n_pairs = len(pair_state)
        order = np.lexsort((pair_action, pair_state))
        if not np.array_equal(order, np.arange(n_pairs)):
            # pairs must be grouped by state, actions ascending
            inverse = np.empty_like(order)
            inverse[order] = np.arange(n_pairs)
            pair_state = pair_state[order]
            pair_action = pair_action[order]
            costs = np.asarray(costs, dtype=float)[order]
            rows = inverse[np.asarray(rows, dtype=np.int64)]
        matrix = sp.csr_matrix(
            (np.asarray(probs, dtype=float), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
            shape=(n_pairs, len(states)),
        )
        matrix.sum_duplicates()
        return cls(
            states=tuple(states),
            actions=tuple(actions),
            pair_state=pair_state,
            pair_action=pair_action,
            transition=matrix,
            cost=np.asarray(costs, dtype=float),
            start=start,
            goal=goal,
            meta=dict(meta or {}),
        )

    @cached_property
    def state_index(self) -> dict:
        return {s: i for i, s in enumerate(self.states)}

    @cached_property
    def action_index(self) -> dict:
        return {a: i for i, a in enumerate(self.actions)}

    @cached_property
    def pair_offsets(self) -> np.ndarray:
        """Start offset of each state's pair segment (length n_states + 1)."""
        counts = np.bincount(self.pair_state, minlength=len(self.states))
        return np.concatenate(([0], np.cumsum(counts)))

    @cached_property
    def _pair_lookup(self) -> dict:
        return {
            (int(s), int(a)): i for i, (s, a) in enumerate(zip(self.pair_state, self.pair_action))
        }

    @property
    def n_states(self) -> int:
        return len(self.states)

    def pair(self, s: Hashable, a: Hashable) -> int:
        key = (self.state_index[s], self.action_index[a])
        try:
            return self._pair_lookup[key]
        except KeyError:
            raise ValueError(f"action {a!r} is not available in state {s!r}") from None

    def available(self, s: Hashable) -> tuple:
        i = self.state_index[s]
        lo, hi = self.pair_offsets[i], self.pair_offsets[i + 1]
        return tuple(self.actions[j] for j in self.pair_action[lo:hi])

    def successors(self, s: Hashable, a: Hashable) -> dict:
        row = self.transition.getrow(self.pair(s, a))
        return {self.states[j]: float(p) for j, p in zip(row.indices, row.data)}

    def step_cost(self, s: Hashable, a: Hashable) -> float:
        return float(self.cost[self.pair(s, a)])


@dataclass(frozen=True, eq=False)
class Solution:
    model: Ssp
    value_array: np.ndarray
    policy_pairs: np.ndarray
    residual: float
    iterations: int

    @property
    def values(self) -> dict:
        return dict(zip(self.model.states, self.value_array.tolist()))

    @property
    def policy(self) -> dict:
        acts = self.model.actions
        return {
            s: acts[self.model.pair_action[p]] for s, p in zip(self.model.states, self.policy_pairs)
        }

    def value(self, s: Hashable) -> float:
        return float(self.value_array[self.model.state_index[s]])

    def action(self, s: Hashable) -> Hashable:
        p = self.policy_pairs[self.model.state_index[s]]
        return self.model.actions[self.model.pair_action[p]]


def validate_ssp(model: Ssp) -> list[Violation]:
    """Check the SSP invariants; returns one Violation per problem found."""
    out: list[Violation] = []
    idx = model.state_index
    if model.start not in idx:
        out.append(Violation("start-missing", model.start, detail="start is not a state"))
    if model.goal not in idx:
        out.append(Violation("goal-missing", model.goal, detail="goal is not a state"))
    counts = np.diff(model.pair_offsets)
    for i in np.flatnonzero(counts == 0):
        out.append(Violation("no-actions", model.states[i], detail="no available actions"))
    sums = np.asarray(model.transition.sum(axis=1)).ravel()
    negative_prob = np.zeros(len(sums), dtype=bool)
    if model.transition.nnz:
        rows = np.repeat(np.arange(model.transition.shape[0]), np.diff(model.transition.indptr))
        negative_prob[rows[model.transition.data < 0]] = True
    for p in np.flatnonzero((np.abs(sums - 1.0) > ROW_SUM_ATOL) | negative_prob):
        s, a = model.states[model.pair_state[p]], model.actions[model.pair_action[p]]
        out.append(Violation("row-sum", s, a, f"transition sums to {sums[p]:.12g}"))
    for p in np.flatnonzero(model.cost < 0):
        s, a = model.states[model.pair_state[p]], model.actions[model.pair_action[p]]
        out.append(Violation("negative-cost", s, a, f"cost {model.cost[p]:g}"))
    if model.goal in idx:
        g = idx[model.goal]
        for p in range(model.pair_offsets[g], model.pair_offsets[g + 1]):
            a = model.actions[model.pair_action[p]]
            if model.cost[p] != 0:
                out.append(Violation("goal-cost", model.goal, a, f"cost {model.cost[p]:g}"))
            row = model.transition.getrow(p)
            stay = dict(zip(row.indices.tolist(), row.data.tolist())).get(g, 0.0)
            if abs(stay - 1.0) > ROW_SUM_ATOL:
                out.append(Violation("goal-absorbing", model.goal, a, f"self-loop probability {stay:g}"))
    return out


def _greedy(model: Ssp, q: np.ndarray, tie_tolerance: float) -> tuple[np.ndarray, np.ndarray]:
    offsets = model.pair_offsets[:-1]
    best = np.minimum.reduceat(q, offsets)
    per_pair_best = np.repeat(best, np.diff(model.pair_offsets))
    candidates = np.where(q <= per_pair_best + tie_tolerance, np.arange(len(q)), len(q))
    return best, np.minimum.reduceat(candidates, offsets)


def backup(model: Ssp, values: np.ndarray) -> np.ndarray:
    """Q values for every available pair: C + T @ V."""
    return model.cost + model.transition @ values


def _without_self_loops(model: Ssp):
    """Equivalent operator with every self-loop folded into its pair.

    For a pair that returns to its own state with probability p < 1,
    Q = (C + sum_{s' != s} T V) / (1 - p) has the same fixed point as the
    plain backup but contracts faster when p is close to 1.  Returns None
    when some non-goal pair is a pure self-loop.
    """
    matrix = model.transition.tocoo()
    goal = model.state_index[model.goal]
    on_diag = (matrix.col == model.pair_state[matrix.row]) & (matrix.col != goal)
    if not np.any(on_diag):
        return None
    stay = np.zeros(len(model.cost))
    np.add.at(stay, matrix.row[on_diag], matrix.data[on_diag])
    if np.any(stay >= 1.0 - 1e-12):
        return None
    scale = 1.0 / (1.0 - stay)
    keep = ~on_diag
    folded = sp.csr_matrix(
        (matrix.data[keep] * scale[matrix.row[keep]], (matrix.row[keep], matrix.col[keep])),
        shape=matrix.shape,
    )
    return model.cost * scale, folded


def _cannot_reach_goal(model: Ssp, pairs: np.ndarray) -> np.ndarray:
    """Indices of states from which the fixed policy never reaches the goal."""
    matrix = model.transition[pairs].tocsc()
    reach = np.zeros(model.n_states, dtype=bool)
    reach[model.state_index[model.goal]] = True
    while True:
        grown = reach | (matrix @ reach.astype(float) > 0)
        if np.array_equal(grown, reach):
            return np.flatnonzero(~reach)
        reach = grown


def _policy_values(model: Ssp, pairs: np.ndarray) -> np.ndarray | None:
    """Exact cost-to-goal of a fixed policy, or None if it is improper."""
    if len(_cannot_reach_goal(model, pairs)):
        return None
    keep = np.arange(model.n_states) != model.state_index[model.goal]
    sub = model.transition[pairs][keep][:, keep]
    system = (sp.identity(sub.shape[0], format="csc") - sub).tocsc()
    x = spla.spsolve(system, model.cost[pairs][keep])
    v = np.zeros(model.n_states)
    v[keep] = np.atleast_1d(x)
    return v if np.all(np.isfinite(v)) else None


def _policy_jump(model: Ssp, v: np.ndarray, tie_tolerance: float) -> np.ndarray | None:
    """Policy iteration from the greedy policy of `v`; None if it turns improper."""
    pairs = None
    for _ in range(MAX_POLICY_JUMPS):
        _, greedy = _greedy(model, backup(model, v), tie_tolerance)
        if pairs is not None and np.array_equal(greedy, pairs):
            break
        pairs = greedy
        v = _policy_values(model, pairs)
        if v is None:
            return None
    return v


def _iterate(cost, matrix, offsets, v, tolerance, max_iterations):
    residual = np.inf
    for it in range(1, max_iterations + 1):
        new = np.minimum.reduceat(cost + matrix @ v, offsets)
        residual = float(np.max(np.abs(new - v)))
        v = new
        if residual <= tolerance:
            return v, residual, it
    return v, residual, None


def solve(
    model: Ssp,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
    initial: np.ndarray | None = None,
    tie_tolerance: float | None = None,
    fold_self_loops: bool = True,
) -> Solution:
    """Value iteration to the Bellman fixed point (max-norm residual stop).

    Greedy ties resolve to the lowest action index; `tie_tolerance` defaults
    to the convergence tolerance so near-equal backups count as ties.  With
    `fold_self_loops` the iteration first runs on the self-loop-free
    equivalent operator and then finishes on the plain backup, so the stop
    test always applies to the original model.
    """
    if tolerance <= 0:
        raise ValueError("tolerance must be positive")
    if tie_tolerance is None:
        tie_tolerance = tolerance
    offsets = model.pair_offsets[:-1]
    if np.any(np.diff(model.pair_offsets) == 0):
        raise ValueError("every state needs at least one available action")
    v = np.zeros(model.n_states) if initial is None else np.array(initial, dtype=float)
    goal = model.state_index[model.goal]
    v[goal] = 0.0
    used = 0
    folded = _without_self_loops(model) if fold_self_loops else None
    if folded is not None:
        v_fast, _, it = _iterate(*folded, offsets, v, tolerance * 1e-3, max_iterations)
        if it is not None and np.all(np.isfinite(v_fast)):
            v, used = v_fast, it
    budget = max_iterations
    first = min(budget, STALL_SWEEPS)
    v, residual, it = _iterate(model.cost, model.transition, offsets, v, tolerance, first)
    if it is None and budget > first:
        # slow contraction (a nearly closed loop): evaluate the greedy policy
        # exactly, improve it, and let the sweeps confirm the fixed point
        used += first
        jumped = _policy_jump(model, v, tie_tolerance)
        if jumped is not None:
            v = jumped
        v, residual, it = _iterate(model.cost, model.transition, offsets, v, tolerance, budget - first)
    if it is None:
        worst = model.states[int(np.argmax(np.abs(v)))]
        raise SolverError(
            f"value iteration did not converge in {max_iterations} iterations "
            f"(residual {residual:.3g}); goal likely unreachable from {worst!r}"
        )
    _, policy = _greedy(model, backup(model, v), tie_tolerance)
    return Solution(model, v, policy, residual, used + it)


def q_value(model: Ssp, values, s: Hashable, a: Hashable) -> float:
    """One-step Bellman backup C(s,a) + sum_s' T(s,a,s') V(s')."""
    p = model.pair(s, a)
    row = model.transition.getrow(p)
    if isinstance(values, Mapping):
        succ = sum(prob * values[model.states[j]] for j, prob in zip(row.indices, row.data))
    else:
        v = np.asarray(values, dtype=float)
        succ = float(row.data @ v[row.indices])
    return float(model.cost[p] + succ)


def policy_pairs(model: Ssp, policy: Mapping[Hashable, Hashable]) -> np.ndarray:
    return np.array([model.pair(s, policy[s]) for s in model.states], dtype=np.int64)


def evaluate_policy(
    model: Ssp,
    policy: Mapping[Hashable, Hashable] | np.ndarray,
    tolerance: float = DEFAULT_TOLERANCE,
    max_iterations: int = DEFAULT_MAX_ITERATIONS,
) -> dict:
    """Expected cost-to-goal of a fixed policy (state -> value)."""
    pairs = policy if isinstance(policy, np.ndarray) else policy_pairs(model, policy)
    matrix = model.transition[pairs]
    cost = model.cost[pairs]
    v = np.zeros(model.n_states)
    for sweep in range(max_iterations):
        new = cost + matrix @ v
        delta = np.abs(new - v)
        v = new
        if delta.max() <= tolerance:
            return dict(zip(model.states, v.tolist()))
        if sweep + 1 == STALL_SWEEPS:
            stuck = _cannot_reach_goal(model, pairs)
            if len(stuck):
                bad = model.states[int(stuck[0])]
                raise ImproperPolicyError(f"policy never reaches the goal from {bad!r}", bad)
            v = _policy_values(model, pairs)
    bad = model.states[int(np.argmax(delta))]
    raise ImproperPolicyError(f"policy evaluation did not converge; {bad!r} never reaches the goal", bad)


def describe(model: Ssp) -> dict[str, Any]:
    return {
        "states": model.n_states,
        "actions": len(model.actions),
        "pairs": int(len(model.pair_state)),
        "nonzeros": int(model.transition.nnz),
    }
