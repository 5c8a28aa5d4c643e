"""Episode and trial orchestration for standard vs modified CAS on the campus.

A trial keeps one learning agent alive across episodes.  After each episode
the feedback profile is retrained, the autonomy profile takes one update
step, and (for the modified CAS) one feature-discovery step runs.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Iterable, Mapping, Optional, Sequence

import numpy as np
import yaml

from . import campus
from .campus import (
    CROSS,
    MOVES,
    OPEN_DOOR,
    CampusMap,
    CampusWorld,
    OracleAuthority,
    Task,
    as_context,
    build_domain_ssp,
    campus_catalog,
    load_map,
    obstacle_assignment,
    oracle_feedback,
    oracle_transition,
    project,
    sample_task,
)
from .cas import (
    DEFAULT_RHO,
    DEFAULT_SWITCH_COST,
    LEVELS,
    AutonomyModel,
    HumanFeedbackModel,
    Level,
    Signal,
    autonomy_fixed_point,
    build_cas,
    level_rho,
    solve_cas,
    switch_cost,
    update_autonomy_profile,
)
from .feedback import FeedbackDataset, FeedbackRecord, train_profile, uniform_profile
from .refinement import RefinementParams, format_event, refine_step

log = logging.getLogger(__name__)

OBSTACLE_INITIAL = frozenset({Level.L0, Level.L1})
FREE_LEVELS = frozenset({Level.L3})
COST_WINDOW = 10


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    map: str = ""
    mode: str = "random"
    episodes: int = 300
    trials: int = 10
    refinement: bool = True
    theta: float = 0.95
    m: int = 30
    k: int = 1
    alpha: float = 0.05
    split_ratio: float = 0.75
    epsilon: float = 0.05
    kappa_threshold: float = 0.9
    max_cardinality: int = 2
    estimator: str = "frequency"
    weights: tuple = (1.0, 1.0, 1.0)
    switch_cost: float = DEFAULT_SWITCH_COST
    rho: tuple = tuple(DEFAULT_RHO[l] for l in LEVELS)
    seed: int = 0
    horizon: int = 500
    start: str = ""
    goal: str = ""
    initial_active: tuple = campus.INITIAL_ACTIVE
    rules: Optional[dict] = None

    def __post_init__(self):
        for name in ("weights", "rho", "initial_active"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        self.validate()

    def validate(self) -> None:
        problems = []
        if self.mode not in ("fixed", "random"):
            problems.append(f"mode must be fixed or random, got {self.mode!r}")
        if self.trials < 1:
            problems.append("trials must be at least 1")
        if self.episodes < 0:
            problems.append("episodes must be nonnegative")
        if not 0.25 < self.theta < 1:
            problems.append("theta must lie in (0.25, 1)")
        if self.m < 1:
            problems.append("m must be at least 1")
        if self.k < 1:
            problems.append("k must be at least 1")
        if not 0 <= self.alpha <= 1:
            problems.append("alpha must lie in [0, 1]")
        if not 0 < self.split_ratio < 1:
            problems.append("split_ratio must lie in (0, 1)")
        if not 0 <= self.epsilon <= 1:
            problems.append("epsilon must lie in [0, 1]")
        if not 0.5 < self.kappa_threshold <= 1:
            problems.append("kappa_threshold must lie in (0.5, 1]")
        if self.max_cardinality < 1:
            problems.append("max_cardinality must be at least 1")
        if self.estimator not in ("frequency", "ga2m"):
            problems.append("estimator must be frequency or ga2m")
        if len(self.weights) != 3 or min(self.weights) < 0:
            problems.append("weights must be three nonnegative numbers")
        if len(self.rho) != 4 or min(self.rho) < 0:
            problems.append("rho must be four nonnegative numbers (l0..l3)")
        if self.switch_cost < 0:
            problems.append("switch_cost must be nonnegative")
        if self.horizon < 1:
            problems.append("horizon must be at least 1")
        unknown = set(self.initial_active) - set(campus_catalog().names)
        if unknown:
            problems.append(f"unknown initial_active features {sorted(unknown)}")
        if problems:
            raise ConfigError("; ".join(problems))

    @classmethod
    def from_mapping(cls, data: Mapping) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = dict(data)
        if isinstance(data.get("rho"), Mapping):
            table = {Level.parse(k): float(v) for k, v in data["rho"].items()}
            data["rho"] = tuple(table.get(l, DEFAULT_RHO[l]) for l in LEVELS)
        if isinstance(data.get("weights"), Mapping):
            w = data["weights"]
            data["weights"] = (w.get("cost", 1.0), w.get("autonomy", 1.0), w.get("human", 1.0))
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = yaml.safe_load(Path(path).read_text()) or {}
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror or exc}") from None
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        if not isinstance(data, Mapping):
            raise ConfigError(f"{path}: expected a key-value mapping")
        return cls.from_mapping(data)

    @property
    def map_path(self) -> Path:
        return Path(self.map) if self.map else campus.default_map_path()

    @property
    def rho_table(self) -> dict:
        return dict(zip(LEVELS, self.rho))

    @property
    def refinement_params(self) -> RefinementParams:
        return RefinementParams(
            theta=self.theta,
            m=self.m,
            k=self.k,
            alpha=self.alpha,
            split_ratio=self.split_ratio,
            max_cardinality=self.max_cardinality,
            estimator=self.estimator,
        )

    def authority(self) -> OracleAuthority:
        return OracleAuthority(campus.parse_rules(self.rules), self.epsilon)

    def fixed_task(self, cmap: CampusMap) -> Optional[tuple]:
        if self.start or self.goal:
            return (self.start, self.goal)
        return None


# -- local traversal model used for the level-optimality metric ----------------


def traversal_levels(
    allowed: Iterable[Level],
    approve: float,
    rho: Mapping,
    switch: float,
    weights: Sequence[float] = (1.0, 1.0, 1.0),
    tie_tolerance: float = 1e-9,
) -> dict:
    """Least-cost level per prior level for crossing one obstacle.

    Closed-form solution of the CAS over a three-state domain: standing at
    the obstacle, standing past it, and the goal one unit step further.  The
    human takeover completes the crossing, so only the approval probability
    at l1 matters; disapproval leaves the robot in place at prior level l1.
    """
    wc, wm, wr = weights
    allowed = sorted({Level(l) for l in allowed})

    def step(prior, lvl):
        return wc + wm * (0.0 if prior == lvl else switch) + wr * rho[lvl]

    past = {l: step(l, Level.L3) for l in LEVELS}
    deny = 1.0 - approve

    def q(prior, lvl, stay_value):
        if lvl == Level.L1:
            return step(prior, lvl) + approve * past[lvl] + deny * stay_value
        return step(prior, lvl) + past[lvl]

    others = [q(Level.L1, l, 0.0) for l in allowed if l != Level.L1]
    stay = min(others) if others else math.inf
    if Level.L1 in allowed and deny < 1.0:
        stay = min(stay, (step(Level.L1, Level.L1) + approve * past[Level.L1]) / (1.0 - deny))
    out = {}
    for prior in LEVELS:
        qs = {l: q(prior, l, stay) for l in allowed}
        best = min(qs.values())
        out[prior] = max(l for l, v in qs.items() if v <= best + tie_tolerance)
    return out


def obstacle_states(cmap: CampusMap) -> list:
    """Every (approach cell, dynamic value, prior level) on the map."""
    out = []
    for o in cmap.obstacles:
        for side in o.sides:
            for dyn in campus.FEATURE_VALUES[o.dynamic]:
                if not campus.blocks(o, dyn):
                    continue
                for prior in LEVELS:
                    out.append((side, dyn, prior))
    return out


class Competence:
    """Least-cost levels under the human's true feedback and sanctioned levels."""

    def __init__(self, cmap: CampusMap, authority: OracleAuthority, config: ExperimentConfig):
        self.map = cmap
        self.authority = authority
        self.config = config
        self.levels: dict = {}
        self.sanctioned: dict = {}
        for o in cmap.obstacles:
            for dyn in campus.FEATURE_VALUES[o.dynamic]:
                if not campus.blocks(o, dyn):
                    continue
                full = obstacle_assignment(o, dyn)
                ctx = as_context(full)
                profile = lambda s, prior, a, lvl, ctx=ctx: authority.distribution(ctx, a, lvl)
                am = autonomy_fixed_point(
                    AutonomyModel(default=OBSTACLE_INITIAL),
                    profile,
                    [(full, o.action)],
                    config.m,
                    config.kappa_threshold,
                )
                allowed = am.allowed(full, o.action)
                approve = authority.distribution(ctx, o.action, Level.L1)[Signal.APPROVE]
                self.sanctioned[full] = allowed
                self.levels[full] = traversal_levels(
                    allowed, approve, config.rho_table, config.switch_cost, config.weights
                )

    def __getitem__(self, key) -> Level:
        full, prior = key
        return self.levels[full][prior]


# -- the learning agent ------------------------------------------------------


@dataclass(frozen=True, eq=False)
class Plan:
    task: Task
    cas: object
    solution: object
    policy: dict  # product state -> (domain action, level)

    @property
    def expected_cost(self) -> float:
        return self.solution.value(self.cas.base.start)


class Agent:
    """Everything one CAS learns during a trial."""

    def __init__(self, cmap: CampusMap, config: ExperimentConfig, refine: bool, catalog=None):
        self.map = cmap
        self.config = config
        self.refine = refine
        self.catalog = catalog or campus_catalog(config.initial_active)
        self.dataset = FeedbackDataset(self.catalog)
        self.profile = uniform_profile(self.catalog)
        self.kappa: dict = {}  # (active values, obstacle action) -> levels
        self.l0_visits: Counter = Counter()  # (full features, action) -> count
        self._domains: dict = {}
        self.mu = switch_cost(config.switch_cost)
        self.rho = level_rho(config.rho_table)

    # context helpers
    def context(self, full: Sequence) -> tuple:
        return project(full, self.catalog)

    def allowed(self, values: tuple, action: str) -> frozenset:
        if action == OPEN_DOOR and "open" in self.catalog.active:
            if values[self.catalog.active_names.index("open")] == "open":
                return FREE_LEVELS  # nothing to open
        return self.kappa.get((values, action), OBSTACLE_INITIAL)

    def feedback(self, values: tuple, action: str, level) -> np.ndarray:
        return self.profile.predict_key((values, action, int(level)))

    def visits(self, values: tuple, action: str, level) -> int:
        level = Level(level)
        if level == Level.L0:
            names = self.catalog.active_names
            idx = [self.catalog.index(n) for n in names]
            return sum(
                n for (full, a), n in self.l0_visits.items()
                if a == action and tuple(full[i] for i in idx) == values
            )
        return self.profile.visits((values, action, int(level)))

    def contexts(self) -> list:
        """(active values, action) for every obstacle context on the map."""
        out = set()
        for o in self.map.obstacles:
            for dyn in campus.FEATURE_VALUES[o.dynamic]:
                values = self.context(obstacle_assignment(o, dyn))
                if self.allowed(values, o.action) != FREE_LEVELS:
                    out.add((values, o.action))
        return sorted(out)

    # planning
    def domain(self, task: Task):
        key = (self.catalog.active, task.start, task.goal)
        d = self._domains.get(key)
        if d is None:
            d = self._domains[key] = build_domain_ssp(self.map, self.catalog, task)
        return d

    def plan(self, task: Task) -> Plan:
        domain = self.domain(task)
        kappa = {}
        for p in range(len(domain.pair_state)):
            a = domain.actions[domain.pair_action[p]]
            if a in (OPEN_DOOR, CROSS):
                s = domain.states[domain.pair_state[p]]
                kappa[(s, a)] = self.allowed(s[1], a)
        am = AutonomyModel(kappa=kappa, mu=self.mu, default=FREE_LEVELS)
        hm = HumanFeedbackModel(profile=lambda s, prior, a, lvl: self.feedback(s[1], a, lvl), rho=self.rho)
        cas = build_cas(domain, am, hm, self.config.weights)
        sol = solve_cas(cas)
        base = cas.base
        acts = [base.actions[j] for j in base.pair_action[sol.policy_pairs]]
        policy = dict(zip(base.states, acts))
        return Plan(task, cas, sol, policy)

    # learning
    def retrain(self) -> None:
        self.profile = train_profile(
            self.dataset, self.catalog, estimator=self.config.estimator, seed=self.config.seed, allow_empty=True
        )

    def update_kappa(self) -> None:
        keys = self.contexts()
        am = AutonomyModel(kappa={k: self.allowed(*k) for k in keys}, default=OBSTACLE_INITIAL)
        am = update_autonomy_profile(
            am,
            lambda s, prior, a, lvl: self.feedback(s, a, lvl),
            lambda s, a, lvl: self.visits(s, a, lvl),
            self.config.m,
            self.config.kappa_threshold,
            keys,
        )
        self.kappa = dict(am.kappa)

    def adopt(self, catalog, profile) -> None:
        """Switch to a refined feature space; new contexts inherit kappa."""
        old_names = self.catalog.active_names
        old_kappa = self.kappa
        self.catalog = catalog
        self.dataset.catalog = catalog
        self.profile = profile
        new_names = catalog.active_names
        keep = [new_names.index(n) for n in old_names]
        self.kappa = {}
        for values, action in self.contexts():
            parent = tuple(values[i] for i in keep)
            self.kappa[(values, action)] = old_kappa.get((parent, action), OBSTACLE_INITIAL)

    def level_at(self, full: Sequence, action: str, prior) -> Level:
        values = self.context(full)
        allowed = self.allowed(values, action)
        approve = float(self.feedback(values, action, Level.L1)[Signal.APPROVE])
        key = (allowed, approve)
        cache = self.__dict__.setdefault("_level_cache", {})
        hit = cache.get(key)
        if hit is None:
            hit = cache[key] = traversal_levels(
                allowed, approve, self.config.rho_table, self.config.switch_cost, self.config.weights
            )
        return hit[Level(prior)]


def compute_level_optimality(agent: Agent, competence: Competence, visited: Iterable) -> tuple:
    """(all obstacle states, visited obstacle states); visited is None if empty.

    Each state is an approach cell with a full dynamic feature value and a
    prior level; the agent's level comes from its own (possibly coarser)
    context, kappa and feedback profile.
    """

    def hit(state) -> bool:
        cell, dyn, prior = state
        o = agent.map.approach[cell]
        full = obstacle_assignment(o, dyn)
        return agent.level_at(full, o.action, prior) == competence[(full, prior)]

    every = obstacle_states(agent.map)
    all_frac = sum(hit(s) for s in every) / len(every) if every else None
    visited = list(visited)
    vis_frac = sum(hit(s) for s in visited) / len(visited) if visited else None
    return all_frac, vis_frac


# -- episodes ------------------------------------------------------------------


@dataclass
class EpisodeResult:
    incurred_cost: float
    expected_cost: float
    signals: int
    steps: int
    truncated: bool
    trace: list = field(default_factory=list)


def run_episode(
    world: CampusWorld,
    agent: Agent,
    plan: Plan,
    authority: OracleAuthority,
    rng: np.random.Generator,
    episode: int = 0,
    visited: set | None = None,
    horizon: int = 500,
) -> EpisodeResult:
    """Follow the plan from the start room until the goal or the horizon."""
    cmap = world.map
    task = plan.task
    world.cell = cmap.rooms[task.start]
    goal_cell = cmap.rooms[task.goal]
    index = plan.cas.base.state_index
    wc, wm, wr = agent.config.weights
    prior = Level.L3
    incurred, signals, steps = 0.0, 0, 0
    trace = []
    while world.cell != goal_cell and steps < horizon:
        full = world.full_features()
        values = agent.context(full)
        ps = ((world.cell, values), prior)
        if ps not in index:
            raise RuntimeError(f"episode {episode}: state {ps!r} is missing from the plan")
        action, level = plan.policy[ps]
        level = Level(level)
        incurred += wc * 1.0 + wm * agent.mu(None, prior, action, level) + wr * agent.rho(None, prior, action, level)
        o = cmap.approach.get(world.cell)
        signal = None
        if visited is not None and o is not None:
            dyn = full[agent.catalog.index(o.dynamic)]
            if campus.blocks(o, dyn):
                visited.add((world.cell, dyn, prior))
        if action in MOVES:
            world.cell = campus._neighbor(world.cell, action)
        elif level == Level.L3:
            world.cell = o.far_side(world.cell)
        elif level == Level.L0:
            agent.l0_visits[(full, action)] += 1
            world.cell = oracle_transition(cmap, world.cell, action)
        else:
            signal = oracle_feedback(authority, full, action, level, rng)
            agent.dataset.record(
                FeedbackRecord(episode, o.label, full, action, prior, level, signal)
            )
            signals += 1
            if signal in (Signal.APPROVE, Signal.NONE):
                world.cell = o.far_side(world.cell)
            elif signal == Signal.OVERRIDE:
                world.cell = oracle_transition(cmap, world.cell, action)
        trace.append((ps, action, level, None if signal is None else Signal(signal)))
        prior = level
        world.step_dynamics()
        steps += 1
    return EpisodeResult(incurred, plan.expected_cost, signals, steps, world.cell != goal_cell, trace)


# -- experiments -----------------------------------------------------------------

METRIC_FIELDS = (
    "trial",
    "episode",
    "start",
    "goal",
    "level_optimality_all",
    "level_optimality_visited",
    "signals",
    "cumulative_signals",
    "expected_cost",
    "incurred_cost",
    "expected_cost_avg10",
    "incurred_cost_avg10",
    "cost_pct_diff",
    "active_feature_count",
    "active_features",
    "refinement_event",
    "truncated",
)
AGGREGATE_FIELDS = (
    "level_optimality_all",
    "level_optimality_visited",
    "signals",
    "cumulative_signals",
    "expected_cost",
    "incurred_cost",
    "cost_pct_diff",
    "active_feature_count",
    "refinement_event",
)


@dataclass(frozen=True)
class MetricsRow:
    trial: int
    episode: int
    start: str
    goal: str
    level_optimality_all: Optional[float]
    level_optimality_visited: Optional[float]
    signals: int
    cumulative_signals: int
    expected_cost: float
    incurred_cost: float
    expected_cost_avg10: float
    incurred_cost_avg10: float
    cost_pct_diff: float
    active_feature_count: int
    active_features: str
    refinement_event: bool
    truncated: bool

    def __post_init__(self):
        for name in ("level_optimality_all", "level_optimality_visited"):
            v = getattr(self, name)
            if v is not None and not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    rows: list
    events: list

    def column(self, name: str, trial: int | None = None) -> np.ndarray:
        vals = [getattr(r, name) for r in self.rows if trial is None or r.trial == trial]
        return np.array([np.nan if v is None else float(v) for v in vals])

    def matrix(self, name: str) -> np.ndarray:
        """trials x episodes array of one metric."""
        trials = sorted({r.trial for r in self.rows})
        return np.vstack([self.column(name, t) for t in trials]) if trials else np.zeros((0, 0))


def trial_streams(seed: int, trial: int) -> dict:
    names = ("world", "oracle", "task", "refine")
    children = np.random.SeedSequence([seed, trial]).spawn(len(names))
    return {n: np.random.default_rng(c) for n, c in zip(names, children)}


def run_trial(config: ExperimentConfig, trial: int, cmap: CampusMap | None = None, competence=None) -> tuple:
    cmap = cmap or load_map(config.map_path)
    authority = config.authority()
    competence = competence or Competence(cmap, authority, config)
    rngs = trial_streams(config.seed, trial)
    world = CampusWorld(cmap, rngs["world"])
    agent = Agent(cmap, config, config.refinement)
    params = config.refinement_params
    fixed = config.fixed_task(cmap)
    rows, events = [], []
    visited: set = set()
    expected_hist, incurred_hist = [], []
    plan_cache: dict = {}
    for episode in range(config.episodes):
        task = sample_task(cmap, config.mode, rngs["task"], fixed)
        try:
            plan = agent.plan(task)
            result = run_episode(
                world, agent, plan, authority, rngs["oracle"], episode, visited, config.horizon
            )
        except Exception as exc:
            raise RuntimeError(f"trial {trial}, episode {episode}: {exc}") from exc
        agent.retrain()
        agent.update_kappa()
        refined = False
        if agent.refine and len(agent.dataset):
            outcome = refine_step(
                agent.dataset, agent.catalog, params, rngs["refine"], agent.profile, episode=episode
            )
            if outcome.changed:
                agent.adopt(outcome.catalog, outcome.profile)
                refined = True
            if outcome.event.get("target") is not None:
                events.append({"trial": trial, **outcome.event})
        all_frac, vis_frac = compute_level_optimality(agent, competence, visited)
        expected_hist.append(result.expected_cost)
        incurred_hist.append(result.incurred_cost)
        exp_avg = float(np.mean(expected_hist[-COST_WINDOW:]))
        inc_avg = float(np.mean(incurred_hist[-COST_WINDOW:]))
        rows.append(
            MetricsRow(
                trial=trial,
                episode=episode,
                start=task.start,
                goal=task.goal,
                level_optimality_all=all_frac,
                level_optimality_visited=vis_frac,
                signals=result.signals,
                cumulative_signals=len(agent.dataset),
                expected_cost=result.expected_cost,
                incurred_cost=result.incurred_cost,
                expected_cost_avg10=exp_avg,
                incurred_cost_avg10=inc_avg,
                cost_pct_diff=100.0 * (inc_avg - result.expected_cost) / result.expected_cost,
                active_feature_count=len(agent.catalog.active),
                active_features="|".join(agent.catalog.active_names),
                refinement_event=refined,
                truncated=result.truncated,
            )
        )
    return rows, events, agent


def run_experiment(config: ExperimentConfig, progress=None) -> ExperimentResult:
    cmap = load_map(config.map_path)
    competence = Competence(cmap, config.authority(), config)
    rows, events = [], []
    for trial in range(config.trials):
        r, e, _ = run_trial(config, trial, cmap, competence)
        rows.extend(r)
        events.extend(e)
        if progress is not None:
            progress(trial, r)
    return ExperimentResult(config, rows, events)


# -- output ------------------------------------------------------------------------


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        if math.isnan(value):
            return ""
        return f"{value:.6f}"
    return str(value)


def metrics_csv(rows: Sequence[MetricsRow]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRIC_FIELDS)
    for r in rows:
        writer.writerow([_fmt(getattr(r, f)) for f in METRIC_FIELDS])
    return buf.getvalue()


def mean_stderr(values: Sequence[float]) -> tuple:
    """Mean and standard error (sample sd / sqrt(n)); missing values skipped."""
    vals = np.array([v for v in values if v is not None and not (isinstance(v, float) and math.isnan(v))], dtype=float)
    if len(vals) == 0:
        return (None, None)
    if len(vals) == 1:
        return (float(vals[0]), 0.0)
    return (float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals))))


def aggregates_csv(rows: Sequence[MetricsRow]) -> str:
    by_episode: dict = {}
    for r in rows:
        by_episode.setdefault(r.episode, []).append(r)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    header = ["episode", "trials"]
    for f in AGGREGATE_FIELDS:
        header += [f"{f}_mean", f"{f}_stderr"]
    writer.writerow(header)
    for ep in sorted(by_episode):
        group = by_episode[ep]
        line = [ep, len(group)]
        for f in AGGREGATE_FIELDS:
            vals = [getattr(r, f) for r in group]
            vals = [float(v) if v is not None else None for v in vals]
            line += [_fmt(x) for x in mean_stderr(vals)]
        writer.writerow(line)
    return buf.getvalue()


def emit(result: ExperimentResult | Sequence[MetricsRow], out_dir, events: Sequence[dict] | None = None) -> dict:
    """Write metrics.csv, aggregates.csv and refinements.log; returns the paths."""
    if isinstance(result, ExperimentResult):
        rows, events = result.rows, result.events
    else:
        rows, events = list(result), list(events or [])
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = {
            "metrics": out / "metrics.csv",
            "aggregates": out / "aggregates.csv",
            "refinements": out / "refinements.log",
        }
        paths["metrics"].write_text(metrics_csv(rows))
        paths["aggregates"].write_text(aggregates_csv(rows))
        paths["refinements"].write_text("".join(format_event(e) + "\n" for e in events))
    except OSError as exc:
        raise OSError(f"cannot write results to {out}: {exc.strerror or exc}") from exc
    return paths


def read_metrics(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
