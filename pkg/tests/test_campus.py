import itertools

import numpy as np
import pytest

from competence_aware import campus
from competence_aware.campus import (
    CROSS,
    OPEN_DOOR,
    TRAFFIC_CHAIN,
    MapError,
    OracleAuthority,
    Task,
    build_domain_ssp,
    campus_catalog,
    load_map,
    oracle_feedback,
    oracle_transition,
    parse_map,
    sample_task,
)
from competence_aware.cas import LEGAL_SIGNALS, Level, Signal
from competence_aware.feedback import NA
from competence_aware.ssp import validate_ssp

BUNDLED = campus.default_map_path()

TINY = """\
#######
#R.C.R#
#######

crosswalk 3 1 clear two-way none
room 1 1 west
room 5 1 east
"""


@pytest.fixture(scope="module")
def cmap():
    return load_map(BUNDLED)


def test_bundled_map_parses_cleanly(cmap):
    assert len(cmap.crosswalks) >= 2 and len(cmap.doors) >= 6
    assert cmap.warnings == ()
    assert len(cmap.rooms) == 10


def test_parse_is_deterministic():
    text = BUNDLED.read_text()
    a, b = parse_map(text), parse_map(text)
    assert a.grid == b.grid and a.obstacles == b.obstacles and a.rooms == b.rooms


def test_unknown_cell_code_reports_position():
    text = TINY.replace("#R.C.R#", "#R.CQR#")
    with pytest.raises(MapError, match=r"line 2, column 5: unknown cell code 'Q'"):
        parse_map(text)


def test_ragged_grid_rejected():
    with pytest.raises(MapError, match="line 2: grid row has 6 cells"):
        parse_map(TINY.replace("#R.C.R#", "#R.C.R"))


def test_attribute_mismatch_rejected():
    with pytest.raises(MapError, match=r"line 5: cell \(2, 1\) is '\.'"):
        parse_map(TINY.replace("crosswalk 3 1", "crosswalk 2 1"))


def test_missing_attribute_record_rejected():
    text = "\n".join(l for l in TINY.splitlines() if not l.startswith("crosswalk"))
    with pytest.raises(MapError, match="crosswalk has no attribute record"):
        parse_map(text)


def test_bad_feature_value_rejected():
    with pytest.raises(MapError, match="not a valid visibility"):
        parse_map(TINY.replace("clear", "foggy"))


def test_missing_file_is_a_map_error(tmp_path):
    with pytest.raises(MapError):
        load_map(tmp_path / "nope.map")


def test_structure_violation_is_a_warning():
    text = BUNDLED.read_text().replace("crosswalk 23 8 obstructed two-way", "crosswalk 23 8 obstructed one-way")
    warnings = parse_map(text).warnings
    assert any("street type" in w for w in warnings)
    text = BUNDLED.read_text().replace("door 21 3 heavy red", "door 21 3 heavy brown")
    text = text.replace("door 16 3 light blue", "door 16 3 light red").replace("door 16 11 medium red", "door 16 11 medium blue")
    text = text.replace("door 10 11 light gray", "door 10 11 light red").replace("door 21 11 light brown", "door 21 11 light red")
    text = text.replace("door 19 4 light gray", "door 19 4 light red").replace("door 5 11 medium brown", "door 5 11 medium blue")
    text = text.replace("door 19 12 medium gray", "door 19 12 medium blue")
    assert any("breaks the correlation" in w for w in parse_map(text).warnings)


def test_tiny_map_has_too_few_structures_but_loads():
    m = parse_map(TINY)
    assert m.rooms == {"east": (5, 1), "west": (1, 1)}
    assert m.crosswalks[0].sides == ((2, 1), (4, 1))


# -- dynamics --------------------------------------------------------------


def test_traffic_chain_is_stochastic_and_irreducible():
    assert np.allclose(TRAFFIC_CHAIN.sum(axis=1), 1.0)
    reach = np.linalg.matrix_power(TRAFFIC_CHAIN > 0, 2)
    assert np.all(reach)
    assert TRAFFIC_CHAIN[1].tolist() == [0.2, 0.6, 0.2]


def test_stationary_is_fixed_point():
    pi = campus.stationary(TRAFFIC_CHAIN)
    assert pi @ TRAFFIC_CHAIN == pytest.approx(pi)
    assert pi == pytest.approx([1 / 3, 1 / 3, 1 / 3])


def test_world_dynamics_are_seeded(cmap):
    def run(seed):
        w = campus.CampusWorld(cmap, np.random.default_rng(seed))
        out = []
        for _ in range(50):
            w.step_dynamics()
            out.append(tuple(w.dynamic.values()))
        return out

    assert run(4) == run(4)


def test_traffic_frequencies_match_chain(cmap):
    w = campus.CampusWorld(cmap, np.random.default_rng(0))
    cell = cmap.crosswalks[0].cell
    counts = np.zeros((3, 3))
    for _ in range(20_000):
        before = w.dynamic[cell]
        w.step_dynamics()
        counts[before, w.dynamic[cell]] += 1
    freq = counts / counts.sum(axis=1, keepdims=True)
    assert np.abs(freq - TRAFFIC_CHAIN).max() < 0.03


# -- oracle ----------------------------------------------------------------------


def ctx(**kw):
    return kw


NOISELESS = OracleAuthority(epsilon=0.0)


@pytest.mark.parametrize(
    "context,action,level,expected",
    [
        (ctx(visibility="clear", traffic="light"), CROSS, Level.L1, Signal.APPROVE),
        (ctx(visibility="clear", traffic="heavy"), CROSS, Level.L1, Signal.DISAPPROVE),
        (ctx(visibility="obstructed", traffic="none"), CROSS, Level.L1, Signal.DISAPPROVE),
        (ctx(visibility="clear", traffic="none"), CROSS, Level.L2, Signal.NONE),
        (ctx(visibility="clear", traffic="light"), CROSS, Level.L2, Signal.OVERRIDE),
        (ctx(size="heavy", mechanism="push"), OPEN_DOOR, Level.L1, Signal.DISAPPROVE),
        (ctx(size="medium", mechanism="push"), OPEN_DOOR, Level.L1, Signal.APPROVE),
        (ctx(size="medium", mechanism="pull"), OPEN_DOOR, Level.L1, Signal.DISAPPROVE),
        (ctx(size="light", mechanism="push"), OPEN_DOOR, Level.L2, Signal.NONE),
        (ctx(size="medium", mechanism="push"), OPEN_DOOR, Level.L2, Signal.OVERRIDE),
    ],
)
def test_rule_table(context, action, level, expected):
    assert oracle_feedback(NOISELESS, context, action, level, np.random.default_rng(0)) == expected


@pytest.mark.parametrize("level", [Level.L0, Level.L3])
def test_no_feedback_outside_l1_l2(level):
    with pytest.raises(ValueError):
        oracle_feedback(OracleAuthority(), ctx(), CROSS, level, np.random.default_rng(0))


@pytest.mark.parametrize("level", [Level.L1, Level.L2])
def test_noise_rate(level):
    auth = OracleAuthority(epsilon=0.05)
    rng = np.random.default_rng(11)
    c = ctx(visibility="clear", traffic="none")
    draws = [oracle_feedback(auth, c, CROSS, level, rng) for _ in range(10_000)]
    intended = auth.intended(c, CROSS, level)
    legal = LEGAL_SIGNALS[level]
    assert set(draws) <= set(legal)
    freq = sum(d == intended for d in draws) / len(draws)
    assert freq == pytest.approx(0.95 + 0.05 / len(legal), abs=0.01)
    assert freq >= 0.95 * 0.95


def test_distribution_matches_sampler():
    auth = OracleAuthority()
    d = auth.distribution(ctx(size="heavy", mechanism="push"), OPEN_DOOR, Level.L1)
    assert d[Signal.DISAPPROVE] == pytest.approx(0.975)
    assert d.sum() == pytest.approx(1.0)
    assert auth.distribution({}, OPEN_DOOR, Level.L3)[Signal.NONE] == 1.0


def test_rule_ignores_color_and_street():
    auth = OracleAuthority(epsilon=0.0)
    for action, level in itertools.product((CROSS, OPEN_DOOR), (Level.L1, Level.L2)):
        for combo in itertools.product(*(campus.FEATURE_VALUES[n] for n in campus.CAUSAL_FEATURES)):
            base = dict(zip(campus.CAUSAL_FEATURES, combo))
            outs = {
                auth.intended({**base, "color": c, "street": s}, action, level)
                for c in campus.FEATURE_VALUES["color"]
                for s in campus.FEATURE_VALUES["street"]
            }
            assert len(outs) == 1


def test_rules_are_overridable():
    rules = campus.parse_rules({"cross": {"l1": {"traffic": ["none"]}}})
    auth = OracleAuthority(rules, 0.0)
    assert auth.intended(ctx(visibility="obstructed", traffic="none"), CROSS, Level.L1) == Signal.APPROVE
    with pytest.raises(ValueError):
        campus.parse_rules({"cross": {"l3": {"traffic": ["none"]}}})
    with pytest.raises(ValueError):
        campus.parse_rules({"cross": {"l1": {"traffic": ["jammed"]}}})


def test_human_takes_the_robot_through(cmap):
    cw = cmap.crosswalks[0]
    assert oracle_transition(cmap, cw.sides[0], CROSS) == cw.sides[1]
    door = cmap.doors[0]
    assert oracle_transition(cmap, door.sides[1], OPEN_DOOR) == door.sides[0]
    assert oracle_transition(cmap, (1, 1), CROSS) == (1, 1)


# -- tasks ---------------------------------------------------------------------------


def test_fixed_task_repeats(cmap):
    rng = np.random.default_rng(0)
    tasks = {sample_task(cmap, "fixed", rng) for _ in range(100)}
    assert len(tasks) == 1


def test_random_task_is_uniform(cmap):
    rng = np.random.default_rng(0)
    tasks = [sample_task(cmap, "random", rng) for _ in range(1000)]
    assert all(t.start != t.goal for t in tasks)
    for name in cmap.rooms:
        assert sum(t.start == name for t in tasks) / 1000 == pytest.approx(0.1, abs=0.03)


def test_single_room_map_cannot_sample():
    m = parse_map(TINY.replace("R#\n#######", ".#\n#######").replace("room 5 1 east\n", ""))
    with pytest.raises(MapError):
        sample_task(m, "random", np.random.default_rng(0))


def test_task_invariants():
    with pytest.raises(ValueError):
        Task("a", "a")
    with pytest.raises(ValueError):
        Task("a", "b", "sometimes")


# -- domain model -------------------------------------------------------------------


def states_at(model, cell):
    return [s for s in model.states if s[0] == cell]


def test_initial_space_splits_crosswalks_by_traffic(cmap):
    task = Task("nw-office", "sw-office")
    model = build_domain_ssp(cmap, campus_catalog(), task)
    assert validate_ssp(model) == []
    cw = cmap.crosswalks[0]
    assert len(states_at(model, cw.sides[0])) == 3
    door = cmap.doors[0]
    assert len(states_at(model, door.sides[0])) == 2


def test_visibility_doubles_crosswalk_contexts(cmap):
    kinds = lambda cat: sum(k == "crosswalk" for k, _ in campus.obstacle_contexts(cmap, cat))
    assert kinds(campus_catalog()) == 3
    assert kinds(campus_catalog(("traffic", "open", "visibility"))) == 6


def test_empty_space_gives_one_state_per_cell(cmap):
    model = build_domain_ssp(cmap, campus_catalog(()), Task("nw-office", "se-lab"))
    cells = [s[0] for s in model.states]
    assert len(cells) == len(set(cells))


def test_domain_transitions(cmap):
    model = build_domain_ssp(cmap, campus_catalog(), Task("nw-office", "sw-office"))
    cw = cmap.crosswalks[0]
    near, far = cw.sides
    # stepping onto an approach cell draws traffic from the chain's stationary law
    west = (near[0] - 1, near[1])
    succ = model.successors((west, (NA, NA)), "east")
    assert sorted(succ.values()) == pytest.approx([1 / 3] * 3)
    # crossing advances traffic one step of the chain
    succ = model.successors((near, ("none", NA)), CROSS)
    assert succ == pytest.approx({(far, ("none", NA)): 0.8, (far, ("light", NA)): 0.2})
    assert model.step_cost((near, ("none", NA)), CROSS) == 1.0


def test_unreachable_goal_raises():
    text = TINY.replace("#R.C.R#", "#R.#.R#").replace("crosswalk 3 1 clear two-way none\n", "")
    with pytest.raises(MapError, match="unreachable"):
        build_domain_ssp(parse_map(text), campus_catalog(), Task("west", "east"))
