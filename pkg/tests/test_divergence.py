import json
import math
from importlib import resources

import pytest
from hypothesis import given
from hypothesis import strategies as st

from agility.divergence import (
    CRISIS_PROFILE,
    DEFAULT_NATURE_TABLE,
    DEFAULT_PROFILE,
    CostConfig,
    CostMode,
    DivergenceReport,
    NatureRule,
    RedesignLevel,
    WeightTable,
    classify_nature,
    compute_divergence,
    exceeds_threshold,
    instance_cost,
    nature_table_from_list,
    nature_table_to_list,
)
from agility.errors import ParseError
from agility.model import Difference, InstanceKey, Operation

from oracles import naive_divergence

PROPORTIONAL = CostConfig(CostMode.PROPORTIONAL)
WIND = InstanceKey("Risk", "wind1")
FIRE = InstanceKey("Risk", "fire1")


def added(concept, ident):
    return Difference(InstanceKey(concept, ident), Operation.ADDED)


def updated(concept, ident, changed, total):
    return Difference(InstanceKey(concept, ident), Operation.UPDATED, frozenset(changed), total)


concepts = st.sampled_from(["Partner", "Risk", "Service", "Objective", "Activity", "Resource", "Custom"])
operations = st.sampled_from(list(Operation))


@st.composite
def differences(draw):
    key = InstanceKey(draw(concepts), draw(st.text("abcdef", min_size=1, max_size=3)))
    op = draw(operations)
    if op is not Operation.UPDATED:
        return Difference(key, op)
    names = draw(st.sets(st.sampled_from(["status", "available", "endpoint", "x"]), min_size=1))
    return Difference(key, op, frozenset(names), len(names) + draw(st.integers(0, 3)))


weight_values = st.sampled_from([0.0, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 8.0])


@st.composite
def weight_tables(draw, positive=False):
    values = weight_values.filter(lambda w: w > 0) if positive else weight_values
    entries = draw(st.dictionaries(st.tuples(concepts, operations), values, max_size=8))
    return WeightTable(entries, draw(values))


# --- instance_cost -------------------------------------------------------------

def test_unit_cost_is_one():
    assert instance_cost(updated("Risk", "a", {"s"}, 4)) == 1.0
    assert instance_cost(added("Risk", "a")) == 1.0


def test_proportional_cost():
    assert instance_cost(updated("Risk", "a", {"s"}, 4), PROPORTIONAL) == 0.25
    assert instance_cost(added("Risk", "a"), PROPORTIONAL) == 1.0
    assert instance_cost(Difference(FIRE, Operation.DELETED), PROPORTIONAL) == 1.0


@given(differences(), st.sampled_from([CostConfig(), PROPORTIONAL]))
def test_cost_is_in_unit_interval(d, cfg):
    assert 0.0 < instance_cost(d, cfg) <= 1.0


# --- compute_divergence ----------------------------------------------------------

def test_empty_diff_gives_zero():
    report = compute_divergence([])
    assert report.total == 0 and report.level is None and report.contributions == ()


def test_three_unit_differences():
    diffs = [added("Risk", "a"), added("Partner", "b"), updated("Service", "c", {"x"}, 2)]
    assert compute_divergence(diffs).total == 3.0


def test_crisis_weights_example():
    weights = WeightTable({("Risk", Operation.ADDED): 2.0, ("Risk", Operation.DELETED): 0.5})
    report = compute_divergence([Difference(WIND, Operation.ADDED), Difference(FIRE, Operation.DELETED)], weights)
    assert report.total == 2.5
    assert [c.weighted for c in report.contributions] == [2.0, 0.5]


def test_contributions_keep_input_order_and_sum():
    diffs = [added("Risk", "b"), added("Risk", "a")]
    report = compute_divergence(diffs, CRISIS_PROFILE, evaluated_at=42)
    assert [c.difference for c in report.contributions] == diffs
    assert report.evaluated_at == 42
    assert report.to_dict()["contributions"][0]["id"] == "b"


@given(st.lists(differences(), max_size=12), weight_tables(), st.sampled_from([CostConfig(), PROPORTIONAL]))
def test_total_matches_exact_sum(diffs, weights, cfg):
    report = compute_divergence(diffs, weights, cfg)
    entries = {(c, op.value): w for (c, op), w in weights.entries.items()}
    exact = naive_divergence(diffs, entries, weights.default_weight, cfg.mode is CostMode.PROPORTIONAL)
    assert report.total == float(exact)
    assert report.total == math.fsum(c.weighted for c in report.contributions)


@given(st.lists(differences(), max_size=10), weight_tables(positive=True))
def test_zero_iff_empty_with_positive_weights(diffs, weights):
    assert (compute_divergence(diffs, weights).total == 0) == (not diffs)


@given(st.lists(differences(), max_size=10), differences(), weight_tables(positive=True),
       st.sampled_from([CostConfig(), PROPORTIONAL]))
def test_monotone_in_added_differences(diffs, extra, weights, cfg):
    before = compute_divergence(diffs, weights, cfg).total
    after = compute_divergence(diffs + [extra], weights, cfg).total
    assert after > before


@given(st.lists(differences(), max_size=10), weight_tables(), st.sampled_from([0.25, 0.5, 2.0, 4.0, 16.0]))
def test_scale_equivariance(diffs, weights, k):
    # Power-of-two factors keep every product exact.
    base = compute_divergence(diffs, weights).total
    assert compute_divergence(diffs, weights.scaled(k)).total == base * k


@given(st.lists(differences(), max_size=10), weight_tables(), st.sampled_from([0.25, 2.0, 4.0]),
       st.sampled_from([0.0, 0.5, 1.0, 2.0, 3.5]))
def test_threshold_decision_is_scale_invariant(diffs, weights, k, threshold):
    a = exceeds_threshold(compute_divergence(diffs, weights), threshold)
    b = exceeds_threshold(compute_divergence(diffs, weights.scaled(k)), threshold * k)
    assert a == b


# --- classify_nature -------------------------------------------------------------

def test_classify_examples():
    assert classify_nature([Difference(WIND, Operation.ADDED)]) is RedesignLevel.SITUATION
    assert classify_nature([updated("Service", "s1", {"endpoint"}, 2)]) is RedesignLevel.DEPLOYMENT
    assert classify_nature([]) is None


def test_classify_service_availability_and_activity():
    assert classify_nature([updated("Service", "s1", {"available", "endpoint"}, 2)]) is RedesignLevel.CARTOGRAPHY
    assert classify_nature([added("Service", "s9")]) is RedesignLevel.CARTOGRAPHY
    assert classify_nature([added("Activity", "a")]) is RedesignLevel.CARTOGRAPHY
    assert classify_nature([added("Custom", "a")]) is None


def test_deepest_level_wins():
    diffs = [updated("Service", "s1", {"endpoint"}, 2), added("Resource", "r"), added("Partner", "p")]
    assert classify_nature(diffs) is RedesignLevel.SITUATION
    assert classify_nature(diffs[:2]) is RedesignLevel.CARTOGRAPHY


@given(st.lists(differences(), max_size=10), st.randoms(use_true_random=False))
def test_classify_is_permutation_invariant(diffs, rnd):
    shuffled = list(diffs)
    rnd.shuffle(shuffled)
    assert classify_nature(diffs) == classify_nature(shuffled)


def test_custom_nature_table():
    table = nature_table_from_list([{"concept": "Custom", "level": 2, "operation": "*"}])
    assert classify_nature([added("Custom", "a")], table) is RedesignLevel.CARTOGRAPHY
    assert nature_table_from_list(nature_table_to_list(DEFAULT_NATURE_TABLE)) == DEFAULT_NATURE_TABLE
    with pytest.raises(ParseError):
        nature_table_from_list([{"concept": "Risk", "level": 7}])
    assert NatureRule("Risk", RedesignLevel.SITUATION).matches(Difference(FIRE, Operation.DELETED))


# --- threshold ---------------------------------------------------------------------

def report(total):
    return DivergenceReport(total, (), None)


def test_threshold_is_strict():
    assert exceeds_threshold(report(2.5), 2.0)
    assert not exceeds_threshold(report(2.0), 2.0)
    assert not exceeds_threshold(report(0.0), 0.0)
    with pytest.raises(ValueError):
        exceeds_threshold(report(1.0), -1.0)


# --- weight profiles ------------------------------------------------------------

def test_crisis_profile_respects_qualitative_ordering():
    w = CRISIS_PROFILE.weight
    assert w("Risk", Operation.ADDED) > w("Risk", Operation.DELETED)
    assert w("Partner", Operation.DELETED) > w("Partner", Operation.ADDED)


@pytest.mark.parametrize("name,profile", [("default", DEFAULT_PROFILE), ("crisis", CRISIS_PROFILE)])
def test_shipped_weight_files_match_builtins(name, profile):
    text = resources.files("agility").joinpath("data", "weights", f"{name}.json").read_text()
    assert WeightTable.from_dict(json.loads(text)) == profile


def test_weight_table_validation_and_round_trip():
    assert WeightTable.from_dict(CRISIS_PROFILE.to_dict()) == CRISIS_PROFILE
    with pytest.raises(ValueError):
        WeightTable({("Risk", Operation.ADDED): -1.0})
    with pytest.raises(ValueError):
        WeightTable(default_weight=float("inf"))
    with pytest.raises(ValueError):
        CRISIS_PROFILE.scaled(0)
    dup = {"entries": [{"concept": "Risk", "operation": "added", "weight": 1},
                       {"concept": "Risk", "operation": "added", "weight": 2}]}
    with pytest.raises(ParseError):
        WeightTable.from_dict(dup)


def test_proportional_total_of_thirds():
    diffs = [updated("Risk", "a", {"s"}, 3), updated("Risk", "b", {"s", "t"}, 3)]
    exact = naive_divergence(diffs, {}, 1.0, proportional=True)
    assert compute_divergence(diffs, DEFAULT_PROFILE, PROPORTIONAL).total == float(exact)
