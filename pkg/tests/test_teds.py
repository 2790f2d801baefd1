import random

import pytest
from hypothesis import given, settings, strategies as st

from tsrlab.errors import EmptyInput, GrammarError
from tsrlab.grammar import Node, TableClass, parse_html, split_structure, tokenize
from tsrlab.teds import CostModel, SampleScore, aggregate, percent, teds, teds_trees, tree_edit_distance

from gen import small_node_tree, tables
from oracles import brute_force_ted, teds_reference

GT5 = "<tbody><tr><td></td><td></td></tr></tbody>"
PRED4 = "<tbody><tr><td></td></tr></tbody>"


def seq(html):
    return tokenize(split_structure(html))


def test_distance_to_self_is_zero():
    t = parse_html(GT5)
    assert tree_edit_distance(t, t) == 0


def test_one_missing_cell_costs_one():
    assert tree_edit_distance(parse_html(PRED4), parse_html(GT5)) == 1
    assert brute_force_ted(parse_html(PRED4).root, parse_html(GT5).root) == 1


def test_span_change_is_a_single_rename():
    a = parse_html('<tbody><tr><td colspan="2"></td></tr></tbody>')
    b = parse_html("<tbody><tr><td></td></tr></tbody>")
    assert tree_edit_distance(a, b) == 1 == brute_force_ted(a.root, b.root)


def test_teds_examples():
    assert teds(seq(GT5), seq(GT5)) == 1.0
    assert teds(seq(PRED4), seq(GT5)) == pytest.approx(0.8)
    assert teds(seq(""), seq(GT5)) == pytest.approx(0.2)


def test_both_empty_is_perfect():
    assert teds(seq(""), seq("")) == 1.0


def test_unparseable_prediction_scores_zero():
    assert teds(seq("<tr><td></td>"), seq(GT5)) == 0.0
    assert teds(["<tbody>", "<div>"], seq(GT5)) == 0.0


def test_unparseable_ground_truth_raises():
    with pytest.raises(GrammarError):
        teds(seq(GT5), seq("<tr>"))


def test_custom_costs_are_respected():
    heavy = CostModel(insert_cost=2.0, delete_cost=3.0)
    a, b = parse_html(PRED4), parse_html(GT5)
    assert tree_edit_distance(a, b, heavy) == 2.0  # one insertion
    assert tree_edit_distance(b, a, heavy) == 3.0  # one deletion


@pytest.mark.parametrize("seed", range(200))
def test_matches_brute_force_on_small_trees(seed):
    rng = random.Random(seed)
    a, b = small_node_tree(rng), small_node_tree(rng)
    assert tree_edit_distance(a, b) == brute_force_ted(a, b)


@given(tables, tables)
@settings(max_examples=60)
def test_teds_matches_reference_on_small_tables(x, y):
    if x.root.size() > 7 or y.root.size() > 7:
        return
    assert teds_trees(x, y) == pytest.approx(float(teds_reference(x, y)), abs=1e-12)


@given(tables, tables)
def test_teds_is_bounded(x, y):
    assert 0.0 <= teds_trees(x, y) <= 1.0


@given(tables)
def test_teds_of_self_is_one(x):
    assert teds_trees(x, x) == 1.0


@given(tables, tables)
def test_distance_is_symmetric_under_unit_cost(x, y):
    assert tree_edit_distance(x, y) == tree_edit_distance(y, x)


@given(tables, tables, tables)
@settings(max_examples=40)
def test_triangle_inequality(x, y, z):
    assert tree_edit_distance(x, z) <= tree_edit_distance(x, y) + tree_edit_distance(y, z)


@given(tables, tables)
def test_distance_bounded_by_delete_all_insert_all(x, y):
    # the roots always match, so everything else can be deleted then inserted
    assert tree_edit_distance(x, y) <= x.root.size() + y.root.size() - 2


def test_distance_accepts_bare_nodes():
    assert tree_edit_distance(Node("a"), Node("b")) == 1


# -- aggregation -----------------------------------------------------------


def test_percent_rounds_half_up():
    assert percent(2 / 3) == 66.67
    assert percent(0.123450000001) == 12.35
    assert percent(0.00005) == 0.01


def test_aggregate_single_simple():
    r = aggregate([(TableClass.SIMPLE, 1.0)])
    assert (r.simple_mean, r.complex_mean, r.all_mean) == (100.0, None, 100.0)


def test_aggregate_two_classes():
    r = aggregate([(TableClass.SIMPLE, 0.8), (TableClass.COMPLEX, 0.6)])
    assert (r.simple_mean, r.complex_mean, r.all_mean) == (80.0, 60.0, 70.0)


def test_aggregate_averages_samples_not_classes():
    r = aggregate([("simple", 1.0), ("simple", 0.5), ("complex", 0.5)])
    assert (r.simple_mean, r.complex_mean, r.all_mean) == (75.0, 50.0, 66.67)


def test_aggregate_collects_flags():
    r = aggregate([SampleScore("a", TableClass.SIMPLE, 0.0, "missing prediction"), SampleScore("b", TableClass.SIMPLE, 1.0)])
    assert r.flags == ("a: missing prediction",)
    assert r.n_simple == 2 and r.n_complex == 0


def test_aggregate_empty_raises():
    with pytest.raises(EmptyInput):
        aggregate([])


@given(st.lists(st.tuples(st.sampled_from(list(TableClass)), st.floats(0, 1)), min_size=1, max_size=30))
def test_all_mean_lies_between_class_means(pairs):
    r = aggregate(pairs)
    present = [m for m in (r.simple_mean, r.complex_mean) if m is not None]
    assert min(present) - 0.01 <= r.all_mean <= max(present) + 0.01
