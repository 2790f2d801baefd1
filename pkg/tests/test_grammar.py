import random
import warnings

import numpy as np
import pytest
from hypothesis import given

from tsrlab import grammar as g
from tsrlab.synth import random_tree
from tsrlab.errors import ContainsUnknown, GrammarError, IllegalNesting, LengthExceeded, SpanOverlap, UnbalancedTag

from gen import mutate_unbalanced, tables


def toks(*surfaces):
    return g.tokenize(surfaces)


# -- vocabulary ------------------------------------------------------------


def test_vocabulary_has_32_tokens_with_dense_ids():
    vocab = g.vocabulary()
    assert len(vocab) == 32
    assert sorted(t.id for t in vocab) == list(range(32))
    assert len({t.surface for t in vocab}) == 32


def test_spanning_fragments_are_separate_tokens():
    surfaces = {t.surface for t in g.vocabulary()}
    assert "<td" in surfaces and ">" in surfaces


def test_nine_rowspan_and_nine_colspan_tokens():
    spans = [t.span for t in g.vocabulary() if t.span]
    assert sorted(k for a, k in spans if a == "rowspan") == list(range(2, 11))
    assert sorted(k for a, k in spans if a == "colspan") == list(range(2, 11))


def test_manifest_is_stable_and_lists_every_token():
    text = g.manifest()
    assert g.manifest_hash() == g.manifest_hash()
    body = [l for l in text.splitlines() if l and not l.startswith("#")]
    assert len(body) == 32


def test_token_lookup_by_id_and_surface():
    assert g.token("<td").id == g.token(g.token("<td").id).id
    with pytest.raises(KeyError):
        g.token("<div>")


# -- tokenize / detokenize -------------------------------------------------


def test_tokenize_plain_row():
    seq = toks("<tr>", "<td>", "</td>", "</tr>")
    assert len(seq) == 4 and g.UNK_ID not in seq.ids


def test_tokenize_spanning_cell_opening():
    seq = toks("<td", ' colspan="6"', ">")
    assert len(seq) == 3 and g.UNK_ID not in seq.ids
    assert seq[1].span == ("colspan", 6)


def test_span_above_ten_maps_to_unknown():
    seq = toks("<td", ' colspan="12"', ">")
    assert seq.ids[1] == g.UNK_ID


def test_length_bound_is_enforced():
    with pytest.raises(LengthExceeded):
        g.tokenize(["<tr>"] * 513)
    assert len(g.tokenize(["<tr>"] * 10, bound=10)) == 10


def test_detokenize_examples():
    assert g.detokenize(toks("<tr>", "<td>", "</td>", "</tr>")) == "<tr><td></td></tr>"
    assert g.detokenize(g.tokenize([])) == ""
    assert g.detokenize(toks("<sos>", "<td>", "</td>", "<eos>")) == "<td></td>"


def test_detokenize_rejects_unknown():
    with pytest.raises(ContainsUnknown):
        g.detokenize(toks("<td>", "<div>"))


def test_split_structure_inverts_concatenation():
    html = '<thead><tr><td rowspan="2" colspan="3"></td></tr></thead>'
    parts = g.split_structure(html)
    assert parts == ["<thead>", "<tr>", "<td", ' rowspan="2"', ' colspan="3"', ">", "</td>", "</tr>", "</thead>"]
    assert "".join(parts) == html


@given(tables)
def test_round_trip_through_tokens(tree):
    surfaces = tree.serialize()
    seq = g.tokenize(surfaces)
    assert g.UNK_ID not in seq.ids
    assert g.tokenize(g.split_structure(g.detokenize(seq))) == seq
    assert g.parse(seq) == tree


# -- parse -----------------------------------------------------------------


def test_parse_flat_body():
    tree = g.parse_html("<tbody><tr><td></td><td></td></tr></tbody>")
    assert [n.tag for n in tree.nodes()[1:]] == ["tbody", "tr", "td", "td"]


def test_parse_reads_colspan():
    tree = g.parse(toks("<tr>", "<td", ' colspan="6"', ">", "</td>", "</tr>"))
    (td,) = [n for n in tree.nodes() if n.tag == "td"]
    assert td.colspan == 6 and td.rowspan == 1


def test_parse_rejects_mismatched_close():
    with pytest.raises(UnbalancedTag):
        g.parse_html("<tr></td>")


@pytest.mark.parametrize(
    "html",
    [
        "<tr><td></td>",  # never closed
        "</tr>",
        "<td></td>",  # cell outside a row
        "<tr><tr></tr></tr>",
        "<thead><tbody></tbody></thead>",
        '<tr><td colspan="2" colspan="3"></td></tr>',  # repeated attribute
    ],
)
def test_parse_rejects_malformed(html):
    with pytest.raises(GrammarError):
        g.parse_html(html)


def test_parse_rejects_dangling_fragment():
    with pytest.raises(GrammarError):
        g.parse(toks("<tr>", "<td", ' colspan="2"', "</td>", "</tr>"))
    with pytest.raises(GrammarError):
        g.parse(toks("<tr>", ">", "</tr>"))


def test_parse_skips_specials():
    tree = g.parse(toks("<sos>", "<tr>", "<td>", "</td>", "</tr>", "<eos>", "<pad>"))
    assert tree.root.size() == 3


def test_plain_td_written_as_fragments_normalizes():
    tree = g.parse(toks("<tr>", "<td", ">", "</td>", "</tr>"))
    assert tree.serialize() == ["<tr>", "<td>", "</td>", "</tr>"]


def test_mutations_are_rejected():
    rng = random.Random(7)
    nrng = np.random.default_rng(7)
    for _ in range(300):
        bad = mutate_unbalanced(random_tree(nrng, span_prob=0.3).serialize(), rng)
        with pytest.raises(GrammarError):
            g.parse(bad)


def test_tree_rejects_illegal_nesting_directly():
    with pytest.raises(IllegalNesting):
        g.TableTree(g.Node("table", children=(g.Node("td"),)))
    with pytest.raises(IllegalNesting):
        g.TableTree(g.Node("table", children=(g.Node("tr", colspan=2),)))


# -- classify / grid -------------------------------------------------------


def test_classify():
    assert g.classify(g.parse_html("<tbody><tr><td></td><td></td></tr></tbody>")) is g.TableClass.SIMPLE
    assert g.classify(g.parse_html('<tr><td colspan="6"></td></tr>')) is g.TableClass.COMPLEX
    assert g.classify(g.parse_html("")) is g.TableClass.SIMPLE


def test_grid_two_by_two():
    grid = g.expand_grid(g.parse_html("<tr><td></td><td></td></tr><tr><td></td><td></td></tr>"))
    assert (grid.rows, grid.cols, grid.n_cells) == (2, 2, 4)


def test_grid_colspan_covers_both_columns():
    grid = g.expand_grid(g.parse_html('<tr><td colspan="2"></td></tr>'))
    assert (grid.rows, grid.cols, grid.n_cells) == (1, 2, 1)
    assert grid.occupancy[0][0] == grid.occupancy[0][1]


def test_grid_rowspan_fills_rectangle():
    grid = g.expand_grid(g.parse_html('<tr><td rowspan="2"></td><td></td></tr><tr><td></td></tr>'))
    assert (grid.rows, grid.cols) == (2, 2)
    assert all(c is not None for row in grid.occupancy for c in row)
    assert grid.occupancy[0][0] == grid.occupancy[1][0]
    assert not grid.ragged


def test_grid_overlap_raises():
    # the second row's colspan runs into the first row's rowspan
    html = '<tr><td></td><td rowspan="2"></td></tr><tr><td colspan="2"></td></tr>'
    with pytest.raises(SpanOverlap):
        g.expand_grid(g.parse_html(html))


def test_grid_ragged_rows_warn():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        grid = g.expand_grid(g.parse_html("<tr><td></td><td></td></tr><tr><td></td></tr>"))
    assert grid.ragged
    assert any(issubclass(w.category, g.RaggedRowsWarning) for w in caught)


@given(tables)
def test_grid_cell_count_matches_td_count(tree):
    n_td = sum(n.tag == "td" for n in tree.nodes())
    assert g.expand_grid(tree).n_cells == n_td
