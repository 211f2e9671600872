import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ethfraud.corpus import NUM_RESERVED
from ethfraud.gcn import GCN, normalized_adjacency
from ethfraud.numerics import tensor as T
from ethfraud.numerics.gradcheck import check_gradients
from ethfraud.tasg import (
    GraphError, SimilarityEncoder, build_graph, count_cooccurrence, npmi, read_graph, tfidf,
    tfidf_table, write_graph,
)

from oracles import as_corpora, brute_counts, brute_npmi, brute_tfidf

A, B, C, D = 5, 6, 7, 8
FOUR = [[A, B], [A, B], [A, C], [D]]


random_corpus = st.lists(
    st.lists(st.integers(NUM_RESERVED, NUM_RESERVED + 11), min_size=1, max_size=6),
    min_size=1, max_size=8)


# ---------------------------------------------------------------- counting
def test_word_in_every_window():
    stats = count_cooccurrence(as_corpora(FOUR))
    assert stats.windows == 4 and stats.count(A) == 3
    stats = count_cooccurrence(as_corpora([[A, B]] * 4))
    assert stats.count(A) / stats.windows == 1


def test_disjoint_words_have_zero_joint():
    assert count_cooccurrence(as_corpora(FOUR)).joint(B, D) == 0


def test_presence_counted_once_per_window():
    stats = count_cooccurrence(as_corpora([[A, A, B, B, B]]))
    assert stats.count(A) == 1 and stats.joint(A, B) == 1


def test_empty_corpus():
    with pytest.raises(GraphError):
        count_cooccurrence([])


@settings(max_examples=100, deadline=None)
@given(random_corpus)
def test_counts_match_brute_force(sentences):
    stats = count_cooccurrence(as_corpora(sentences))
    words = sorted({w for s in sentences for w in s})
    for i in words:
        for j in words:
            ci, cj, cij = brute_counts(sentences, i, j)
            assert stats.count(i) == ci and stats.joint(i, j) == cij
            assert cij <= min(ci, cj) <= stats.windows


# -------------------------------------------------------------------- npmi
def test_npmi_four_sentence_example():
    stats = count_cooccurrence(as_corpora(FOUR))
    assert abs(npmi(stats, A, B) - math.log(4 / 3) / math.log(2)) <= 1e-12
    assert abs(npmi(stats, A, B) - 0.4150) < 5e-5


def test_npmi_perfect_association():
    stats = count_cooccurrence(as_corpora([[A, B], [C], [A, B], [D]]))
    assert npmi(stats, A, B) == 1.0


def test_npmi_independent_words():
    # p(a) = p(b) = 1/2, p(a, b) = 1/4
    stats = count_cooccurrence(as_corpora([[A, B], [A], [B], [C]]))
    assert abs(npmi(stats, A, B)) < 1e-15


def test_npmi_joint_probability_one():
    stats = count_cooccurrence(as_corpora([[A, B]] * 3))
    assert npmi(stats, A, B) == 1.0


def test_npmi_undefined_without_joint():
    assert npmi(count_cooccurrence(as_corpora(FOUR)), B, D) is None


def test_npmi_unknown_word():
    with pytest.raises(GraphError):
        npmi(count_cooccurrence(as_corpora(FOUR)), A, 99)


@settings(max_examples=100, deadline=None)
@given(random_corpus)
def test_npmi_matches_oracle_symmetric_and_bounded(sentences):
    stats = count_cooccurrence(as_corpora(sentences))
    words = sorted({w for s in sentences for w in s})
    for i in words:
        for j in words:
            if i == j:
                continue
            value = npmi(stats, i, j)
            assert value == brute_npmi(sentences, i, j)
            assert value == npmi(stats, j, i)
            if value is not None:
                assert -1.0 <= value <= 1.0
                ci, cj, cij = brute_counts(sentences, i, j)
                assert (value == 1.0) == (cij == ci == cj or cij == len(sentences))


# ------------------------------------------------------------------- tf-idf
def test_tfidf_word_everywhere_is_zero():
    assert tfidf(as_corpora([[A, B], [A], [A, C]]), A, 1) == 0.0


def test_tfidf_rare_word():
    sentences = [[A, B]] + [[C]] * 9
    assert abs(tfidf(as_corpora(sentences), B, 0) - math.log(10)) < 1e-12
    assert abs(math.log(10) - 2.3026) < 5e-5


def test_tfidf_raw_count():
    sentences = [[A, A, B], [C]]
    assert tfidf(as_corpora(sentences), A, 0) == 2 * math.log(2)


def test_tfidf_unknown_word():
    with pytest.raises(GraphError):
        tfidf(as_corpora(FOUR), 99, 0)


@settings(max_examples=100, deadline=None)
@given(random_corpus)
def test_tfidf_table_matches_oracle(sentences):
    table = tfidf_table(sentences)
    for d, words in enumerate(sentences):
        raw = {w: brute_tfidf(sentences, w, d) for w in set(words)}
        top = max(raw.values())
        for w in set(words):
            expected = raw[w] / top if top > 0 else 0.0
            assert table[d][w] == expected
            assert 0.0 <= table[d][w] <= 1.0


# -------------------------------------------------------------------- graph
def test_npmi_graph_threshold_examples():
    corpora = as_corpora(FOUR)
    low = build_graph(corpora, 9, "npmi", 0.2)
    assert (A, B, "ww") in low.edge_set()
    weights = dict(zip(zip(low.u.tolist(), low.v.tolist()), low.weight.tolist()))
    assert abs(weights[(A, B)] - math.log(4 / 3) / math.log(2)) < 1e-12
    high = build_graph(corpora, 9, "npmi", 0.99)
    assert all(w == 1.0 for w in high.weight)
    assert high.edge_set() <= low.edge_set()


def test_threshold_above_max_gives_empty_graph():
    g = build_graph(as_corpora([[A, B], [A, C]]), 9, "npmi", 0.9)
    assert g.edge_set() == set()
    assert g.adjacency().shape == (9, 9)


def test_theta_range():
    for theta in (-0.1, 1.0):
        with pytest.raises(GraphError):
            build_graph(as_corpora(FOUR), 9, "npmi", theta)


def test_tfidf_graph_is_bipartite():
    g = build_graph(as_corpora(FOUR), 9, "tfidf", 0.0)
    assert g.num_nodes == 9 + 4
    for u, v, kind in g.edge_set():
        assert kind == "sw" and u < 9 <= v


def test_union_mode():
    corpora = as_corpora(FOUR)
    union = build_graph(corpora, 9, "npmi-tfidf", 0.2)
    assert union.edge_set() == (build_graph(corpora, 9, "npmi", 0.2).edge_set()
                                | build_graph(corpora, 9, "tfidf", 0.2).edge_set())


@settings(max_examples=30, deadline=None)
@given(random_corpus, st.sampled_from(["npmi", "tfidf", "npmi-tfidf"]))
def test_threshold_filtration(sentences, mode):
    corpora = as_corpora(sentences)
    previous = None
    for theta in np.arange(10) / 10:
        edges = build_graph(corpora, NUM_RESERVED + 12, mode, float(theta)).edge_set()
        if previous is not None:
            assert edges <= previous
        previous = edges


def test_graph_file_round_trip(tmp_path):
    g = build_graph(as_corpora(FOUR), 9, "npmi-tfidf", 0.1)
    write_graph(tmp_path / "g.jsonl", g, [f"t{i}" for i in range(9)])
    back = read_graph(tmp_path / "g.jsonl")
    assert back.edge_set() == g.edge_set() and np.array_equal(back.weight, g.weight)
    assert back.num_nodes == g.num_nodes


# ------------------------------------------------------------ normalization
def test_two_node_adjacency():
    assert np.allclose(normalized_adjacency(2, [0], [1]).toarray(), 0.5)


def test_isolated_node_row_is_basis_vector():
    adj = normalized_adjacency(3, [0], [1], [2.0]).toarray()
    assert adj[2].tolist() == [0.0, 0.0, 1.0]


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.data())
def test_adjacency_symmetric_bounded_spectral_radius(n, data):
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    chosen = data.draw(st.lists(st.sampled_from(pairs), unique=True) if pairs else st.just([]))
    weights = data.draw(st.lists(st.floats(0.01, 5.0), min_size=len(chosen), max_size=len(chosen)))
    adj = normalized_adjacency(n, [p[0] for p in chosen], [p[1] for p in chosen], weights).toarray()
    assert np.array_equal(adj, adj.T)
    assert adj.min() >= 0.0 and adj.max() <= 1.0
    x = np.random.default_rng(0).normal(size=n)
    x /= np.linalg.norm(x)
    radius = 0.0
    for _ in range(500):
        y = adj @ x
        radius = np.linalg.norm(y)
        if radius == 0:
            break
        x = y / radius
    assert radius <= 1.0 + 1e-6


# -------------------------------------------------------------------- gcn
def test_isolated_word_uses_only_own_row():
    g = build_graph(as_corpora([[A, B], [A, B], [C]]), 9, "npmi", 0.2)
    enc = SimilarityEncoder(g, 4, np.random.default_rng(0))
    raw = enc.gcn(enc.adj).data
    w1, w2 = enc.gcn.w1.data, enc.gcn.w2.data
    np.testing.assert_allclose(raw[C], np.maximum(np.maximum(w1[C], 0) @ w2, 0), atol=1e-15)
    out = enc().data
    assert out.shape == (9, 4)
    assert not out[C].any() and not out[:NUM_RESERVED].any()


def test_tasg_gcn_gradients():
    g = build_graph(as_corpora([[A, B, C], [A, B], [C, D], [B, D]]), 9, "npmi-tfidf", 0.0)
    enc = SimilarityEncoder(g, 3, np.random.default_rng(1), hidden=4)
    head = np.random.default_rng(2).normal(size=(9, 3))
    err = check_gradients(lambda: (T.tanh(enc()) * head).sum(), enc.parameters())
    assert err <= 1e-4


def test_gcn_with_features_gradients():
    rng = np.random.default_rng(0)
    adj = normalized_adjacency(5, [0, 1, 2, 3], [1, 2, 3, 4], [1.0, 2.0, 3.0, 1.0])
    gcn = GCN(3, 4, 2, rng)
    x = T.Tensor(rng.uniform(-1, 1, (5, 3)), requires_grad=True)
    err = check_gradients(lambda: T.log_softmax(gcn(adj, x), axis=1).sum(), gcn.parameters() + [x])
    assert err <= 1e-4
