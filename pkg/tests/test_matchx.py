import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from sparse_ncnet.matchx import extract_matches, rank_matches
from sparse_ncnet.oracles import dense_argmax_matches, random_sparse_tensor
from sparse_ncnet.tensor import Match, SparseTensor4D


def as_pairs(ms):
    return {(m.a, m.b) for m in ms}


def dense_with_neg_inf(t):
    d = np.full(t.dims, -np.inf)
    d[tuple(t.coords.T)] = t.values[:, 0]
    return d


class TestExtract:
    def test_single_site(self):
        t = SparseTensor4D.from_dict((2, 2, 2, 2), {(1, 0, 1, 1): -3.0})
        assert extract_matches(t) == [Match((1, 0), (1, 1), -3.0)]

    def test_two_sites(self):
        t = SparseTensor4D.from_dict((1, 1, 1, 2), {(0, 0, 0, 0): 1.0, (0, 0, 0, 1): 2.0})
        assert as_pairs(extract_matches(t)) == {((0, 0), (0, 1)), ((0, 0), (0, 0))}

    def test_double_winner_once(self):
        t = SparseTensor4D.from_dict((2, 2, 2, 2), {(0, 0, 0, 0): 5.0, (0, 0, 1, 1): 1.0, (1, 1, 0, 0): 1.0})
        ms = extract_matches(t)
        assert sum(1 for m in ms if (m.a, m.b) == ((0, 0), (0, 0))) == 1

    def test_ties_smallest_index(self):
        t = SparseTensor4D.from_dict((1, 2, 1, 1), {(0, 0, 0, 0): 1.0, (0, 1, 0, 0): 1.0})
        # B cell (0,0) is contested; each A cell still wins its own single-site slice
        assert as_pairs(extract_matches(t)) == {((0, 0), (0, 0)), ((0, 1), (0, 0))}
        t = SparseTensor4D.from_dict((1, 1, 1, 2), {(0, 0, 0, 0): 1.0, (0, 0, 0, 1): 1.0})
        assert as_pairs(extract_matches(t)) == {((0, 0), (0, 0)), ((0, 0), (0, 1))}
        t = SparseTensor4D.from_dict((1, 2, 1, 2), {(0, 0, 0, 0): 1.0, (0, 0, 0, 1): 1.0, (0, 1, 0, 1): 0.0})
        # the A cell (0,0) tie goes to (0,0,0,0); B cell (0,1) tie-free winner is (0,0,0,1)
        assert as_pairs(extract_matches(t)) == {((0, 0), (0, 0)), ((0, 0), (0, 1)), ((0, 1), (0, 1))}

    def test_empty(self):
        assert extract_matches(SparseTensor4D.empty((2, 2, 2, 2))) == []

    def test_dense_oracle(self, rng):
        t = random_sparse_tensor(rng, (5, 5, 5, 5), 120)
        assert as_pairs(extract_matches(t)) == dense_argmax_matches(dense_with_neg_inf(t))

    @given(st.integers(0, 2**32 - 1), st.integers(1, 80))
    @settings(max_examples=40, deadline=None)
    def test_properties(self, seed, n):
        rng = np.random.default_rng(seed)
        t = random_sparse_tensor(rng, (3, 4, 4, 3), n)
        # quantise to create ties
        t = t.with_values(np.round(t.values * 2) / 2)
        ms = extract_matches(t)
        stored = t.to_dict()
        for m in ms:
            assert stored[m.a + m.b] == m.score
        a_slices = {tuple(c[:2]) for c in t.coords.tolist()}
        b_slices = {tuple(c[2:]) for c in t.coords.tolist()}
        assert len(ms) <= len(a_slices) + len(b_slices)
        assert len(as_pairs(ms)) == len(ms)
        scaled = extract_matches(t.with_values(t.values * 3.0))
        shifted = extract_matches(t.with_values(t.values - 4.0))
        assert as_pairs(scaled) == as_pairs(ms) == as_pairs(shifted)
        np.testing.assert_allclose([m.score for m in scaled], [3.0 * m.score for m in ms], rtol=1e-6)


class TestRank:
    def test_order(self):
        ms = [Match((0, 0), (0, 0), 1.0), Match((0, 1), (0, 0), 3.0), Match((1, 0), (0, 0), 2.0)]
        assert [m.score for m in rank_matches(ms)] == [3.0, 2.0, 1.0]

    def test_top_n(self):
        ms = [Match((0, i), (0, 0), float(i)) for i in range(5)]
        assert rank_matches(ms, 10) == rank_matches(ms)
        assert [m.score for m in rank_matches(ms, 2)] == [4.0, 3.0]
        assert rank_matches(ms, 0) == []

    def test_ties_independent_of_input_order(self, rng):
        ms = [Match((i, j), (k, 0), 1.0) for i in range(3) for j in range(2) for k in range(2)]
        want = rank_matches(ms)
        assert [(m.a, m.b) for m in want] == sorted((m.a, m.b) for m in ms)
        for _ in range(5):
            shuffled = [ms[i] for i in rng.permutation(len(ms))]
            assert rank_matches(shuffled) == want
