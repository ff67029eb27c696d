import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparse_ncnet.errors import ShapeError
from sparse_ncnet.oracles import random_feature_map
from sparse_ncnet.reloc import RelocConfig, hard_reloc, refine_all, soft_reloc, softargmax_offsets
from sparse_ncnet.tensor import FeatureMap, Match, RefinedMatch

OFF3 = np.array(list(itertools.product((-1, 0, 1), repeat=2)), float)
ALL_VALID = np.ones((1, 9), bool)


def orthogonal_maps(h, w, c=None):
    """Two fine maps whose descriptors are all distinct basis vectors."""
    c = c or 2 * h * w
    eye = np.eye(c, dtype=np.float32)
    return FeatureMap(eye[: h * w].reshape(h, w, c)), FeatureMap(eye[h * w : 2 * h * w].reshape(h, w, c))


def plant(fmap, pos, vec):
    v = fmap.values.copy()
    v[pos] = vec
    return FeatureMap(v, fmap.pixel_scale)


class TestHard:
    def test_constructed_even(self):
        fa, fb = orthogonal_maps(6, 6, 80)
        probe = np.zeros(80, np.float32)
        probe[-1] = 1.0
        fa, fb = plant(fa, (2, 4), probe), plant(fb, (4, 0), probe)
        r = hard_reloc(Match((1, 2), (2, 0), 0.5), fa, fb, (3, 3), (3, 3))
        assert (r.a, r.b) == ((2.0, 4.0), (4.0, 0.0))
        assert r.similarity == pytest.approx(1.0)
        assert r.score == 0.5

    def test_constructed_odd(self):
        fa, fb = orthogonal_maps(6, 6, 80)
        probe = np.zeros(80, np.float32)
        probe[-1] = 1.0
        fa, fb = plant(fa, (3, 5), probe), plant(fb, (5, 1), probe)
        r = hard_reloc(Match((1, 2), (2, 0), 0.5), fa, fb)
        assert (r.a, r.b) == ((3.0, 5.0), (5.0, 1.0))

    def test_brute_force(self, rng):
        fa, fb = random_feature_map(rng, 8, 6, 5), random_feature_map(rng, 6, 8, 5)
        for i, j, k, l in itertools.product(range(4), range(3), range(3), range(4)):
            best, arg = -np.inf, None
            for a, b, c, d in itertools.product((0, 1), repeat=4):
                s = float(np.dot(fa.values[2 * i + a, 2 * j + b].astype(float), fb.values[2 * k + c, 2 * l + d]))
                if s > best:
                    best, arg = s, (a, b, c, d)
            r = hard_reloc(Match((i, j), (k, l), 0.0), fa, fb)
            assert r.a == (2 * i + arg[0], 2 * j + arg[1]) and r.b == (2 * k + arg[2], 2 * l + arg[3])
            assert r.similarity == pytest.approx(best, abs=1e-6)

    def test_tie_goes_to_first(self):
        f = FeatureMap(np.tile(np.array([1.0, 0.0], np.float32), (2, 2, 1)))
        r = hard_reloc(Match((0, 0), (0, 0), 1.0), f, f)
        assert (r.a, r.b) == ((0.0, 0.0), (0.0, 0.0))

    def test_frame_mismatch(self, rng):
        f = random_feature_map(rng, 4, 4, 3)
        with pytest.raises(ShapeError):
            hard_reloc(Match((0, 0), (0, 0), 1.0), f, f, (3, 2), (2, 2))
        with pytest.raises(ShapeError):
            hard_reloc(Match((2, 0), (0, 0), 1.0), f, f)


class TestSoftargmax:
    def test_uniform_zero(self):
        d = softargmax_offsets(np.full((1, 9), 0.3), ALL_VALID, RelocConfig())
        assert np.all(np.abs(d) <= 1e-12)

    @pytest.mark.parametrize("cell", range(9))
    def test_closed_form(self, cell):
        scores = np.zeros((1, 9))
        scores[0, cell] = 1.0
        d = softargmax_offsets(scores, ALL_VALID, RelocConfig(10.0))[0]
        # the mirrored cell keeps weight 1/Z, so each moved axis nets (e^t - 1) / Z
        weight = (np.exp(10.0) - 1.0) / (np.exp(10.0) + 8.0)
        np.testing.assert_allclose(d, OFF3[cell] * weight, atol=1e-12)
        # the same value viewed as "within 2e-3 of the offset"
        assert np.all(np.abs(d - OFF3[cell]) <= 2e-3)

    def test_symmetric_axis(self, rng):
        s = rng.standard_normal((3, 3))
        s = (s + s[::-1]) / 2  # symmetric in the row direction
        d = softargmax_offsets(s.reshape(1, 9), ALL_VALID, RelocConfig())[0]
        assert abs(d[0]) <= 1e-12

    def test_divide_mode(self):
        scores = np.zeros((1, 9))
        scores[0, 5] = 1.0
        d = softargmax_offsets(scores, ALL_VALID, RelocConfig(10.0, temperature_mode="divide"))[0]
        w = (np.exp(0.1) - 1) / (np.exp(0.1) + 8)
        np.testing.assert_allclose(d, OFF3[5] * w, atol=1e-12)

    def test_invalid_cells_excluded(self):
        valid = np.ones((1, 9), bool)
        valid[0, :3] = False  # top row outside the map
        d = softargmax_offsets(np.zeros((1, 9)), valid, RelocConfig())[0]
        np.testing.assert_allclose(d, [0.5, 0.0], atol=1e-12)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_properties(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.uniform(-1, 1, (1, 9))
        cfg = RelocConfig(float(rng.uniform(0.5, 20)))
        d = softargmax_offsets(s, ALL_VALID, cfg)
        assert np.all(np.abs(d) <= 1.0)
        np.testing.assert_allclose(softargmax_offsets(s + 3.7, ALL_VALID, cfg), d, atol=1e-6)
        flipped = s.reshape(3, 3)[:, ::-1].reshape(1, 9)
        np.testing.assert_allclose(softargmax_offsets(flipped, ALL_VALID, cfg), d * [1, -1], atol=1e-6)

    @given(st.integers(0, 2**32 - 1))
    @settings(max_examples=60, deadline=None)
    def test_high_temperature_limit(self, seed):
        rng = np.random.default_rng(seed)
        s = rng.uniform(-1, 1, 9)
        top = int(np.argmax(s))
        others = np.delete(np.arange(9), top)
        s[others] = np.minimum(s[others], s[top] - 0.01)
        d = softargmax_offsets(s[None], ALL_VALID, RelocConfig(1000.0))[0]
        assert np.all(np.abs(d - OFF3[top]) <= 1e-3)


class TestSoft:
    def test_moves_toward_planted_neighbour(self):
        fa, fb = orthogonal_maps(6, 6, 80)
        probe = np.zeros(80, np.float32)
        probe[-1] = 1.0
        # B centre matches the A cell one row down and one col right of the A centre
        fa, fb = plant(fa, (3, 3), probe), plant(fb, (2, 2), probe)
        mh = RefinedMatch((2.0, 2.0), (2.0, 2.0), 1.0, (0.0, 0.0), (0.0, 0.0))
        ms = soft_reloc(mh, fa, fb, RelocConfig(10.0))
        w = (np.exp(10.0) - 1.0) / (np.exp(10.0) + 8.0)
        np.testing.assert_allclose(ms.a, (2 + w, 2 + w), atol=1e-9)
        # the B side has no preferred neighbour: every score is zero
        np.testing.assert_allclose(ms.b, (2.0, 2.0), atol=1e-12)

    def test_requires_integer_coordinates(self, rng):
        f = random_feature_map(rng, 4, 4, 3)
        with pytest.raises(ValueError):
            soft_reloc(RefinedMatch((1.5, 1.0), (1.0, 1.0), 0.0, (0, 0), (0, 0)), f, f)


class TestRefineAll:
    def test_none_doubles(self, rng):
        fa, fb = random_feature_map(rng, 8, 6, 4, (4.0, 4.0)), random_feature_map(rng, 6, 8, 4, (4.0, 4.0))
        ms = [Match((1, 2), (0, 3), 0.9), Match((3, 0), (2, 1), 0.1)]
        out = refine_all(ms, fa, fb, RelocConfig(mode="none"))
        assert [(r.a, r.b) for r in out] == [((2, 4), (0, 6)), ((6, 0), (4, 2))]
        # pixel (x, y) of fine cell (row 2, col 4) at 4 px per cell
        assert out[0].pixel_a == (4.5 * 4 - 0.5, 2.5 * 4 - 0.5)

    def test_hard_equals_per_match(self, rng):
        fa, fb = random_feature_map(rng, 8, 6, 4), random_feature_map(rng, 6, 8, 4)
        ms = [Match((i % 4, i % 3), (i % 3, (i * 7) % 4), float(i)) for i in range(300)]
        out = refine_all(ms, fa, fb, RelocConfig(mode="hard"))
        assert out == [hard_reloc(m, fa, fb) for m in ms]

    def test_soft_within_one_cell(self, rng):
        fa, fb = random_feature_map(rng, 10, 8, 6), random_feature_map(rng, 8, 10, 6)
        ms = [Match((i % 5, i % 4), (i % 4, (i * 3) % 5), 0.0) for i in range(200)]
        hard = refine_all(ms, fa, fb, RelocConfig(mode="hard"))
        soft = refine_all(ms, fa, fb, RelocConfig(mode="hard+soft"))
        for h, s in zip(hard, soft):
            assert np.all(np.abs(np.subtract(s.a, h.a)) <= 1.0)
            assert np.all(np.abs(np.subtract(s.b, h.b)) <= 1.0)
            assert s.similarity == h.similarity
        assert soft[7] == soft_reloc(hard[7], fa, fb)

    def test_preserves_order_and_empty(self, rng):
        f = random_feature_map(rng, 4, 4, 3)
        assert refine_all([], f, f) == []
        ms = [Match((1, 1), (0, 0), 2.0), Match((0, 0), (1, 1), 5.0)]
        assert [r.score for r in refine_all(ms, f, f)] == [2.0, 5.0]

    def test_config_validation(self):
        with pytest.raises(ValueError):
            RelocConfig(temperature=0)
        with pytest.raises(ValueError):
            RelocConfig(mode="soft")
