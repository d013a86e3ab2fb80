import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from autotta.aggregate import (
    AggregateError,
    PcaModel,
    ZeroNormError,
    crow,
    gem,
    l2_normalize,
    mac,
    pca_apply,
    pca_fit,
    postprocess,
    rmac,
    rmac_regions,
    spoc,
)


def random_map(seed, c=8, h=4, w=4, nonneg=True):
    rng = np.random.default_rng(seed)
    fmap = rng.uniform(0 if nonneg else -1, 1, size=(c, h, w))
    return fmap


class TestMac:
    def test_small_example(self):
        fmap = np.array([[[1, 3], [2, 0]], [[0, 5], [4, 4]]], dtype=float)
        assert np.array_equal(mac(fmap), [3, 5])

    def test_constant(self):
        assert np.array_equal(mac(np.full((3, 2, 2), 7.0)), [7, 7, 7])

    def test_brute_force(self):
        fmap = random_map(1)
        expected = [
            max(fmap[c, i, j] for i in range(4) for j in range(4)) for c in range(8)
        ]
        assert np.array_equal(mac(fmap), expected)


class TestSpoc:
    def test_small_example(self):
        fmap = np.array([[[1, 3], [2, 0]]], dtype=float)
        assert spoc(fmap)[0] == 6

    def test_brute_force(self):
        fmap = random_map(2)
        expected = [
            sum(fmap[c, i, j] for i in range(4) for j in range(4)) for c in range(8)
        ]
        assert np.allclose(spoc(fmap), expected, atol=1e-12)


class TestGem:
    def test_p1_is_mean(self):
        fmap = random_map(3) + 0.1
        assert np.allclose(gem(fmap, 1.0), fmap.mean(axis=(1, 2)), atol=1e-9)

    def test_p3_hand_value(self):
        fmap = np.array([[[1.0, 3.0], [2.0, 0.0]]])
        # clamped zero contributes ~0; ((1+27+8)/4)^(1/3) = 9^(1/3)
        assert gem(fmap, 3.0)[0] == pytest.approx(9 ** (1 / 3), rel=1e-4)

    def test_large_p_approaches_mac(self):
        fmap = np.array([[[1.0, 3.0], [2.0, 0.0]]])
        assert gem(fmap, 64.0)[0] == pytest.approx(3.0, rel=0.05)

    def test_nonpositive_p_rejected(self):
        with pytest.raises(AggregateError):
            gem(random_map(4), 0.0)

    def test_monotone_in_p(self):
        fmap = random_map(5)
        values = [gem(fmap, p) for p in (1.0, 2.0, 4.0, 8.0)]
        for a, b in zip(values, values[1:]):
            assert np.all(b >= a - 1e-9)


class TestRmac:
    def test_levels1_is_normalized_mac(self):
        fmap = random_map(6)
        assert np.allclose(rmac(fmap, 1), l2_normalize(mac(fmap)), atol=1e-12)

    def test_constant_map_uniform_direction(self):
        fmap = np.full((4, 3, 3), 2.0)
        v = rmac(fmap, 2)
        assert np.allclose(l2_normalize(v), np.full(4, 0.5), atol=1e-9)

    def test_brute_force_region_enumeration(self):
        fmap = random_map(7, c=3, h=2, w=2)
        regions = rmac_regions(2, 2, 2)
        expected = np.zeros(3)
        for x, y, w, h in regions:
            v = fmap[:, y : y + h, x : x + w].max(axis=(1, 2))
            expected += v / np.linalg.norm(v)
        assert np.allclose(rmac(fmap, 2), expected, atol=1e-12)

    def test_regions_clamped_to_map(self):
        for x, y, w, h in rmac_regions(5, 3, 3):
            assert 0 <= x and x + w <= 5
            assert 0 <= y and y + h <= 3

    def test_bad_levels(self):
        with pytest.raises(AggregateError):
            rmac(random_map(8), 0)


class TestCrow:
    def test_uniform_map_proportional_to_spoc(self):
        fmap = np.full((4, 3, 3), 0.5)
        v = crow(fmap)
        s = spoc(fmap)
        ratio = v / s
        assert np.allclose(ratio, ratio[0], atol=1e-9)

    def test_single_nonzero_location(self):
        fmap = np.zeros((4, 3, 3))
        fmap[:, 1, 2] = [1.0, 2.0, 3.0, 4.0]
        v = crow(fmap)
        column = fmap[:, 1, 2]
        ratio = v / column
        assert np.allclose(ratio, ratio[0], atol=1e-9)

    def test_oracle_equivalence(self):
        fmap = random_map(9)
        c, h, w = fmap.shape
        # independent loop-based reimplementation
        s = np.zeros((h, w))
        for i in range(h):
            for j in range(w):
                s[i, j] = sum(fmap[k, i, j] for k in range(c))
        z = sum(abs(s[i, j]) ** 2 for i in range(h) for j in range(w)) ** 0.5
        spatial = np.zeros((h, w))
        for i in range(h):
            for j in range(w):
                spatial[i, j] = math.copysign((abs(s[i, j]) / z) ** 0.5, s[i, j])
        q = [np.mean(fmap[k] > 0) for k in range(c)]
        qsum = sum(q)
        expected = np.zeros(c)
        for k in range(c):
            wk = math.log(qsum / q[k]) if q[k] > 0 else 0.0
            expected[k] = wk * sum(
                fmap[k, i, j] * spatial[i, j] for i in range(h) for j in range(w)
            )
        assert np.allclose(crow(fmap), expected, atol=1e-10)


class TestPca:
    def test_identical_vectors(self):
        corpus = np.tile([1.0, 2.0, 3.0], (5, 1))
        model = pca_fit(corpus, 2, eigen_floor=1e-8)
        assert np.allclose(model.whitening_scale, 1e4, atol=1e-3)
        assert np.allclose(pca_apply(model, corpus[0]), 0.0, atol=1e-9)

    def test_hand_eigendecomposition(self):
        corpus = np.array([[1, 0], [-1, 0], [0, 2], [0, -2]], dtype=float)
        model = pca_fit(corpus, 2)
        # principal axes are the coordinate axes; eigenvalues 2 and 1/2
        for row in model.components:
            assert np.allclose(np.abs(row), [0, 1], atol=1e-9) or np.allclose(
                np.abs(row), [1, 0], atol=1e-9
            )
        whitened = np.stack([pca_apply(model, v) for v in corpus])
        assert np.allclose(whitened.var(axis=0), 1.0, atol=1e-9)

    def test_full_rank_whitening(self):
        rng = np.random.default_rng(10)
        corpus = rng.standard_normal((200, 6)) @ rng.standard_normal((6, 6))
        model = pca_fit(corpus, 6)
        whitened = np.stack([pca_apply(model, v) for v in corpus])
        cov = np.cov(whitened.T, bias=True)
        assert np.allclose(cov, np.eye(6), atol=1e-6)

    def test_rows_orthonormal(self):
        rng = np.random.default_rng(11)
        model = pca_fit(rng.standard_normal((50, 8)), 4)
        assert np.allclose(model.components @ model.components.T, np.eye(4), atol=1e-6)

    def test_identity_model_application(self):
        model = PcaModel(
            mean=np.zeros(3), components=np.eye(3), whitening_scale=np.ones(3)
        )
        v = np.array([1.0, -2.0, 0.5])
        assert np.allclose(pca_apply(model, v), v)

    def test_dim_mismatch(self):
        model = PcaModel(
            mean=np.zeros(3), components=np.eye(3), whitening_scale=np.ones(3)
        )
        with pytest.raises(AggregateError):
            pca_apply(model, np.zeros(4))

    def test_corpus_too_small(self):
        with pytest.raises(AggregateError):
            pca_fit(np.zeros((2, 5)), 4)


class TestL2Normalize:
    def test_three_four(self):
        assert np.allclose(l2_normalize(np.array([3.0, 4.0])), [0.6, 0.8])

    def test_unit_unchanged(self):
        v = np.array([0.0, 1.0])
        assert np.allclose(l2_normalize(v), v)

    def test_zero_raises(self):
        with pytest.raises(ZeroNormError):
            l2_normalize(np.zeros(2))

    def test_idempotent(self):
        rng = np.random.default_rng(12)
        v = rng.standard_normal(16)
        once = l2_normalize(v)
        assert np.allclose(l2_normalize(once), once, atol=1e-12)

    def test_postprocess_zero_substitution(self):
        out = postprocess(np.zeros(4))
        assert np.allclose(out, 0.5)


class TestProperties:
    @settings(max_examples=50, deadline=None)
    @given(
        arrays(
            np.float64,
            (4, 3, 3),
            elements=st.floats(0, 10, allow_nan=False),
        )
    )
    def test_mac_geq_mean(self, fmap):
        assert np.all(mac(fmap) >= spoc(fmap) / 9 - 1e-12)
