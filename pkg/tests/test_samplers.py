from __future__ import annotations

import math

import numpy as np
import pytest

from memex.samplers import (
    SamplerConfig,
    TokenRule,
    commit_probability,
    commit_token,
    derive_seed,
    gumbel_select,
    select_positions,
    substream,
    temperature_transform,
    topk_transform,
)


class TestTemperature:
    def test_unit_temperature_is_identity_on_probs(self):
        p = np.array([0.5, 0.3, 0.2])
        np.testing.assert_allclose(temperature_transform(p, 1.0), p, rtol=1e-12)

    def test_unit_temperature_is_softmax_on_logits(self):
        logits = np.array([2.0, 0.0, -1.0])
        expected = np.exp(logits) / np.exp(logits).sum()
        np.testing.assert_allclose(
            temperature_transform(logits, 1.0, logits=True), expected, rtol=1e-12
        )

    def test_low_temperature_concentrates(self):
        k = 5
        logits = np.linspace(0, 0.1 * math.log(1e3 * k) * (k - 1), k)
        out = temperature_transform(logits, 1e-3, logits=True)
        assert out[-1] >= 0.999

    def test_equal_logits_any_temperature_is_uniform(self):
        for t in (0.01, 1.0, 10.0):
            out = temperature_transform(np.zeros(4), t, logits=True)
            np.testing.assert_allclose(out, 0.25, rtol=1e-12)

    def test_shift_invariance(self):
        logits = np.array([0.3, -1.2, 2.0])
        a = temperature_transform(logits, 0.7, logits=True)
        b = temperature_transform(logits + 123.0, 0.7, logits=True)
        np.testing.assert_allclose(a, b, rtol=1e-9)

    def test_nonpositive_temperature_rejected(self):
        with pytest.raises(ValueError):
            temperature_transform(np.array([0.5, 0.5]), 0.0)


class TestTopK:
    def test_k1_point_mass(self):
        out = topk_transform(np.array([0.2, 0.5, 0.3]), 1)
        np.testing.assert_allclose(out, [0.0, 1.0, 0.0])

    def test_k_equals_vocab_identity(self):
        p = np.array([0.2, 0.5, 0.3])
        np.testing.assert_allclose(topk_transform(p, 3), p, rtol=1e-12)

    def test_renormalization(self):
        out = topk_transform(np.array([0.5, 0.3, 0.2]), 2)
        np.testing.assert_allclose(out, [0.625, 0.375, 0.0], rtol=1e-12)

    def test_k_out_of_range(self):
        for k in (0, 4):
            with pytest.raises(ValueError):
                topk_transform(np.array([0.5, 0.3, 0.2]), k)

    def test_tie_breaks_to_lower_id(self):
        out = topk_transform(np.array([0.25, 0.25, 0.25, 0.25]), 2)
        np.testing.assert_allclose(out, [0.5, 0.5, 0.0, 0.0])


class TestGumbel:
    def test_zero_temperature_greedy(self):
        rng = substream(1, 0)
        probs = np.array([0.1, 0.7, 0.2])
        assert all(gumbel_select(probs, 0.0, rng) == 1 for _ in range(5))

    def test_unit_temperature_matches_categorical(self):
        probs = np.array([0.5, 0.25, 0.125, 0.125])
        rng = substream(2, 0)
        n = 200_000
        counts = np.bincount(
            [gumbel_select(probs, 1.0, rng) for _ in range(n)], minlength=4
        )
        for v, p in enumerate(probs):
            se = math.sqrt(p * (1 - p) / n)
            assert abs(counts[v] / n - p) < 3 * se

    def test_equal_scores_split_evenly(self):
        rng = substream(3, 0)
        n = 100_000
        picks = np.array([gumbel_select(np.array([0.5, 0.5]), 1.0, rng) for _ in range(n)])
        rate = picks.mean()
        assert abs(rate - 0.5) < 3 * math.sqrt(0.25 / n)

    def test_gumbel_chi_square_against_softmax(self):
        # distributional equivalence at unit temperature, chi-square at 1e5 draws
        from scipy.stats import chisquare

        probs = np.array([0.4, 0.3, 0.2, 0.1])
        rng = substream(4, 0)
        n = 100_000
        counts = np.bincount(
            [gumbel_select(probs, 1.0, rng) for _ in range(n)], minlength=4
        )
        stat = chisquare(counts, probs * n)
        assert stat.pvalue > 1e-4

    def test_negative_temperature_rejected(self):
        with pytest.raises(ValueError):
            gumbel_select(np.array([0.5, 0.5]), -1.0, substream(5, 0))

    def test_logit_shift_invariance(self):
        logits = np.array([0.4, -0.3, 1.1])
        for trial in range(50):
            a = gumbel_select(logits, 1.0, substream(10, trial), logits=True)
            b = gumbel_select(logits + 77.0, 1.0, substream(10, trial), logits=True)
            assert a == b


class TestSelectPositions:
    def test_all_positions_either_rule(self):
        conf = {3: 0.9, 7: 0.1, 5: 0.5}
        assert select_positions(conf, 3, "greedy_confidence") == (3, 5, 7)
        assert select_positions(conf, 3, "random_uniform", substream(6, 0)) == (3, 5, 7)

    def test_greedy_tie_breaks_lowest_index(self):
        conf = {3: 0.9, 7: 0.9, 5: 0.2}
        assert select_positions(conf, 1, "greedy_confidence") == (3,)

    def test_random_uniformity(self):
        conf = {0: 0.1, 1: 0.2, 2: 0.3, 3: 0.4}
        rng = substream(7, 0)
        n = 100_000
        counts = np.bincount(
            [select_positions(conf, 1, "random_uniform", rng)[0] for _ in range(n)],
            minlength=4,
        )
        se = math.sqrt(0.25 * 0.75 / n)
        assert np.all(np.abs(counts / n - 0.25) < 3 * se)

    def test_k_too_large(self):
        with pytest.raises(ValueError):
            select_positions({0: 0.5}, 2, "greedy_confidence")


class TestCommitRules:
    def test_commit_probability_matches_empirical(self):
        dist = np.array([0.5, 0.3, 0.2])
        n = 50_000
        rules = (
            TokenRule.argmax(),
            TokenRule.temperature(0.7),
            TokenRule.top_k(2),
            TokenRule.gumbel(0.0),
            TokenRule.gumbel(1.0),
            TokenRule.gumbel(2.0),
        )
        for idx, rule in enumerate(rules):
            rng = substream(8, idx)
            counts = np.bincount(
                [commit_token(dist, rule, rng) for _ in range(n)], minlength=3
            )
            for tok in range(3):
                p = commit_probability(dist, rule, tok)
                se = math.sqrt(max(p * (1 - p), 1e-12) / n)
                assert abs(counts[tok] / n - p) < 4 * se + 1e-9, (rule, tok)

    def test_log_dist_path_agrees(self):
        dist = np.array([0.6, 0.3, 0.1])
        log_dist = np.log(dist)
        for rule in (TokenRule.argmax(), TokenRule.gumbel(1.0), TokenRule.temperature(0.5)):
            a = commit_token(dist, rule, substream(9, 1))
            b = commit_token(None, rule, substream(9, 1), log_dist=log_dist)
            assert a == b


class TestConfigs:
    def test_validation(self):
        with pytest.raises(ValueError):
            TokenRule("temperature", 0.0)
        with pytest.raises(ValueError):
            TokenRule("top_k", 0)
        with pytest.raises(ValueError):
            TokenRule("gumbel", -1.0)
        with pytest.raises(ValueError):
            SamplerConfig("nope", TokenRule.argmax())

    def test_dict_round_trip(self):
        cfg = SamplerConfig("greedy_confidence", TokenRule.top_k(3), seed=99)
        assert SamplerConfig.from_dict(cfg.to_dict()) == cfg


class TestDeterminism:
    def test_substreams_reproducible(self):
        a = substream(42, 1, 2).random(5)
        b = substream(42, 1, 2).random(5)
        c = substream(42, 1, 3).random(5)
        np.testing.assert_array_equal(a, b)
        assert not np.array_equal(a, c)

    def test_derive_seed_stable(self):
        assert derive_seed(1, 2, 3) == derive_seed(1, 2, 3)
        assert derive_seed(1, 2, 3) != derive_seed(1, 3, 2)

    def test_same_seed_same_selection(self):
        conf = {i: float(i) for i in range(10)}
        a = select_positions(conf, 4, "random_uniform", substream(5, 5))
        b = select_positions(conf, 4, "random_uniform", substream(5, 5))
        assert a == b
