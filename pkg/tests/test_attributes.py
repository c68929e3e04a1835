import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import logsumexp
from scipy.stats import binom

from modesearch.attributes import (
    N_LENGTH_CLASSES,
    ExactDPPosterior,
    MonteCarloPosterior,
    TabularPredictor,
    UniformPredictor,
    bucket_bounds,
    emptiness_attribute,
    length_attribute,
    length_bucket,
    rare_word_count_attribute,
    token_count_attribute,
    typo_count_attribute,
)
from modesearch.errors import ContractViolation, EnumerationCapExceeded
from modesearch.search import brute_force_mode, brute_force_value_distribution
from modesearch.seqmodel import (
    BiasedCoin,
    IndependentErrors,
    Sequence,
    Template,
    UniformByLength,
    sample,
    train_ngram,
)

from conftest import small_ngram

TOY_CORPUS = [
    ["the", "cat"], ["the", "dog", "ran"], ["a", "cat", "ran"], ["the", "cat", "ran", "far"],
    ["dog"], ["a", "dog"], ["the", "dog", "ran", "far", "away"], [],
]


def toy_bigram():
    return train_ngram(TOY_CORPUS, 2, delta=0.3)


class TestAttributes:
    def test_emptiness(self):
        a = emptiness_attribute()
        assert a.evaluate(Sequence((2,), True)) == 1
        assert a.evaluate(Sequence((0, 2), True)) == 0

    def test_incomplete_sequence_is_rejected(self):
        with pytest.raises(ContractViolation):
            emptiness_attribute().evaluate(Sequence((0,), False))

    def test_rare_word_count(self):
        t = Template()
        a = rare_word_count_attribute(t)
        eos = t.vocab.eos_id
        assert a.evaluate(Sequence((0, 0, 0, 0, eos), True)) == 0
        assert a.evaluate(Sequence((5, 17, 90, 1, eos), True)) == 4
        assert a.n_classes == 5

    def test_typo_count(self):
        m = IndependentErrors(BiasedCoin(0.5, 3), 0.2)
        a = typo_count_attribute(m)
        t = m.typo_of[0]
        assert a.evaluate(Sequence((t, 1, t, m.vocab.eos_id), True)) == 2

    def test_length_classes(self):
        a = length_attribute()
        assert a.n_classes == N_LENGTH_CLASSES == 24
        assert a.evaluate(Sequence((0,) * 20 + (2,), True)) == length_bucket(20)
        exact = length_attribute(max_tracked=8, bucketed=False)
        assert exact.evaluate(Sequence((0,) * 5 + (2,), True)) == 5
        assert exact.evaluate(Sequence((0,) * 30 + (2,), True)) == 8


class TestLengthBuckets:
    @pytest.mark.parametrize("remaining, cls", [(0, 0), (16, 16), (17, 17), (20, 17), (21, 18), (32, 20),
                                                 (33, 21), (48, 21), (49, 22), (64, 22), (65, 23), (200, 23)])
    def test_table(self, remaining, cls):
        assert length_bucket(remaining) == cls

    def test_partition(self):
        classes = [length_bucket(r) for r in range(201)]
        assert sorted(set(classes)) == list(range(24))
        assert all(b >= a for a, b in zip(classes, classes[1:]))
        for cls in range(24):
            lo, hi = bucket_bounds(cls)
            members = [r for r in range(201) if length_bucket(r) == cls]
            assert members[0] == lo
            assert members[-1] == (200 if hi is None else hi)

    def test_negative(self):
        with pytest.raises(ValueError):
            length_bucket(-1)


class TestExactDP:
    def test_uniform_by_length_matches_profile(self):
        p = np.array([0.05, 0.1, 0.2, 0.3, 0.2, 0.1, 0.05])
        d = ExactDPPosterior(UniformByLength(p, 3), length_attribute())
        post = np.exp(d.posterior(()))
        np.testing.assert_allclose(post[:7], p, atol=1e-12)
        np.testing.assert_allclose(post[7:], 0.0, atol=1e-12)

    def test_deterministic_continuation(self):
        n = 10
        coin = BiasedCoin(1.0, n)
        d = ExactDPPosterior(coin, length_attribute())
        for t in range(n):
            post = np.exp(d.query((0,) * t, 0))
            assert post[length_bucket(n - t - 1)] == pytest.approx(1.0, abs=1e-12)
            lp = d.target_logprobs((0,) * t, [0], n)
            assert lp[0] == pytest.approx(0.0, abs=1e-12)

    def test_heads_count_is_binomial(self):
        coin = BiasedCoin(0.6, 7)
        d = ExactDPPosterior(coin, token_count_attribute("heads", [0], 7))
        np.testing.assert_allclose(np.exp(d.posterior(())), binom.pmf(range(8), 7, 0.6), atol=1e-12)

    def test_template_rare_count_matches_enumeration(self):
        t = Template()
        a = rare_word_count_attribute(t)
        d = ExactDPPosterior(t, a)
        dist = brute_force_value_distribution(t, a.increments(t.vocab), 4, cap=10**8)
        want = [dist.get(v, 0.0) for v in range(5)]
        np.testing.assert_allclose(np.exp(d.posterior(())), want, atol=1e-12)

    def test_count_attribute_with_zero_increment_cycles(self):
        m = small_ngram(7, 3, 2)
        a = token_count_attribute("t0", [0], 6)
        d = ExactDPPosterior(m, a)
        dist = brute_force_value_distribution(m, a.increments(m.vocab), 9, cap=10**6)
        post = np.exp(d.posterior(()))
        # enumeration is truncated at 9 tokens, so compare the well-covered low counts
        np.testing.assert_allclose(post[:3], [dist.get(v, 0.0) for v in range(3)], atol=2e-3)

    def test_cap(self):
        with pytest.raises(EnumerationCapExceeded):
            ExactDPPosterior(BiasedCoin(0.5, 200), length_attribute(), cap=1000)

    def test_matches_monte_carlo(self):
        m = toy_bigram()
        d = ExactDPPosterior(m, length_attribute())
        rng = np.random.default_rng(3)
        n = 100_000
        mc = MonteCarloPosterior(m, length_attribute(), n, seed=11, smoothing=0.0)
        prefixes = set()
        while len(prefixes) < 20:
            s = sample(m, max_len=12, rng=rng)
            t = int(rng.integers(0, len(s.content) + 1))
            prefixes.add(s.content[:t])
        for prefix in sorted(prefixes):
            p = np.exp(d.posterior(prefix))
            q = np.exp(mc.posterior(prefix))
            # 3 standard errors on per-prefix summaries; a per-class check would make
            # 480 comparisons, where a few 3-sigma excursions are expected by chance
            top = int(np.argmax(p))
            assert abs(q[top] - p[top]) <= 3 * math.sqrt(p[top] * (1 - p[top]) / n), prefix
            # posterior mean of remaining length, classes 0..16 are exact lengths here
            mean_p, mean_q = p[:17] @ np.arange(17), q[:17] @ np.arange(17)
            sd = math.sqrt(p[:17] @ (np.arange(17) - mean_p) ** 2)
            assert abs(mean_q - mean_p) <= 3 * sd / math.sqrt(n)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 100_000))
    def test_temporal_consistency_length(self, seed):
        m = small_ngram(seed)
        horizon = 40
        d = ExactDPPosterior(m, length_attribute(max_tracked=horizon, bucketed=False))
        prefix = sample(m, max_len=3, rng=np.random.default_rng(seed)).content
        here = np.exp(d.posterior(prefix))
        lp = m.next_logprobs(prefix)
        mixed = np.zeros(horizon + 1)
        mixed[0] = np.exp(lp[m.vocab.terminator_ids]).sum()
        for w in m.vocab.content_ids:
            child = np.exp(d.query(prefix, int(w)))
            mixed[1:] += math.exp(lp[w]) * child[:-1]
        np.testing.assert_allclose(mixed[: horizon - 1], here[: horizon - 1], atol=1e-10)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 100_000))
    def test_temporal_consistency_count(self, seed):
        m = small_ngram(seed, n_content=3)
        d = ExactDPPosterior(m, token_count_attribute("t1", [1], 30))
        prefix = sample(m, max_len=3, rng=np.random.default_rng(seed)).content
        lp = m.next_logprobs(prefix)
        mixed = sum(math.exp(lp[w]) * np.exp(d.query(prefix, int(w))) for w in range(len(m.vocab)))
        np.testing.assert_allclose(mixed[:-2], np.exp(d.posterior(prefix))[:-2], atol=1e-10)


class TestMonteCarlo:
    def test_deterministic_model_point_mass(self):
        coin = BiasedCoin(1.0, 6)
        unsmoothed = MonteCarloPosterior(coin, length_attribute(), 3, smoothing=0.0)
        post = np.exp(unsmoothed.query((0, 0), 0))
        assert post[3] == 1.0
        smoothed = MonteCarloPosterior(coin, length_attribute(), 50)
        post = np.exp(smoothed.query((0, 0), 0))
        assert int(np.argmax(post)) == 3
        assert post[3] == pytest.approx(51 / (50 + 24))

    def test_binomial_heads(self):
        n_flips, n = 8, 50_000
        coin = BiasedCoin(0.6, n_flips)
        mc = MonteCarloPosterior(coin, token_count_attribute("heads", [0], n_flips), n, seed=5, smoothing=0.0)
        q = np.exp(mc.posterior(()))
        p = binom.pmf(range(n_flips + 1), n_flips, 0.6)
        assert np.all(np.abs(q - p) <= 3 * np.sqrt(p * (1 - p) / n))

    def test_queries_are_order_independent(self):
        m = toy_bigram()
        a = MonteCarloPosterior(m, length_attribute(), 200, seed=9)
        b = MonteCarloPosterior(m, length_attribute(), 200, seed=9)
        first = a.query((1,), 2)
        b.query((0,), 1)
        np.testing.assert_array_equal(b.query((1,), 2), first)


class TestTabular:
    def test_zero_samples_is_uniform(self):
        t = TabularPredictor.train(toy_bigram(), length_attribute(), 0)
        np.testing.assert_allclose(t.posterior((0,)), np.full(24, -math.log(24)))

    def test_converges_to_dp_on_first_order_model(self):
        m = toy_bigram()
        attr = length_attribute()
        d = ExactDPPosterior(m, attr)
        t = TabularPredictor.train(m, attr, 100_000, rng=4, use_position=False)
        for w in m.vocab.content_ids:
            prefix = (int(w),)
            tv = 0.5 * np.abs(np.exp(t.posterior(prefix)) - np.exp(d.posterior(prefix))).sum()
            assert tv <= 0.02, (prefix, tv)

    def test_position_keys_at_frequent_prefixes(self):
        m = toy_bigram()
        attr = length_attribute()
        d = ExactDPPosterior(m, attr)
        t = TabularPredictor.train(m, attr, 100_000, rng=4)
        tv = 0.5 * np.abs(np.exp(t.posterior(())) - np.exp(d.posterior(()))).sum()
        assert tv <= 0.02

    def test_unseen_key_backs_off_to_marginal(self):
        m = toy_bigram()
        t = TabularPredictor.train(m, length_attribute(), 500, rng=1)
        far = (0,) * 200
        expected = t._smoothed(t.marginal, 200)
        np.testing.assert_allclose(t.posterior(far), expected)

    def test_json_round_trip(self, tmp_path):
        m = toy_bigram()
        attr = length_attribute()
        t = TabularPredictor.train(m, attr, 300, rng=2)
        path = tmp_path / "table.json"
        t.save(path)
        import json

        t2 = TabularPredictor.from_json(json.loads(path.read_text()), m, attr)
        for prefix in [(), (1,), (1, 3), (0, 0, 0)]:
            np.testing.assert_array_equal(t2.posterior(prefix), t.posterior(prefix))


class TestPredictorContract:
    @pytest.mark.parametrize("kind", ["dp", "mc", "tabular", "uniform"])
    def test_queries_normalize(self, kind):
        m = toy_bigram()
        attr = length_attribute()
        pred = {
            "dp": lambda: ExactDPPosterior(m, attr),
            "mc": lambda: MonteCarloPosterior(m, attr, 100, seed=1),
            "tabular": lambda: TabularPredictor.train(m, attr, 200, rng=1),
            "uniform": lambda: UniformPredictor(m, attr),
        }[kind]()
        rng = np.random.default_rng(0)
        for _ in range(10):
            prefix = sample(m, max_len=5, rng=rng).content[:2]
            for w in range(len(m.vocab)):
                assert logsumexp(pred.query(prefix, w)) == pytest.approx(0.0, abs=1e-6)

    @pytest.mark.parametrize("kind", ["dp", "mc", "tabular"])
    def test_complete_inputs_are_point_masses(self, kind):
        m = toy_bigram()
        attr = length_attribute()
        pred = {
            "dp": lambda: ExactDPPosterior(m, attr),
            "mc": lambda: MonteCarloPosterior(m, attr, 100, seed=1),
            "tabular": lambda: TabularPredictor.train(m, attr, 200, rng=1),
        }[kind]()
        post = pred.query((1, 2), m.vocab.eos_id)
        assert post[0] == 0.0 and np.all(np.isneginf(post[1:]))

    def test_target_logprobs_floor(self):
        coin = BiasedCoin(1.0, 3)
        d = ExactDPPosterior(coin, length_attribute())
        lp = d.target_logprobs((0,), [0, coin.vocab.eos_id], 1)
        assert lp[1] == 0.0
        assert lp[0] == -1e9


class TestModeAttributeMismatch:
    def test_most_likely_length_is_not_the_length_of_the_mode(self):
        profile = np.array([1.0, 1.5, 2.0, 2.5, 3.0, 2.0])
        profile /= profile.sum()
        m = UniformByLength(profile, 2)
        attr = length_attribute(bucketed=False, max_tracked=10)
        dist = brute_force_value_distribution(m, attr.increments(m.vocab), 5)
        modal_length = max(dist, key=dist.get)
        mode = brute_force_mode(m, 5).best
        assert modal_length == 4
        assert attr.evaluate(mode) == 0
        assert modal_length != attr.evaluate(mode)
