import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from modesearch.errors import ConfigError, ContractViolation
from modesearch.seqmodel import (
    BiasedCoin,
    ExplicitDistribution,
    IndependentErrors,
    NGramModel,
    NoiseMixture,
    Sequence,
    Template,
    UniformByLength,
    Vocabulary,
    check_normalized,
    entropy_estimate,
    greedy,
    load_model,
    model_from_spec,
    next_logprobs,
    sample,
    sequence_logprob,
    train_ngram,
)
from modesearch.seqmodel.base import StateTable
from modesearch.seqmodel.sampling import sample_batch
from modesearch.search import enumerate_complete

from conftest import small_ngram


def total_mass(model, max_len):
    return sum(np.exp(b.logp).sum() for b in enumerate_complete(model, max_len))


class TestVocabulary:
    def test_eos_is_a_terminator(self):
        v = Vocabulary(("a", "b", "</s>"), eos_id=2)
        assert v.is_terminator(2)
        assert not v.is_terminator(0)
        np.testing.assert_array_equal(v.content_ids, [0, 1])

    def test_encode_decode_round_trip(self):
        v = Vocabulary.from_content(["x", "y"])
        assert v.decode(v.encode(["y", "x", "</s>"])) == ["y", "x", "</s>"]

    def test_unknown_symbol(self):
        with pytest.raises(ContractViolation):
            Vocabulary.from_content(["x"]).index("z")

    def test_json_round_trip(self):
        v = Vocabulary(("a", "b", ".", "</s>"), eos_id=3, terminators=frozenset({2}))
        assert Vocabulary.from_json(json.loads(json.dumps(v.to_json()))) == v


class TestSequenceContract:
    def test_extending_a_complete_prefix_is_rejected(self):
        coin = BiasedCoin(0.6, 3)
        with pytest.raises(ContractViolation):
            coin.next_logprobs((0, 2))

    def test_chain_rule_by_hand(self):
        coin = BiasedCoin(0.6, 3)
        lp = sequence_logprob(coin, (0, 1, 0, 2))
        assert lp == pytest.approx(2 * math.log(0.6) + math.log(0.4), abs=1e-12)

    def test_sequence_of_marks_completion(self):
        v = BiasedCoin(0.5, 1).vocab
        assert Sequence.of((0, 2), v).complete
        assert not Sequence.of((0,), v).complete
        assert Sequence.of((0, 2), v).content == (0,)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_ngram_rows_normalize(self, seed):
        model = small_ngram(seed)
        rng = np.random.default_rng(seed)
        for _ in range(5):
            s = sample(model, max_len=10, rng=rng)
            for t in range(len(s.content) + 1):
                check_normalized(next_logprobs(model, s.content[:t]))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(0, 10_000))
    def test_chain_rule(self, seed):
        model = small_ngram(seed)
        s = sample(model, max_len=10, rng=np.random.default_rng(seed))
        expected = sum(float(next_logprobs(model, s.tokens[:t])[s.tokens[t]]) for t in range(len(s.tokens)))
        assert sequence_logprob(model, s) == pytest.approx(expected, abs=1e-12)


class TestSyntheticModels:
    def test_biased_coin_mass(self):
        assert total_mass(BiasedCoin(0.6, 5), 5) == pytest.approx(1.0, abs=1e-12)

    def test_uniform_by_length_closed_form(self):
        p = [0.1, 0.2, 0.3, 0.4]
        m = UniformByLength(p, 3)
        for length, pl in enumerate(p):
            seq = (1,) * length + (m.vocab.eos_id,)
            assert m.sequence_logprob(seq) == pytest.approx(math.log(pl / 3**length), abs=1e-12)
        assert total_mass(m, 3) == pytest.approx(1.0, abs=1e-12)
        assert m.modal_length() == 3

    def test_template_probabilities(self):
        t = Template()
        eos = t.vocab.eos_id
        assert t.sequence_logprob((0, 0, 0, 0, eos)) == pytest.approx(math.log(1e-4), abs=1e-12)
        assert t.sequence_logprob((1, 2, 3, 4, eos)) == pytest.approx(4 * math.log(0.01), abs=1e-12)
        assert len(t.rare_ids) == 90

    def test_explicit_distribution(self):
        m = ExplicitDistribution([(["a"], 0.5), (["a", "b"], 0.3), ([], 0.2)])
        v = m.vocab
        assert math.exp(m.sequence_logprob(v.encode(["a", "</s>"]))) == pytest.approx(0.5)
        assert math.exp(m.sequence_logprob(v.encode(["a", "b", "</s>"]))) == pytest.approx(0.3)
        assert math.exp(m.sequence_logprob(v.encode(["</s>"]))) == pytest.approx(0.2)
        assert total_mass(m, 3) == pytest.approx(1.0, abs=1e-12)

    def test_independent_errors(self):
        clean = BiasedCoin(1.0, 3)
        m = IndependentErrors(clean, 0.1)
        heads, typo = 0, m.typo_of[0]
        lp = m.sequence_logprob((heads, typo, heads, m.vocab.eos_id))
        assert lp == pytest.approx(2 * math.log(0.9) + math.log(0.1), abs=1e-12)
        assert total_mass(m, 3) == pytest.approx(1.0, abs=1e-12)
        assert m.typo_ids == frozenset(m.typo_of.values())

    def test_noise_mixture_marginals(self):
        clean = UniformByLength([0.0, 0.0, 1.0], 2)
        m = NoiseMixture(clean, 0.3, y_bad=())
        eos = m.vocab.eos_id
        assert math.exp(m.sequence_logprob((eos,))) == pytest.approx(0.3, abs=1e-12)
        assert math.exp(m.sequence_logprob((0, 1, eos))) == pytest.approx(0.7 / 4, abs=1e-12)
        assert total_mass(m, 2) == pytest.approx(1.0, abs=1e-12)

    def test_noise_mixture_nonempty_bad_output(self):
        clean = UniformByLength([0.0, 0.5, 0.5], 2)
        m = NoiseMixture(clean, 0.2, y_bad=(1,))
        eos = m.vocab.eos_id
        assert math.exp(m.sequence_logprob((1, eos))) == pytest.approx(0.2 + 0.8 * 0.25, abs=1e-12)
        assert total_mass(m, 2) == pytest.approx(1.0, abs=1e-12)

    def test_noise_mixture_rejects_terminator_in_bad_output(self):
        clean = BiasedCoin(0.5, 1)
        with pytest.raises(ContractViolation):
            NoiseMixture(clean, 0.1, y_bad=(clean.vocab.eos_id,))

    @pytest.mark.parametrize("profile", [[1.2, -0.2], [0.5, 0.4]])
    def test_uniform_by_length_rejects_bad_profiles(self, profile):
        with pytest.raises(ValueError):
            UniformByLength(profile, 2)


class TestNGram:
    corpus = [["a", "b"], ["a", "b", "b"], ["b"]]

    def test_mass_sums_to_one(self):
        m = train_ngram(self.corpus, 2, delta=0.5)
        # geometric tail beyond max_len is small but not zero
        assert total_mass(m, 12) == pytest.approx(1.0, abs=1e-3)

    def test_add_delta_estimate(self):
        m = train_ngram(self.corpus, 2, delta=0.5)
        v = m.vocab
        lp = m.next_logprobs(v.encode(["a"]))
        # after "a": b seen twice, a and </s> never
        np.testing.assert_allclose(np.exp(lp), np.array([0.5, 2.5, 0.5]) / 3.5, atol=1e-12)

    def test_unseen_state_backs_off_to_unigram(self):
        m = train_ngram(self.corpus, 3, delta=0.5)
        unseen = m.vocab.encode(["b", "a"])
        assert not m.is_seen(m.state_of(unseen))
        check_normalized(m.next_logprobs(unseen))

    def test_json_round_trip(self, tmp_path):
        m = train_ngram(self.corpus, 3, delta=0.2)
        path = tmp_path / "m.json"
        m.save(path)
        m2 = NGramModel.load(path)
        s = m.vocab.encode(["a", "b", "b", "</s>"])
        assert m2.sequence_logprob(s) == m.sequence_logprob(s)


class TestSampling:
    def test_frequencies_match_probabilities(self):
        m = ExplicitDistribution([(["a"], 0.5), (["b"], 0.3), ([], 0.2)])
        rng = np.random.default_rng(0)
        n = 20_000
        counts = {}
        for _ in range(n):
            s = sample(m, rng=rng)
            counts[s.tokens] = counts.get(s.tokens, 0) + 1
        v = m.vocab
        for toks, p in [(["a"], 0.5), (["b"], 0.3), ([], 0.2)]:
            freq = counts[v.encode(toks + ["</s>"])] / n
            assert abs(freq - p) < 4 * math.sqrt(p * (1 - p) / n)

    def test_truncation_flag(self):
        m = UniformByLength([0.0, 0.0, 0.0, 1.0], 2)
        s = sample(m, max_len=2, rng=np.random.default_rng(0))
        assert s.truncated and s.complete and len(s.content) == 2

    def test_greedy_follows_argmax(self):
        assert greedy(BiasedCoin(0.7, 4)).tokens == (0, 0, 0, 0, 2)

    def test_batch_lengths_follow_the_profile(self):
        p = np.array([0.1, 0.2, 0.4, 0.2, 0.1])
        m = UniformByLength(p, 3)
        table = StateTable(m)
        n = 20_000
        batch = sample_batch(table, table.initial(), n, 10, np.random.default_rng(3))
        assert batch.terminated.all()
        freq = np.bincount(batch.lengths, minlength=len(p)) / n
        assert np.all(np.abs(freq - p) < 4 * np.sqrt(p * (1 - p) / n))

    def test_batch_logprobs_match_the_chain_rule(self):
        m = small_ngram(11)
        table = StateTable(m)
        batch = sample_batch(table, table.initial(), 50, 8, np.random.default_rng(0))
        for row, lp, done in zip(batch.tokens, batch.logprob, batch.terminated):
            toks = tuple(int(t) for t in row if t >= 0)
            if done:
                assert lp == pytest.approx(m.sequence_logprob(toks), abs=1e-9)

    def test_entropy_of_coin(self):
        est = entropy_estimate(BiasedCoin(0.5, 6), 200, rng=np.random.default_rng(1))
        np.testing.assert_allclose(est.per_sample_nll, 6 * math.log(2), atol=1e-12)

    def test_entropy_excludes_truncated_samples(self):
        m = UniformByLength([0.5, 0.0, 0.0, 0.5], 2)
        est = entropy_estimate(m, 400, rng=np.random.default_rng(2), max_len=3)
        # every length-3 output is cut off, so only the empty output remains
        assert est.n_truncated + len(est.per_sample_nll) == 400
        np.testing.assert_allclose(est.per_sample_nll, math.log(2), atol=1e-12)


class TestSpecs:
    def test_every_family_loads(self, tmp_path):
        specs = [
            {"family": "biased_coin", "p_heads": 0.6, "n_flips": 3},
            {"family": "uniform_by_length", "length_profile": [0.5, 0.5], "v": 2},
            {"family": "template"},
            {"family": "explicit", "outputs": [[["a"], 1.0]]},
            {"family": "independent_errors", "p_e": 0.1, "clean": {"family": "biased_coin", "p_heads": 1.0, "n_flips": 2}},
            {"family": "noise_mixture", "epsilon": 0.1, "y_bad": [], "clean": {"family": "template", "slots": 2}},
        ]
        for spec in specs:
            m = model_from_spec(spec)
            assert model_from_spec(m.to_spec()).to_spec() == m.to_spec()

    def test_ngram_from_corpus(self, tmp_path):
        (tmp_path / "c.txt").write_text("a b\nb\n")
        spec = {"family": "ngram", "corpus": "c.txt", "order": 2}
        (tmp_path / "m.json").write_text(json.dumps(spec))
        assert isinstance(load_model(tmp_path / "m.json"), NGramModel)

    def test_error_names_the_field(self):
        with pytest.raises(ConfigError) as err:
            model_from_spec({"family": "biased_coin", "p_heads": 0.5})
        assert err.value.field == "model.n_flips"
        with pytest.raises(ConfigError) as err:
            model_from_spec({"family": "noise_mixture", "epsilon": 0.1, "clean": {"family": "dragon"}})
        assert err.value.field == "model.clean.family"
