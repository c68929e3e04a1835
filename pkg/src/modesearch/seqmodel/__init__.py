"""Token/sequence primitives, the model contract, analytic toy models and n-grams."""

from modesearch.seqmodel.base import (
    Sequence,
    SequenceModel,
    StateTable,
    check_normalized,
    next_logprobs,
    sequence_logprob,
)
from modesearch.seqmodel.ngram import NGramModel, random_ngram, read_corpus, train_ngram
from modesearch.seqmodel.sampling import EntropyEstimate, entropy_estimate, greedy, sample
from modesearch.seqmodel.specs import load_model, model_from_spec
from modesearch.seqmodel.synthetic import (
    BiasedCoin,
    ExplicitDistribution,
    IndependentErrors,
    NoiseMixture,
    Template,
    UniformByLength,
)
from modesearch.seqmodel.vocab import DEFAULT_EOS, Vocabulary

__all__ = [
    "BiasedCoin",
    "DEFAULT_EOS",
    "EntropyEstimate",
    "ExplicitDistribution",
    "IndependentErrors",
    "NGramModel",
    "NoiseMixture",
    "Sequence",
    "SequenceModel",
    "StateTable",
    "Template",
    "UniformByLength",
    "Vocabulary",
    "check_normalized",
    "entropy_estimate",
    "greedy",
    "load_model",
    "model_from_spec",
    "next_logprobs",
    "random_ngram",
    "read_corpus",
    "sample",
    "sequence_logprob",
    "train_ngram",
]
