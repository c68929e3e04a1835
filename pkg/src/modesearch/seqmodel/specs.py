"""JSON model spec files: ``{"family": ..., parameters...}``."""

from __future__ import annotations

import json
from pathlib import Path

from modesearch.errors import ConfigError
from modesearch.seqmodel.base import SequenceModel
from modesearch.seqmodel.ngram import NGramModel, read_corpus, train_ngram, DEFAULT_DELTA
from modesearch.seqmodel.synthetic import (
    BiasedCoin,
    ExplicitDistribution,
    IndependentErrors,
    NoiseMixture,
    Template,
    UniformByLength,
)

FAMILIES = (
    "biased_coin",
    "uniform_by_length",
    "template",
    "independent_errors",
    "noise_mixture",
    "explicit",
    "ngram",
)

# keys that describe the input rather than the model
METADATA_KEYS = {"reference_length", "id", "comment"}


def _need(spec: dict, key: str, where: str):
    if key not in spec:
        raise ConfigError(f"{where}.{key}", "missing required field")
    return spec[key]


def model_from_spec(spec: dict, base_dir: Path | str = ".", where: str = "model") -> SequenceModel:
    if not isinstance(spec, dict):
        raise ConfigError(where, "model spec must be a JSON object")
    family = _need(spec, "family", where)
    base_dir = Path(base_dir)
    try:
        if family == "biased_coin":
            return BiasedCoin(_need(spec, "p_heads", where), int(_need(spec, "n_flips", where)))
        if family == "uniform_by_length":
            return UniformByLength(_need(spec, "length_profile", where), int(_need(spec, "v", where)))
        if family == "template":
            return Template(
                int(spec.get("slots", 4)),
                float(spec.get("common_prob", 0.1)),
                int(spec.get("rare_count", 90)),
            )
        if family == "explicit":
            return ExplicitDistribution(_need(spec, "outputs", where))
        if family == "independent_errors":
            clean = model_from_spec(_need(spec, "clean", where), base_dir, f"{where}.clean")
            return IndependentErrors(clean, float(_need(spec, "p_e", where)))
        if family == "noise_mixture":
            clean = model_from_spec(_need(spec, "clean", where), base_dir, f"{where}.clean")
            y_bad = clean.vocab.encode(spec.get("y_bad", []))
            return NoiseMixture(clean, float(_need(spec, "epsilon", where)), y_bad)
        if family == "ngram":
            if "counts" in spec:
                return NGramModel.from_json(spec)
            if "model" in spec:
                return NGramModel.load(base_dir / spec["model"])
            corpus = read_corpus(base_dir / _need(spec, "corpus", where))
            return train_ngram(corpus, int(_need(spec, "order", where)), float(spec.get("delta", DEFAULT_DELTA)))
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError, OSError) as exc:
        raise ConfigError(where, str(exc)) from exc
    raise ConfigError(f"{where}.family", f"unknown family {family!r}; expected one of {', '.join(FAMILIES)}")


def load_model(path) -> SequenceModel:
    path = Path(path)
    try:
        spec = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(str(path), f"cannot read model spec: {exc}") from exc
    return model_from_spec(spec, path.parent, where=path.name)


def read_spec(path) -> dict:
    return json.loads(Path(path).read_text())
