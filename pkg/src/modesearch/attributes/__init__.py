from modesearch.attributes.core import (
    ATTRIBUTE_NAMES,
    N_LENGTH_CLASSES,
    Attribute,
    attribute_by_name,
    bucket_bounds,
    emptiness_attribute,
    length_attribute,
    length_bucket,
    rare_word_count_attribute,
    token_count_attribute,
    typo_count_attribute,
)
from modesearch.attributes.predictors import (
    LOG_FLOOR,
    AttributePredictor,
    ExactDPPosterior,
    MonteCarloPosterior,
    TabularPredictor,
    UniformPredictor,
    make_predictor,
)

__all__ = [
    "ATTRIBUTE_NAMES",
    "N_LENGTH_CLASSES",
    "LOG_FLOOR",
    "Attribute",
    "AttributePredictor",
    "ExactDPPosterior",
    "MonteCarloPosterior",
    "TabularPredictor",
    "UniformPredictor",
    "attribute_by_name",
    "bucket_bounds",
    "emptiness_attribute",
    "length_attribute",
    "length_bucket",
    "make_predictor",
    "rare_word_count_attribute",
    "token_count_attribute",
    "typo_count_attribute",
]
