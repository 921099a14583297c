"""Label-smoothing length bias in beam search: models, decoders, and metrics."""

from lsbias.core import (
    DegenerateInputError,
    DomainError,
    InputError,
    Vocabulary,
    make_vocab,
    sequence_logprob,
    validate_dist,
)
from lsbias.smoothing import (
    LengthBound,
    RectifierConfig,
    SmoothingConfig,
    debias_exact,
    length_bound,
    per_token_penalty,
    rectify,
    score_bounds,
    smooth,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateInputError",
    "DomainError",
    "InputError",
    "LengthBound",
    "RectifierConfig",
    "SmoothingConfig",
    "Vocabulary",
    "debias_exact",
    "length_bound",
    "make_vocab",
    "per_token_penalty",
    "rectify",
    "score_bounds",
    "sequence_logprob",
    "smooth",
    "validate_dist",
]
