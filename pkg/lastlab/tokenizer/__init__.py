"""Vocabulary and trajectory serialization."""

from lastlab.tokenizer.codec import (
    FormatCheck,
    Trajectory,
    parse_trajectory,
    quantize,
    serialize_trajectory,
    validate_format,
)
from lastlab.tokenizer.vocab import Vocabulary

__all__ = [
    "FormatCheck",
    "Trajectory",
    "Vocabulary",
    "parse_trajectory",
    "quantize",
    "serialize_trajectory",
    "validate_format",
]
