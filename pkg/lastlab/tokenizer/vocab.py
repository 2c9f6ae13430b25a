"""
Discrete vocabulary for the planner.

Token ids are dense from 0 in the order tokens are listed here. Structural
tags are single tokens; image patches and latent slots use placeholder
tokens whose embeddings are replaced inside the model.
"""

import logging
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from lastlab.config.settings import VOCAB_FORMAT

logger = logging.getLogger(__name__)

PAD = "<pad>"
BOS = "<bos>"
EOS = "<eos>"
IMG = "<img>"
LATENT = "<latent>"

WM_START = "<latent_start_wm>"
WM_END = "<latent_end_wm>"
GEO_START = "<latent_start_3d>"
GEO_END = "<latent_end_3d>"
ANSWER_START = "<answer>"
ANSWER_END = "</answer>"

STRUCTURAL_TAGS: Tuple[str, ...] = (WM_START, WM_END, GEO_START, GEO_END, ANSWER_START, ANSWER_END)

DIGITS: Tuple[str, ...] = tuple(str(d) for d in range(10))
PUNCTUATION: Tuple[str, ...] = ("-", ".", ",", ";")
INSTRUCTIONS: Tuple[str, ...] = ("straight", "left", "right", "stop")

# Tokens the decoder may sample inside the answer span
CONTENT_TOKENS: Tuple[str, ...] = DIGITS + PUNCTUATION + (ANSWER_END,)


def speed_token(bucket: int) -> str:
    return f"<v{bucket}>"


def accel_token(bucket: int) -> str:
    return f"<a{bucket}>"


def speed_bucket(speed: float, n_buckets: int = 16, max_speed: float = 12.0) -> int:
    return int(np.clip(np.floor(speed / max_speed * n_buckets), 0, n_buckets - 1))


def accel_bucket(accel: float, n_buckets: int = 16, max_accel: float = 4.0) -> int:
    scaled = (accel + max_accel) / (2.0 * max_accel) * n_buckets
    return int(np.clip(np.floor(scaled), 0, n_buckets - 1))


class Vocabulary:
    """Ordered token set with id lookup."""

    def __init__(self, tokens: Sequence[str]):
        if len(set(tokens)) != len(tokens):
            raise ValueError("vocabulary tokens must be unique")
        self.tokens: Tuple[str, ...] = tuple(tokens)
        self._index: Dict[str, int] = {tok: i for i, tok in enumerate(self.tokens)}

    @classmethod
    def build(cls, speed_buckets: int = 16, accel_buckets: int = 16) -> "Vocabulary":
        tokens = [PAD, BOS, EOS, IMG, LATENT]
        tokens += list(DIGITS) + list(PUNCTUATION)
        tokens += list(STRUCTURAL_TAGS)
        tokens += list(INSTRUCTIONS)
        tokens += [speed_token(i) for i in range(speed_buckets)]
        tokens += [accel_token(i) for i in range(accel_buckets)]
        return cls(tokens)

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._index

    def id(self, token: str) -> int:
        try:
            return self._index[token]
        except KeyError:
            raise KeyError(f"token not in vocabulary: {token!r}") from None

    def encode(self, tokens: Iterable[str]) -> List[int]:
        return [self.id(tok) for tok in tokens]

    def decode(self, ids: Iterable[int]) -> List[str]:
        return [self.tokens[int(i)] for i in ids]

    @property
    def pad_id(self) -> int:
        return self._index[PAD]

    @property
    def content_ids(self) -> List[int]:
        return [self._index[tok] for tok in CONTENT_TOKENS]

    def write(self, path: Path) -> None:
        """One token per line under a version header."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        lines = [f"# {VOCAB_FORMAT}"] + list(self.tokens)
        path.write_text("\n".join(lines) + "\n", encoding="utf-8")
        logger.debug(f"Wrote vocabulary ({len(self)} tokens) to {path}")

    @classmethod
    def read(cls, path: Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if not lines or lines[0] != f"# {VOCAB_FORMAT}":
            raise ValueError(f"{path}: missing '{VOCAB_FORMAT}' header")
        return cls([line for line in lines[1:] if line])
