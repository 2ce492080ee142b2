"""Caption preprocessing and the word vocabulary.

Raw caption strings are lowercased, stripped of punctuation (any character
that is not a letter, digit, or space), tokenized on whitespace, and wrapped
in <sos>/<eos> markers. The vocabulary places the four special tokens first
(<pad> pinned to index 0) followed by the sorted distinct corpus words.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field

PAD = "<pad>"
SOS = "<sos>"
EOS = "<eos>"
UNK = "<unk>"
SPECIALS = (PAD, SOS, EOS, UNK)

_PUNCT = re.compile(r"[^a-z0-9 ]")


class CaptionError(ValueError):
    """Raised for captions that are empty after cleaning."""


@dataclass(frozen=True)
class Caption:
    """Lowercase tokens wrapped in boundary markers."""

    clip_id: str
    tokens: tuple

    def __post_init__(self):
        if len(self.tokens) < 2 or self.tokens[0] != SOS or self.tokens[-1] != EOS:
            raise CaptionError(
                f"caption for {self.clip_id!r} must start with {SOS} and end with {EOS}"
            )

    @property
    def words(self) -> tuple:
        """Tokens without the boundary markers."""
        return self.tokens[1:-1]


def preprocess_caption(raw: str, clip_id: str = "") -> Caption:
    """Lowercase, strip punctuation, whitespace-tokenize, add markers.

    Punctuation means any character outside lowercase letters, digits, and
    spaces; digits survive. A caption that cleans down to nothing is an error.
    """
    cleaned = _PUNCT.sub("", raw.lower().replace("\t", " ").replace("\n", " "))
    words = cleaned.split()
    if not words:
        raise CaptionError(f"caption {raw!r} is empty after cleaning")
    return Caption(clip_id=clip_id, tokens=(SOS, *words, EOS))


@dataclass(frozen=True)
class WordVocabulary:
    """Special tokens first, then sorted distinct corpus words."""

    words: tuple
    index: dict = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.words)

    @property
    def pad_index(self) -> int:
        return 0

    @property
    def sos_index(self) -> int:
        return self.index[SOS]

    @property
    def eos_index(self) -> int:
        return self.index[EOS]

    def encode(self, tokens) -> list:
        """Token list to index list; words outside the vocabulary become <unk>."""
        unk = self.index[UNK]
        return [self.index.get(t, unk) for t in tokens]

    def decode(self, indices) -> list:
        return [self.words[i] for i in indices]

    def content_hash(self) -> str:
        """Stable digest of the word list, for checkpoint compatibility checks."""
        joined = "\n".join(self.words).encode("utf-8")
        return hashlib.sha256(joined).hexdigest()


def build_word_vocabulary(captions) -> WordVocabulary:
    """Union of caption words (markers excluded, specials prepended), sorted."""
    caption_list = list(captions)
    if not caption_list:
        raise CaptionError("vocabulary needs at least one caption")
    distinct = set()
    for cap in caption_list:
        distinct.update(cap.words)
    distinct -= set(SPECIALS)
    words = (*SPECIALS, *sorted(distinct))
    return WordVocabulary(words=words, index={w: i for i, w in enumerate(words)})
