"""Event-label handling.

Per-clip tagger scores (label -> probability) are thresholded with a strict
inequality, the surviving labels are lowercased and split into tokens, and
the tokens are one-hot encoded against a vocabulary built from the
development split. A raw-score mode bypasses thresholding and exposes the
full 527-class probability vector in canonical (sorted-label) order.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

RAW_CLASS_COUNT = 527

_DELIMS = re.compile(r"[\s,\-]+")


class EventError(ValueError):
    """Raised for malformed score files or inconsistent event inputs."""


@dataclass(frozen=True)
class EventScoreVector:
    """One clip's probability score per event class, keyed by label string."""

    clip_id: str
    scores: dict  # label -> float, insertion-ordered

    @property
    def class_count(self) -> int:
        return len(self.scores)


@dataclass(frozen=True)
class EventVocabulary:
    """Lexicographically sorted unique event tokens with contiguous indices."""

    tokens: tuple
    index: dict = field(repr=False)

    @property
    def size(self) -> int:
        return len(self.tokens)

    @staticmethod
    def from_tokens(tokens) -> "EventVocabulary":
        ordered = tuple(sorted(set(tokens)))
        return EventVocabulary(tokens=ordered, index={t: i for i, t in enumerate(ordered)})


@dataclass(frozen=True)
class EventVector:
    """Length-K {0,1} indicator over an event-token vocabulary."""

    bits: np.ndarray
    vocabulary: EventVocabulary

    def __post_init__(self):
        if self.bits.shape != (self.vocabulary.size,):
            raise EventError(
                f"event vector length {self.bits.shape} does not match "
                f"vocabulary size {self.vocabulary.size}"
            )
        if not np.all((self.bits == 0) | (self.bits == 1)):
            raise EventError("event vector entries must be 0 or 1")


def _parse_score_object(obj_pairs, source: str) -> EventScoreVector:
    top = {}
    for key, value in obj_pairs:
        if key in top:
            raise EventError(f"{source}: duplicate top-level key {key!r}")
        top[key] = value
    if "clip_id" not in top:
        raise EventError(f"{source}: missing clip_id")
    if "scores" not in top:
        raise EventError(f"{source}: missing scores")
    raw = top["scores"]
    scores = {}
    for label, prob in raw:
        if not label:
            raise EventError(f"{source}: empty label string")
        if label in scores:
            raise EventError(f"{source}: duplicate label {label!r}")
        if not isinstance(prob, (int, float)) or isinstance(prob, bool):
            raise EventError(f"{source}: score for {label!r} is not numeric")
        prob = float(prob)
        if not 0.0 <= prob <= 1.0:
            raise EventError(f"{source}: score {prob} for {label!r} outside [0, 1]")
        scores[label] = prob
    return EventScoreVector(clip_id=str(top["clip_id"]), scores=scores)


def _decode_score_json(text: str, source: str) -> EventScoreVector:
    # object_pairs_hook keeps raw key/value pairs so duplicate keys survive
    # long enough to be rejected instead of silently overwriting each other
    pairs = json.loads(text, object_pairs_hook=lambda p: p)
    if not isinstance(pairs, list):
        raise EventError(f"{source}: expected a JSON object")
    for key, value in pairs:
        if key == "scores" and not isinstance(value, list):
            raise EventError(f"{source}: scores must be a JSON object")
    return _parse_score_object(pairs, source)


def load_event_scores(path: str | Path) -> EventScoreVector:
    """Parse one {"clip_id": ..., "scores": {label: prob, ...}} JSON file.

    Duplicate labels, non-numeric scores, and probabilities outside [0, 1]
    are rejected rather than silently merged or clamped.
    """
    path = Path(path)
    return _decode_score_json(path.read_text(), str(path))


def load_event_score_lines(path: str | Path) -> list:
    """Parse a JSON-lines file holding one score object per line."""
    path = Path(path)
    out = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        out.append(_decode_score_json(line, f"{path}:{lineno}"))
    return out


def threshold_select(scores: EventScoreVector, t: float) -> list:
    """Labels with score strictly greater than t, by descending score.

    Ties break lexicographically. A score exactly equal to t is excluded.
    """
    if not 0.0 <= t <= 1.0:
        raise EventError(f"threshold {t} outside [0, 1]")
    picked = [(label, s) for label, s in scores.scores.items() if s > t]
    picked.sort(key=lambda item: (-item[1], item[0]))
    return [label for label, _ in picked]


def tokenize_labels(labels) -> list:
    """Lowercase and split labels on whitespace, commas, and hyphens.

    Empty fragments are dropped; duplicates are removed keeping the first
    occurrence, so multi-word labels sharing a word contribute it once.
    """
    seen = set()
    out = []
    for label in labels:
        for frag in _DELIMS.split(label.lower()):
            if frag and frag not in seen:
                seen.add(frag)
                out.append(frag)
    return out


def build_event_vocabulary(all_selected_tokens) -> EventVocabulary:
    """Sorted union of per-clip token lists from the development split."""
    clips = list(all_selected_tokens)
    if not clips:
        raise EventError("vocabulary needs at least one clip")
    union = set()
    for tokens in clips:
        union.update(tokens)
    vocab = EventVocabulary.from_tokens(union)
    if vocab.size == 0:
        import warnings

        warnings.warn("event vocabulary is empty; threshold may be too high")
    return vocab


def encode_one_hot(tokens, vocab: EventVocabulary) -> EventVector:
    """Bit k = 1 iff vocabulary token k appears in the clip's token list.

    Tokens outside the vocabulary are dropped silently.
    """
    bits = np.zeros(vocab.size)
    for tok in tokens:
        idx = vocab.index.get(tok)
        if idx is not None:
            bits[idx] = 1.0
    return EventVector(bits=bits, vocabulary=vocab)


def raw_score_vector(scores: EventScoreVector) -> np.ndarray:
    """All 527 class scores in canonical (sorted label) order."""
    if scores.class_count != RAW_CLASS_COUNT:
        raise EventError(
            f"raw mode expects {RAW_CLASS_COUNT} classes, got {scores.class_count}"
        )
    return np.array([scores.scores[label] for label in sorted(scores.scores)])


def clip_event_tokens(scores: EventScoreVector, t: float) -> list:
    """threshold_select then tokenize_labels, the per-clip pipeline step."""
    return tokenize_labels(threshold_select(scores, t))


def save_event_vector(path: str | Path, vector: EventVector) -> None:
    """Write bits plus vocabulary as JSON (bits stored as a compact 0/1 list)."""
    payload = {
        "bits": [int(b) for b in vector.bits],
        "tokens": list(vector.vocabulary.tokens),
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_event_vector(path: str | Path, vocab: EventVocabulary) -> EventVector:
    data = json.loads(Path(path).read_text())
    if tuple(data["tokens"]) != vocab.tokens:
        raise EventError(f"{path}: vocabulary mismatch")
    return EventVector(bits=np.array(data["bits"], dtype=np.float64), vocabulary=vocab)


def save_event_vocabulary(path: str | Path, vocab: EventVocabulary, threshold: float) -> None:
    payload = {"threshold": threshold, "size": vocab.size, "tokens": list(vocab.tokens)}
    Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n")


def load_event_vocabulary(path: str | Path) -> EventVocabulary:
    data = json.loads(Path(path).read_text())
    return EventVocabulary.from_tokens(data["tokens"])
