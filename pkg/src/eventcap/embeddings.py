"""Word embeddings: skip-gram training and GloVe-format loading.

The trainer is plain skip-gram with negative sampling on the caption corpus
(window 2, both sides, every offset used). Negatives are drawn from the
unigram distribution raised to 0.75. The learning rate decays linearly over
all (center, context) pairs. Everything is driven by one seeded generator,
so identical corpora and seeds give identical tables.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .captions import PAD
from .tensorio import load_tensor, save_tensor

WORD2VEC = "word2vec"
GLOVE = "glove"
RANDOM = "random"

OOV_RANGE = 0.05


class EmbeddingError(ValueError):
    """Raised for unusable corpora or malformed embedding files."""


@dataclass(frozen=True)
class EmbeddingTable:
    """word -> length-D vector; <pad> is pinned to the zero vector."""

    dimension: int
    vectors: dict = field(repr=False)
    source: str = WORD2VEC

    def __post_init__(self):
        for word, vec in self.vectors.items():
            if vec.shape != (self.dimension,):
                raise EmbeddingError(
                    f"vector for {word!r} has shape {vec.shape}, want ({self.dimension},)"
                )
            if not np.all(np.isfinite(vec)):
                raise EmbeddingError(f"vector for {word!r} has non-finite entries")

    def get(self, word: str) -> np.ndarray:
        return self.vectors[word]

    def __contains__(self, word: str) -> bool:
        return word in self.vectors


def _oov_vector(word: str, dim: int, seed: int) -> np.ndarray:
    """Deterministic per-word fallback vector, uniform in [-OOV_RANGE, OOV_RANGE]."""
    digest = hashlib.sha256(f"{seed}:{word}".encode("utf-8")).digest()
    rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
    return rng.uniform(-OOV_RANGE, OOV_RANGE, size=dim)


def _sigmoid(x: float) -> float:
    # clamp keeps exp() in range; saturation beyond |60| is far below 1 ulp
    if x > 60.0:
        return 1.0
    if x < -60.0:
        return 0.0
    return 1.0 / (1.0 + np.exp(-x))


def _unigram_table(counts: np.ndarray) -> np.ndarray:
    """Cumulative unigram^0.75 distribution for negative sampling."""
    weights = counts.astype(np.float64) ** 0.75
    total = weights.sum()
    if total <= 0:
        raise EmbeddingError("no tokens to sample negatives from")
    return np.cumsum(weights / total)


def train_word2vec(
    captions,
    window: int = 2,
    dim: int = 256,
    negatives: int = 5,
    epochs: int = 15,
    seed: int = 0,
    lr: float = 0.025,
    min_lr: float = 1e-4,
) -> EmbeddingTable:
    """Skip-gram with negative sampling over tokenized captions.

    Sentences are the captions' full token tuples (markers included, <pad>
    excluded). The window is fixed at its full width rather than sampled,
    which keeps runs reproducible without a per-pair RNG draw.
    """
    if dim < 1:
        raise EmbeddingError(f"dim must be >= 1, got {dim}")
    sentences = [tuple(t for t in cap.tokens if t != PAD) for cap in captions]
    vocab_words = sorted({t for s in sentences for t in s})
    if not vocab_words:
        raise EmbeddingError("empty corpus")
    index = {w: i for i, w in enumerate(vocab_words)}
    counts = np.zeros(len(vocab_words), dtype=np.int64)
    pairs_per_epoch = 0
    for s in sentences:
        for pos, tok in enumerate(s):
            counts[index[tok]] += 1
            lo = max(0, pos - window)
            hi = min(len(s), pos + window + 1)
            pairs_per_epoch += (hi - lo) - 1
    if pairs_per_epoch == 0:
        raise EmbeddingError("corpus has no context pairs")

    rng = np.random.default_rng(seed)
    n = len(vocab_words)
    bound = 0.5 / dim
    w_in = rng.uniform(-bound, bound, size=(n, dim))
    w_out = np.zeros((n, dim))
    cumulative = _unigram_table(counts)

    total_pairs = pairs_per_epoch * epochs
    done = 0
    for _ in range(epochs):
        for s in sentences:
            ids = [index[t] for t in s]
            for pos, center in enumerate(ids):
                lo = max(0, pos - window)
                hi = min(len(ids), pos + window + 1)
                for ctx_pos in range(lo, hi):
                    if ctx_pos == pos:
                        continue
                    context = ids[ctx_pos]
                    step = max(min_lr, lr * (1.0 - done / total_pairs))
                    done += 1
                    v = w_in[center]
                    grad_v = np.zeros(dim)
                    # positive sample
                    u = w_out[context]
                    g = (_sigmoid(np.dot(v, u)) - 1.0) * step
                    grad_v += g * u
                    w_out[context] = u - g * v
                    # negatives from the unigram^0.75 table
                    draws = np.searchsorted(cumulative, rng.random(negatives))
                    for neg in draws:
                        if neg == context:
                            continue
                        u = w_out[neg]
                        g = _sigmoid(np.dot(v, u)) * step
                        grad_v += g * u
                        w_out[neg] = u - g * v
                    w_in[center] = v - grad_v

    vectors = {w: w_in[index[w]].copy() for w in vocab_words}
    vectors[PAD] = np.zeros(dim)
    return EmbeddingTable(dimension=dim, vectors=vectors, source=WORD2VEC)


def load_glove(path: str | Path, vocab, seed: int = 0) -> EmbeddingTable:
    """Read a GloVe text file; vocabulary words missing from it get seeded vectors.

    The dimension is inferred from the first line; later lines must agree.
    """
    path = Path(path)
    file_vectors = {}
    dim = None
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            parts = line.rstrip("\n").split(" ")
            if len(parts) < 2:
                raise EmbeddingError(f"{path}:{lineno}: malformed line")
            word = parts[0]
            try:
                vec = np.array([float(x) for x in parts[1:]])
            except ValueError as exc:
                raise EmbeddingError(f"{path}:{lineno}: unparseable float") from exc
            if dim is None:
                dim = vec.size
            elif vec.size != dim:
                raise EmbeddingError(
                    f"{path}:{lineno}: dimension {vec.size} differs from {dim}"
                )
            file_vectors[word] = vec
    if dim is None:
        raise EmbeddingError(f"{path}: empty embedding file")

    vectors = {}
    for word in vocab.words:
        if word == PAD:
            vectors[word] = np.zeros(dim)
        elif word in file_vectors:
            vectors[word] = file_vectors[word]
        else:
            vectors[word] = _oov_vector(word, dim, seed)
    return EmbeddingTable(dimension=dim, vectors=vectors, source=GLOVE)


def random_table(vocab, dim: int, seed: int = 0) -> EmbeddingTable:
    """Seeded uniform vectors for every vocabulary word; useful at desk scale."""
    vectors = {}
    for word in vocab.words:
        if word == PAD:
            vectors[word] = np.zeros(dim)
        else:
            vectors[word] = _oov_vector(word, dim, seed)
    return EmbeddingTable(dimension=dim, vectors=vectors, source=RANDOM)


def embed_tokens(tokens, table: EmbeddingTable, vocab) -> np.ndarray:
    """Stack per-token vectors into an n x D matrix; unknown words use <unk>."""
    rows = np.zeros((len(tokens), table.dimension))
    for i, tok in enumerate(tokens):
        word = tok if tok in vocab.index else "<unk>"
        if word == PAD:
            continue
        rows[i] = table.get(word)
    return rows


def embedding_matrix(table: EmbeddingTable, vocab, seed: int = 0) -> np.ndarray:
    """V x D matrix aligned to vocabulary indices; row 0 (<pad>) is zero.

    Vocabulary words absent from the table fall back to the deterministic
    seeded vectors so the matrix is always fully populated.
    """
    mat = np.zeros((vocab.size, table.dimension))
    for word, idx in vocab.index.items():
        if word == PAD:
            continue
        if word in table:
            mat[idx] = table.get(word)
        else:
            mat[idx] = _oov_vector(word, table.dimension, seed)
    return mat


def save_embedding_table(prefix: str | Path, table: EmbeddingTable) -> None:
    """Persist as <prefix>.act1 (matrix) plus <prefix>.words.json (row order)."""
    prefix = Path(prefix)
    words = sorted(table.vectors)
    mat = np.stack([table.vectors[w] for w in words])
    save_tensor(prefix.with_suffix(".act1"), mat)
    meta = {"dimension": table.dimension, "source": table.source, "words": words}
    prefix.with_suffix(".words.json").write_text(json.dumps(meta, sort_keys=True) + "\n")


def load_embedding_table(prefix: str | Path) -> EmbeddingTable:
    prefix = Path(prefix)
    meta = json.loads(prefix.with_suffix(".words.json").read_text())
    mat = load_tensor(prefix.with_suffix(".act1")).astype(np.float64)
    words = meta["words"]
    if mat.ndim != 2 or mat.shape[0] != len(words):
        raise EmbeddingError(f"{prefix}: matrix shape {mat.shape} does not match words")
    vectors = {w: mat[i] for i, w in enumerate(words)}
    if PAD in vectors:
        vectors[PAD] = np.zeros(meta["dimension"])
    return EmbeddingTable(
        dimension=int(meta["dimension"]), vectors=vectors, source=meta["source"]
    )
