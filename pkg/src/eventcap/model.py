"""The caption generator: acoustic encoder over the feature/event concat,
linguistic encoder over partial captions, and a one-step GRU decoder.

The acoustic side treats the per-clip feature vector (optionally concatenated
with the event vector) as a length-1 sequence through two BiGRU layers with
batch normalization and dropout between them. The linguistic side embeds the
front-padded partial caption and keeps the final GRU state. The decoder takes
concat(acoustic, linguistic), runs one GRU step from a zero state, and
projects to word probabilities. Training is teacher-forced next-word
prediction under cross-entropy with Adam.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np

from . import nn
from .captions import Caption, WordVocabulary
from .tensorio import read_tensor, write_tensor

ACOUSTIC_KINDS = ("lma", "pretrained")
EVENT_MODES = ("none", "raw_scores", "one_hot")
RAW_EVENT_DIM = 527

CHECKPOINT_MAGIC = b"ACKP"
CHECKPOINT_VERSION = 1


class ModelError(ValueError):
    """Raised for inconsistent configurations or incompatible inputs."""


class TrainingDiverged(RuntimeError):
    """Raised when the training loss stops being finite."""


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int
    event_dim: int
    vocab_size: int
    embedding_dim: int
    acoustic_kind: str = "lma"
    event_mode: str = "one_hot"
    event_threshold: float = 0.1
    bigru1_cells: int = 32
    bigru2_cells: int = 64
    ling_gru_cells: int = 128
    dec_gru_cells: int = 128
    max_caption_len: int = 30
    dropout: float = 0.5
    batch_size: int = 64
    epochs: int = 50
    seed: int = 0
    train_embeddings: bool = False

    def __post_init__(self):
        if self.acoustic_kind not in ACOUSTIC_KINDS:
            raise ModelError(f"unknown acoustic_kind {self.acoustic_kind!r}")
        if self.event_mode not in EVENT_MODES:
            raise ModelError(f"unknown event_mode {self.event_mode!r}")
        for name in (
            "feature_dim",
            "vocab_size",
            "embedding_dim",
            "bigru1_cells",
            "bigru2_cells",
            "ling_gru_cells",
            "dec_gru_cells",
            "max_caption_len",
            "batch_size",
            "epochs",
        ):
            if getattr(self, name) < 1:
                raise ModelError(f"{name} must be positive, got {getattr(self, name)}")
        if self.event_mode == "none" and self.event_dim != 0:
            raise ModelError("event_mode none requires event_dim 0")
        if self.event_mode == "raw_scores" and self.event_dim != RAW_EVENT_DIM:
            raise ModelError(f"event_mode raw_scores requires event_dim {RAW_EVENT_DIM}")
        if self.event_mode == "one_hot" and self.event_dim < 0:
            raise ModelError("event_dim must be >= 0")
        if not 0.0 <= self.dropout < 1.0:
            raise ModelError(f"dropout {self.dropout} outside [0, 1)")
        if not 0.0 <= self.event_threshold <= 1.0:
            raise ModelError(f"event_threshold {self.event_threshold} outside [0, 1]")

    @property
    def acoustic_input_dim(self) -> int:
        return self.feature_dim + self.event_dim

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(data: dict) -> "ModelConfig":
        return ModelConfig(**data)


@dataclass
class Batch:
    """One training slice: per-sample clip features, event vectors, the
    front-padded partial caption indices, the next-word targets, and a 0/1
    mask marking which rows are real samples."""

    features: np.ndarray
    events: np.ndarray
    partials: np.ndarray
    targets: np.ndarray
    mask: np.ndarray

    @property
    def size(self) -> int:
        return self.features.shape[0]


@dataclass(frozen=True)
class TrainSample:
    """One teacher-forcing pair tied to its clip's precomputed inputs."""

    feature: np.ndarray
    event: np.ndarray
    partial: tuple  # token indices, oldest first, never empty
    target: int


def expand_training_samples(caption: Caption) -> list:
    """Teacher-forcing factorization: (tokens[:i], tokens[i]) for i in 1..n-1."""
    pairs = []
    for i in range(1, len(caption.tokens)):
        pairs.append((caption.tokens[:i], caption.tokens[i]))
    return pairs


def front_pad(indices, length: int, pad_index: int = 0) -> list:
    """Left-pad to the target length; overlong inputs keep their newest tokens."""
    indices = list(indices)
    if len(indices) > length:
        return indices[-length:]
    return [pad_index] * (length - len(indices)) + indices


def collate(samples, config: ModelConfig) -> Batch:
    """Stack samples into one Batch, front-padding the partial captions."""
    if not samples:
        raise ModelError("collate: empty sample list")
    feats = np.stack([np.asarray(s.feature, dtype=np.float64) for s in samples])
    if config.event_dim:
        events = np.stack([np.asarray(s.event, dtype=np.float64) for s in samples])
    else:
        events = np.zeros((len(samples), 0))
    partials = np.array(
        [front_pad(s.partial, config.max_caption_len) for s in samples], dtype=np.int64
    )
    targets = np.array([s.target for s in samples], dtype=np.int64)
    return Batch(
        features=feats,
        events=events,
        partials=partials,
        targets=targets,
        mask=np.ones(len(samples)),
    )


class CaptionerModel:
    """Holds all parameters and implements forward, backward, and decoding."""

    def __init__(self, config: ModelConfig, embedding: np.ndarray, rng: np.random.Generator):
        self.config = config
        c = config
        self.enc1_fwd = nn.init_gru(rng, c.acoustic_input_dim, c.bigru1_cells)
        self.enc1_bwd = nn.init_gru(rng, c.acoustic_input_dim, c.bigru1_cells)
        self.bn = nn.BatchNormState.create(2 * c.bigru1_cells)
        self.enc2_fwd = nn.init_gru(rng, 2 * c.bigru1_cells, c.bigru2_cells)
        self.enc2_bwd = nn.init_gru(rng, 2 * c.bigru1_cells, c.bigru2_cells)
        self.ling = nn.init_gru(rng, c.embedding_dim, c.ling_gru_cells)
        self.dec = nn.init_gru(rng, 2 * c.bigru2_cells + c.ling_gru_cells, c.dec_gru_cells)
        self.proj_W = nn.xavier_uniform(rng, c.vocab_size, c.dec_gru_cells)
        self.proj_b = np.zeros(c.vocab_size)
        if embedding.shape != (c.vocab_size, c.embedding_dim):
            raise ModelError(
                f"embedding shape {embedding.shape}, want "
                f"({c.vocab_size}, {c.embedding_dim})"
            )
        self.embedding = embedding.astype(np.float64).copy()
        self.embedding[0] = 0.0  # <pad> row stays zero

    # ---- parameter bookkeeping -------------------------------------------

    def all_params(self) -> dict:
        params = {}
        params.update(self.enc1_fwd.named("enc1.fwd"))
        params.update(self.enc1_bwd.named("enc1.bwd"))
        params["bn.gamma"] = self.bn.gamma
        params["bn.beta"] = self.bn.beta
        params.update(self.enc2_fwd.named("enc2.fwd"))
        params.update(self.enc2_bwd.named("enc2.bwd"))
        params.update(self.ling.named("ling"))
        params.update(self.dec.named("dec"))
        params["proj.W"] = self.proj_W
        params["proj.b"] = self.proj_b
        params["embedding"] = self.embedding
        return params

    def trainable_params(self) -> dict:
        params = self.all_params()
        if not self.config.train_embeddings:
            del params["embedding"]
        return params

    def param_count(self) -> int:
        return sum(p.size for p in self.all_params().values())

    def param_breakdown(self) -> dict:
        groups = {}
        for name, p in self.all_params().items():
            group = name.split(".")[0]
            groups[group] = groups.get(group, 0) + p.size
        return groups

    def state_tensors(self) -> dict:
        """Everything a checkpoint stores: parameters plus running statistics."""
        tensors = dict(self.all_params())
        tensors["bn.running_mean"] = self.bn.running_mean
        tensors["bn.running_var"] = self.bn.running_var
        return tensors

    def copy_state(self) -> dict:
        return {k: v.copy() for k, v in self.state_tensors().items()}

    def load_state(self, state: dict) -> None:
        tensors = self.state_tensors()
        missing = set(tensors) - set(state)
        extra = set(state) - set(tensors)
        if missing or extra:
            raise ModelError(f"state mismatch: missing {missing}, extra {extra}")
        for name, arr in tensors.items():
            src = np.asarray(state[name], dtype=np.float64)
            if src.shape != arr.shape:
                raise ModelError(f"{name}: shape {src.shape}, want {arr.shape}")
            arr[...] = src

    # ---- forward pieces ---------------------------------------------------

    def _check_inputs(self, features: np.ndarray, events: np.ndarray) -> np.ndarray:
        c = self.config
        if features.ndim != 2 or features.shape[1] != c.feature_dim:
            raise ModelError(
                f"features shape {features.shape}, want (B, {c.feature_dim})"
            )
        if c.event_dim == 0:
            return features
        if events is None or events.ndim != 2 or events.shape[1] != c.event_dim:
            got = None if events is None else events.shape
            raise ModelError(f"events shape {got}, want (B, {c.event_dim})")
        return np.concatenate([features, events], axis=1)

    def encode_acoustic(
        self,
        features: np.ndarray,
        events: np.ndarray | None = None,
        mode: str = "infer",
        rng: np.random.Generator | None = None,
    ):
        """concat(x, e) as a length-1 sequence -> BiGRU -> BN -> dropout ->
        BiGRU; returns (encoding, cache)."""
        features = np.atleast_2d(np.asarray(features, dtype=np.float64))
        if events is not None:
            events = np.atleast_2d(np.asarray(events, dtype=np.float64))
        a0 = self._check_inputs(features, events)
        rate = self.config.dropout if mode == "train" else 0.0

        seq1 = a0[:, None, :]
        out1, cache1 = nn.bigru_forward(self.enc1_fwd, self.enc1_bwd, seq1)
        h1 = out1[:, 0, :]
        h1n, cache_bn = nn.batch_norm_forward(h1, self.bn, mode)
        h1d, cache_d1 = nn.dropout(h1n, rate, rng, mode)
        seq2 = h1d[:, None, :]
        out2, cache2 = nn.bigru_forward(self.enc2_fwd, self.enc2_bwd, seq2)
        encoding = out2[:, 0, :]
        cache = (cache1, cache_bn, cache_d1, cache2)
        return encoding, cache

    def backward_acoustic(self, cache, d_encoding: np.ndarray, grads: dict) -> np.ndarray:
        cache1, cache_bn, cache_d1, cache2 = cache
        d_out2 = d_encoding[:, None, :]
        d_seq2 = nn.bigru_backward(
            self.enc2_fwd, self.enc2_bwd, cache2, d_out2, grads, "enc2"
        )
        d_h1d = d_seq2[:, 0, :]
        d_h1n = nn.dropout_backward(cache_d1, d_h1d)
        d_h1 = nn.batch_norm_backward(self.bn, cache_bn, d_h1n, grads, "bn")
        d_out1 = d_h1[:, None, :]
        d_seq1 = nn.bigru_backward(
            self.enc1_fwd, self.enc1_bwd, cache1, d_out1, grads, "enc1"
        )
        return d_seq1[:, 0, :]

    def encode_linguistic(self, partials: np.ndarray):
        """Embed front-padded index rows and keep the GRU's final state."""
        partials = np.atleast_2d(np.asarray(partials, dtype=np.int64))
        if partials.shape[1] < 1:
            raise ModelError("encode_linguistic: empty partial caption")
        emb = self.embedding[partials]
        # <pad> positions embed to zero regardless of what row 0 holds;
        # the pad row is a pinned constant, not a free parameter
        emb[partials == 0] = 0.0
        states, caches = nn.gru_forward(self.ling, emb)
        return states[:, -1, :], (partials, caches, states.shape)

    def backward_linguistic(self, cache, d_final: np.ndarray, grads: dict) -> None:
        partials, caches, states_shape = cache
        d_states = np.zeros(states_shape)
        d_states[:, -1, :] = d_final
        d_emb, _ = nn.gru_backward(self.ling, caches, d_states, grads, "ling")
        if self.config.train_embeddings:
            np.add.at(grads["embedding"], partials, d_emb)
            grads["embedding"][0] = 0.0  # <pad> stays pinned

    def decode_step(
        self,
        acoustic: np.ndarray,
        linguistic: np.ndarray,
        mode: str = "infer",
        rng: np.random.Generator | None = None,
    ):
        """concat -> one GRU step from zero state -> dropout -> dense -> softmax."""
        acoustic = np.atleast_2d(acoustic)
        linguistic = np.atleast_2d(linguistic)
        rate = self.config.dropout if mode == "train" else 0.0
        joined = np.concatenate([acoustic, linguistic], axis=1)
        h0 = np.zeros((joined.shape[0], self.config.dec_gru_cells))
        h_dec, cache_step = nn.gru_step(self.dec, joined, h0)
        h_drop, cache_drop = nn.dropout(h_dec, rate, rng, mode)
        logits, cache_dense = nn.dense_forward(self.proj_W, self.proj_b, h_drop)
        probs = nn.softmax(logits)
        return probs, (cache_step, cache_drop, cache_dense, probs)

    def backward_decode(self, cache, targets: np.ndarray, mask: np.ndarray, grads: dict):
        cache_step, cache_drop, cache_dense, probs = cache
        d_logits = nn.softmax_ce_backward(probs, targets, mask)
        d_hdrop = nn.dense_backward(self.proj_W, cache_dense, d_logits, grads, "proj")
        d_hdec = nn.dropout_backward(cache_drop, d_hdrop)
        d_joined, _ = nn.gru_step_backward(self.dec, cache_step, d_hdec, grads, "dec")
        width = 2 * self.config.bigru2_cells
        return d_joined[:, :width], d_joined[:, width:]

    # ---- loss, gradients --------------------------------------------------

    def forward_loss(self, batch: Batch, mode: str = "train", dropout_seed: int = 0):
        """Mean masked cross-entropy over the batch; returns (loss, probs, caches)."""
        rng = np.random.default_rng(dropout_seed) if mode == "train" else None
        acoustic, cache_a = self.encode_acoustic(
            batch.features, batch.events if self.config.event_dim else None, mode, rng
        )
        if mode == "train" and self.config.dropout > 0.0:
            acoustic_d, cache_da = nn.dropout(acoustic, self.config.dropout, rng, mode)
        else:
            acoustic_d, cache_da = acoustic, None
        linguistic, cache_l = self.encode_linguistic(batch.partials)
        probs, cache_dec = self.decode_step(acoustic_d, linguistic, mode, rng)
        picked = probs[np.arange(batch.size), batch.targets]
        ce = -np.log(picked + nn.CE_CLIP)
        denom = max(float(batch.mask.sum()), 1.0)
        loss = float(np.sum(ce * batch.mask) / denom)
        caches = (cache_a, cache_da, cache_l, cache_dec)
        return loss, probs, caches

    def backward(self, batch: Batch, caches) -> dict:
        """Gradients of the masked-mean loss for every trainable parameter."""
        cache_a, cache_da, cache_l, cache_dec = caches
        grads = nn.zero_grads(self.all_params())
        d_acoustic_d, d_linguistic = self.backward_decode(
            cache_dec, batch.targets, batch.mask, grads
        )
        self.backward_linguistic(cache_l, d_linguistic, grads)
        d_acoustic = nn.dropout_backward(cache_da, d_acoustic_d)
        self.backward_acoustic(cache_a, d_acoustic, grads)
        if not self.config.train_embeddings:
            del grads["embedding"]
        return grads

    # ---- inference ---------------------------------------------------------

    def greedy_caption(self, feature: np.ndarray, event: np.ndarray | None, vocab: WordVocabulary) -> list:
        """Argmax decoding from <sos> until <eos> or the length limit.

        Ties resolve to the lowest vocabulary index; returned words carry no
        boundary markers.
        """
        acoustic, _ = self.encode_acoustic(
            np.atleast_2d(np.asarray(feature, dtype=np.float64)),
            None if self.config.event_dim == 0 else np.atleast_2d(event),
            mode="infer",
        )
        indices = [vocab.sos_index]
        words = []
        eos = vocab.eos_index
        while len(indices) < self.config.max_caption_len:
            padded = np.array([front_pad(indices, self.config.max_caption_len)])
            linguistic, _ = self.encode_linguistic(padded)
            probs, _ = self.decode_step(acoustic, linguistic, mode="infer")
            nxt = int(np.argmax(probs[0]))
            if nxt == eos:
                break
            indices.append(nxt)
            words.append(vocab.words[nxt])
        return words


def assemble_model(
    config: ModelConfig,
    embedding: np.ndarray | None = None,
    seed: int | None = None,
) -> CaptionerModel:
    """Allocate and initialize all parameters; deterministic under the seed."""
    seed = config.seed if seed is None else seed
    rng = np.random.default_rng(seed)
    if embedding is None:
        embedding = rng.uniform(
            -0.05, 0.05, size=(config.vocab_size, config.embedding_dim)
        )
    model = CaptionerModel(config, embedding, rng)
    return model


# ---- training ----------------------------------------------------------------


@dataclass
class TrainResult:
    history: list
    best_epoch: int
    best_val_loss: float
    best_state: dict = field(repr=False)


def evaluate_loss(model: CaptionerModel, samples, batch_size: int) -> float:
    """Mean per-token cross-entropy in inference mode."""
    if not samples:
        raise ModelError("evaluate_loss: empty sample list")
    total = 0.0
    count = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        batch = collate(chunk, model.config)
        loss, _, _ = model.forward_loss(batch, mode="infer")
        total += loss * batch.size
        count += batch.size
    return total / count


def next_word_accuracy(model: CaptionerModel, samples, batch_size: int = 256) -> float:
    """Fraction of samples whose argmax prediction equals the target."""
    if not samples:
        raise ModelError("next_word_accuracy: empty sample list")
    hits = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start : start + batch_size]
        batch = collate(chunk, model.config)
        _, probs, _ = model.forward_loss(batch, mode="infer")
        hits += int(np.sum(np.argmax(probs, axis=1) == batch.targets))
    return hits / len(samples)


def _step_seed(seed: int, epoch: int, step: int) -> int:
    mixed = np.random.SeedSequence([seed, epoch, step]).generate_state(1)[0]
    return int(mixed)


def train_model(
    model: CaptionerModel,
    train_samples,
    val_samples=None,
    *,
    epochs: int | None = None,
    lr: float = 1e-3,
    batch_size: int | None = None,
    seed: int | None = None,
    shuffle: bool = True,
    log_fn=None,
) -> TrainResult:
    """Adam training with per-epoch seeded shuffling and best-epoch selection.

    Records mean train loss (over optimizer steps) and validation loss per
    epoch; keeps a copy of the state from the epoch with the lowest
    validation loss. When no validation samples are given the training set
    doubles as the validation set.
    """
    if not train_samples:
        raise ModelError("train_model: empty training set")
    cfg = model.config
    epochs = cfg.epochs if epochs is None else epochs
    batch_size = cfg.batch_size if batch_size is None else batch_size
    seed = cfg.seed if seed is None else seed
    val = list(val_samples) if val_samples else list(train_samples)
    samples = list(train_samples)
    if len(samples) == 1:
        raise ModelError("train_model: need at least 2 samples for batch statistics")

    params = model.trainable_params()
    adam = nn.AdamState.create(params, lr=lr)
    history = []
    best_epoch = -1
    best_val = float("inf")
    best_state = None
    warned_single = False

    for epoch in range(1, epochs + 1):
        order = np.arange(len(samples))
        if shuffle:
            np.random.default_rng(_step_seed(seed, epoch, 0)).shuffle(order)
        epoch_loss = 0.0
        seen = 0
        step = 0
        for start in range(0, len(order), batch_size):
            chunk = [samples[i] for i in order[start : start + batch_size]]
            if len(chunk) == 1:
                # batch statistics need >= 2 rows; a lone trailing sample
                # is skipped rather than crashing the epoch
                if not warned_single:
                    warnings.warn("skipping size-1 trailing batch (batch norm needs >= 2)")
                    warned_single = True
                continue
            batch = collate(chunk, cfg)
            step += 1
            try:
                loss, _, caches = model.forward_loss(
                    batch, mode="train", dropout_seed=_step_seed(seed, epoch, step)
                )
            except FloatingPointError as exc:
                raise TrainingDiverged(
                    f"non-finite values at epoch {epoch}, step {step}: {exc}"
                ) from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(
                    f"non-finite loss at epoch {epoch}, step {step}"
                )
            grads = model.backward(batch, caches)
            nn.adam_step(adam, params, grads)
            epoch_loss += loss * batch.size
            seen += batch.size
        if seen == 0:
            raise ModelError("train_model: no usable batches (all were size 1)")
        train_loss = epoch_loss / seen
        val_loss = evaluate_loss(model, val, batch_size)
        history.append({"epoch": epoch, "train_loss": train_loss, "val_loss": val_loss})
        if log_fn is not None:
            log_fn(epoch, train_loss, val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_state = model.copy_state()

    return TrainResult(
        history=history,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        best_state=best_state,
    )


# ---- checkpoints ---------------------------------------------------------------


def _hash_words(words) -> str:
    return hashlib.sha256("\n".join(words).encode("utf-8")).hexdigest()


def save_checkpoint(
    path,
    model: CaptionerModel,
    vocab: WordVocabulary,
    event_tokens=None,
    epoch: int = 0,
    val_loss: float = 0.0,
    state: dict | None = None,
) -> None:
    """Binary checkpoint: JSON header plus named float32 tensor sections.

    Tensors are stored in sorted name order so identical states always
    serialize to identical bytes. Passing `state` saves that snapshot
    (e.g. the best epoch) instead of the live parameters.
    """
    tensors = state if state is not None else model.state_tensors()
    header = {
        "format": CHECKPOINT_VERSION,
        "config": model.config.to_dict(),
        "epoch": epoch,
        "val_loss": val_loss,
        "words": list(vocab.words),
        "word_vocab_sha256": vocab.content_hash(),
        "event_tokens": list(event_tokens) if event_tokens is not None else None,
    }
    if event_tokens is not None:
        header["event_vocab_sha256"] = _hash_words(event_tokens)
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    buf = io.BytesIO()
    buf.write(CHECKPOINT_MAGIC)
    buf.write(struct.pack("<I", len(header_bytes)))
    buf.write(header_bytes)
    for name in sorted(tensors):
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        write_tensor(buf, tensors[name])
    with open(path, "wb") as fh:
        fh.write(buf.getvalue())


def load_checkpoint(path):
    """Rebuild (model, meta) from a checkpoint file.

    meta carries the header fields plus the reconstructed WordVocabulary
    under "vocab".
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != CHECKPOINT_MAGIC:
            raise ModelError(f"{path}: not a checkpoint file")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len).decode("utf-8"))
        if header.get("format") != CHECKPOINT_VERSION:
            raise ModelError(f"{path}: unsupported checkpoint format")
        tensors = {}
        while True:
            raw = fh.read(2)
            if not raw:
                break
            (name_len,) = struct.unpack("<H", raw)
            name = fh.read(name_len).decode("utf-8")
            tensors[name] = read_tensor(fh)

    config = ModelConfig.from_dict(header["config"])
    model = CaptionerModel(
        config,
        np.zeros((config.vocab_size, config.embedding_dim)),
        np.random.default_rng(0),
    )
    model.load_state({k: v.astype(np.float64) for k, v in tensors.items()})
    words = tuple(header["words"])
    vocab = WordVocabulary(words=words, index={w: i for i, w in enumerate(words)})
    if vocab.content_hash() != header["word_vocab_sha256"]:
        raise ModelError(f"{path}: word list does not match its recorded hash")
    meta = dict(header)
    meta["vocab"] = vocab
    return model, meta
