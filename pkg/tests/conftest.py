"""Shared fixtures: the horse/bird score fixture, toy datasets, WAV files."""

import csv
import json
import math

import pytest

from eventcap.captions import preprocess_caption
from eventcap.model import ModelConfig

from oracles import write_wav_bytes

# the worked thresholding example: eight nonzero class probabilities
FIXTURE_NONZERO = {
    "clip-clop": 0.601,
    "speech": 0.552,
    "horse": 0.516,
    "animal": 0.506,
    "ping": 0.244,
    "bird": 0.209,
    "chirp, tweet": 0.138,
    "bird vocalization, bird call, bird song": 0.105,
}

SELECTED_T01 = [
    "clip-clop",
    "speech",
    "horse",
    "animal",
    "ping",
    "bird",
    "chirp, tweet",
    "bird vocalization, bird call, bird song",
]
SELECTED_T02 = ["clip-clop", "speech", "horse", "animal", "ping", "bird"]
SELECTED_T03 = ["clip-clop", "speech", "horse", "animal"]


def full_score_map(nonzero=None, classes=527):
    """nonzero scores plus zero-probability filler up to the class count."""
    scores = dict(nonzero if nonzero is not None else FIXTURE_NONZERO)
    i = 0
    while len(scores) < classes:
        name = f"filler class {i:03d}"
        if name not in scores:
            scores[name] = 0.0
        i += 1
    return scores


@pytest.fixture
def fixture_scores_path(tmp_path):
    path = tmp_path / "horses.scores.json"
    path.write_text(json.dumps({"clip_id": "horses", "scores": full_score_map()}))
    return path


@pytest.fixture
def tiny_config():
    """Small dimensions that keep gradient checks and training fast."""
    return ModelConfig(
        feature_dim=8,
        event_dim=4,
        vocab_size=12,
        embedding_dim=4,
        bigru1_cells=4,
        bigru2_cells=8,
        ling_gru_cells=16,
        dec_gru_cells=16,
        max_caption_len=6,
        dropout=0.5,
        batch_size=4,
        epochs=3,
        seed=0,
        train_embeddings=True,
    )


def sine_samples(freq, sr, seconds):
    n = int(sr * seconds)
    return [0.5 * math.sin(2.0 * math.pi * freq * k / sr) for k in range(n)]


@pytest.fixture
def wav_dir(tmp_path):
    """Three mono 16-bit clips long enough for several analysis frames."""
    d = tmp_path / "audio"
    d.mkdir()
    sr = 4000
    specs = {"clip_a": 440.0, "clip_b": 660.0, "clip_c": 220.0}
    for name, freq in specs.items():
        (d / f"{name}.wav").write_bytes(
            write_wav_bytes(sine_samples(freq, sr, 0.5), sr)
        )
    return d


def toy_captions():
    texts = [
        "a dog barks loudly",
        "birds sing in the park",
        "rain falls on the roof",
    ]
    return [preprocess_caption(t) for t in texts]


def write_manifest(path, rows):
    """rows: list of (file_name, [captions])."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file_name"] + [f"caption_{i}" for i in range(1, 6)])
        for file_name, captions in rows:
            cells = [file_name] + list(captions) + [""] * (5 - len(captions))
            writer.writerow(cells[:6])
    return path


@pytest.fixture
def toy_corpus_dir(tmp_path, wav_dir):
    """A complete miniature dataset: audio, scores, manifests, run config."""
    root = tmp_path
    scores_dir = root / "scores"
    scores_dir.mkdir()
    per_clip = {
        "clip_a": {"dog bark": 0.8, "animal": 0.5, "rain": 0.02},
        "clip_b": {"bird song": 0.7, "animal": 0.4, "rain": 0.05},
        "clip_c": {"rain": 0.9, "water": 0.45, "animal": 0.02},
    }
    for clip_id, nonzero in per_clip.items():
        (scores_dir / f"{clip_id}.scores.json").write_text(
            json.dumps({"clip_id": clip_id, "scores": full_score_map(nonzero, classes=30)})
        )
    dev = write_manifest(
        root / "dev.csv",
        [
            ("clip_a.wav", ["a dog barks loudly", "the dog is barking"]),
            ("clip_b.wav", ["birds sing in the park", "a bird sings"]),
            ("clip_c.wav", ["rain falls on the roof", "heavy rain pours down"]),
        ],
    )
    eval_manifest = write_manifest(
        root / "eval.csv",
        [
            ("clip_a.wav", ["a dog barks loudly"]),
            ("clip_c.wav", ["rain falls on the roof"]),
        ],
    )
    config = {
        "out_dir": str(root / "out"),
        "dev_manifest": str(dev),
        "eval_manifest": str(eval_manifest),
        "audio_dir": str(wav_dir),
        "scores_dir": str(scores_dir),
        "embedding_kind": "random",
        "thresholds": [0.1, 0.3],
        "model": {
            "event_threshold": 0.1,
            "bigru1_cells": 4,
            "bigru2_cells": 4,
            "ling_gru_cells": 8,
            "dec_gru_cells": 8,
            "embedding_dim": 8,
            "max_caption_len": 10,
            "dropout": 0.2,
            "batch_size": 8,
            "epochs": 3,
        },
    }
    config_path = root / "run.json"
    config_path.write_text(json.dumps(config, indent=2))
    return {
        "root": root,
        "config_path": config_path,
        "config": config,
        "dev_manifest": dev,
        "eval_manifest": eval_manifest,
        "scores_dir": scores_dir,
        "audio_dir": wav_dir,
    }


def random_tokens(rng, vocab, min_len=1, max_len=8):
    length = int(rng.integers(min_len, max_len + 1))
    return [vocab[int(rng.integers(0, len(vocab)))] for _ in range(length)]


def random_metric_corpus(rng, max_instances=5, max_tokens=8):
    """(candidate, references) pairs over a tiny vocabulary, heavy overlap."""
    vocab = ["a", "b", "c", "d", "cat", "cats", "run", "running"]
    n = int(rng.integers(1, max_instances + 1))
    corpus = []
    for _ in range(n):
        cand = random_tokens(rng, vocab, 1, max_tokens)
        refs = [
            random_tokens(rng, vocab, 1, max_tokens)
            for _ in range(int(rng.integers(1, 4)))
        ]
        corpus.append((cand, refs))
    return corpus


def as_instances(corpus):
    from eventcap.metrics import make_instance

    return [
        make_instance(f"clip{i}", cand, refs) for i, (cand, refs) in enumerate(corpus)
    ]
