"""Dataset plumbing: CSV manifests, teacher-forcing expansion, batching.

A manifest row is one clip with up to five raw captions. Expansion turns
each (clip, caption) into its next-word training pairs, all sharing the
clip's precomputed feature and event vectors. Batching is a seeded shuffle
followed by contiguous slicing, so a fixed seed reproduces byte-identical
batch order.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .captions import WordVocabulary, preprocess_caption
from .model import ModelConfig, TrainSample, collate, expand_training_samples

SPLITS = ("development", "validation", "evaluation")
MAX_CAPTIONS = 5


class DataError(ValueError):
    """Raised for malformed manifests or inconsistent dataset inputs."""


@dataclass(frozen=True)
class CaptionRecord:
    clip_id: str
    file_name: str
    captions: tuple

    def __post_init__(self):
        if not self.captions:
            raise DataError(f"{self.clip_id}: record has no captions")


@dataclass(frozen=True)
class DatasetManifest:
    split: str
    records: tuple

    def clip_ids(self) -> list:
        return [r.clip_id for r in self.records]


def load_manifest(path, split: str, allow_empty: bool = False) -> DatasetManifest:
    """Parse a file_name,caption_1..caption_5 CSV; trailing captions optional.

    A header-only file is an error unless allow_empty is set (decoding an
    empty split is legal and yields empty output; training on one is not).
    """
    if split not in SPLITS:
        raise DataError(f"unknown split {split!r}")
    path = Path(path)
    records = []
    seen = set()
    with path.open("r", encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "file_name" not in reader.fieldnames:
            raise DataError(f"{path}: header must contain file_name")
        caption_cols = [
            f"caption_{i}" for i in range(1, MAX_CAPTIONS + 1)
            if f"caption_{i}" in reader.fieldnames
        ]
        if not caption_cols:
            raise DataError(f"{path}: header has no caption_N columns")
        for row in reader:
            file_name = (row.get("file_name") or "").strip()
            if not file_name:
                raise DataError(f"{path}: row with empty file_name")
            clip_id = Path(file_name).stem
            if clip_id in seen:
                raise DataError(f"{path}: duplicate clip_id {clip_id!r}")
            seen.add(clip_id)
            captions = tuple(
                (row.get(col) or "").strip()
                for col in caption_cols
                if (row.get(col) or "").strip()
            )
            records.append(
                CaptionRecord(clip_id=clip_id, file_name=file_name, captions=captions)
            )
    if not records and not allow_empty:
        raise DataError(f"{path}: empty manifest")
    return DatasetManifest(split=split, records=tuple(records))


def save_manifest(path, manifest: DatasetManifest) -> None:
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file_name"] + [f"caption_{i}" for i in range(1, MAX_CAPTIONS + 1)])
        for rec in manifest.records:
            caps = list(rec.captions) + [""] * (MAX_CAPTIONS - len(rec.captions))
            writer.writerow([rec.file_name] + caps[:MAX_CAPTIONS])


def manifest_captions(manifest: DatasetManifest) -> list:
    """All captions of a manifest, preprocessed, in record order."""
    out = []
    for rec in manifest.records:
        for raw in rec.captions:
            out.append(preprocess_caption(raw, clip_id=rec.clip_id))
    return out


def expand_dataset(
    manifest: DatasetManifest,
    vocab: WordVocabulary,
    config: ModelConfig,
    features: dict,
    events: dict | None = None,
) -> list:
    """Teacher-forcing samples for every (clip, caption, position) triple.

    features maps clip_id to its vector; events likewise when the model
    consumes event inputs. All samples of one clip share those arrays.
    """
    samples = []
    empty = np.zeros(0)
    for rec in manifest.records:
        if rec.clip_id not in features:
            raise DataError(f"no features for clip {rec.clip_id!r}")
        feat = features[rec.clip_id]
        if config.event_dim:
            if events is None or rec.clip_id not in events:
                raise DataError(f"no event vector for clip {rec.clip_id!r}")
            event = events[rec.clip_id]
        else:
            event = empty
        for raw in rec.captions:
            caption = preprocess_caption(raw, clip_id=rec.clip_id)
            for partial_tokens, target_token in expand_training_samples(caption):
                samples.append(
                    TrainSample(
                        feature=feat,
                        event=event,
                        partial=tuple(vocab.encode(partial_tokens)),
                        target=vocab.encode([target_token])[0],
                    )
                )
    return samples


def make_batches(
    samples,
    batch_size: int,
    config: ModelConfig,
    seed: int = 0,
    shuffle: bool = True,
) -> list:
    """Seeded shuffle (optional) then contiguous slices collated into Batches."""
    if batch_size < 1:
        raise DataError(f"batch_size must be >= 1, got {batch_size}")
    samples = list(samples)
    order = np.arange(len(samples))
    if shuffle:
        np.random.default_rng(seed).shuffle(order)
    batches = []
    for start in range(0, len(samples), batch_size):
        chunk = [samples[i] for i in order[start : start + batch_size]]
        batches.append(collate(chunk, config))
    return batches


def batch_sample_count(batches) -> int:
    return sum(b.size for b in batches)


def split_dev(
    manifest: DatasetManifest,
    dev_count: int = 2000,
    val_count: int = 893,
    seed: int = 0,
):
    """Seeded shuffle of the records, then carve development/validation splits."""
    n = len(manifest.records)
    if dev_count < 1 or val_count < 1:
        raise DataError("split sizes must be positive")
    if dev_count + val_count > n:
        raise DataError(
            f"cannot split {n} records into {dev_count} + {val_count}"
        )
    order = np.arange(n)
    np.random.default_rng(seed).shuffle(order)
    dev_records = tuple(manifest.records[i] for i in order[:dev_count])
    val_records = tuple(manifest.records[i] for i in order[dev_count : dev_count + val_count])
    dev = DatasetManifest(split="development", records=dev_records)
    val = DatasetManifest(split="validation", records=val_records)
    return dev, val


def references_by_clip(manifest: DatasetManifest) -> dict:
    """clip_id -> list of reference token lists (markers stripped)."""
    refs = {}
    for rec in manifest.records:
        refs[rec.clip_id] = [
            list(preprocess_caption(raw, clip_id=rec.clip_id).words)
            for raw in rec.captions
        ]
    return refs
