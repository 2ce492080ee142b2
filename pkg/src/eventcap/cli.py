"""Command-line workflows: features, events, train, caption, evaluate,
ablate, and the development/validation splitter.

Every command takes --config (a JSON run configuration), --seed, --out,
--force, and --threads. Flags beat config values; the CAPTIONER_SEED
environment variable backs the seed when neither is given. Each command
echoes its effective configuration into its output directory.
"""

from __future__ import annotations

import csv
import json
import shutil
import sys
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import click
import numpy as np

from . import audio, plots
from . import data as data_mod
from . import events as events_mod
from . import metrics as metrics_mod
from .captions import build_word_vocabulary
from .config import FEATURE_DIMS, ConfigError, RunConfig, resolve_seed, with_overrides
from .embeddings import (
    embedding_matrix,
    load_glove,
    random_table,
    train_word2vec,
)
from .model import (
    ModelError,
    assemble_model,
    load_checkpoint,
    save_checkpoint,
    train_model,
)
from .tensorio import load_tensor, save_tensor


def run_options(fn):
    fn = click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), default=None, help="JSON run configuration.")(fn)
    fn = click.option("--seed", type=int, default=None, help="Seed override (beats config and CAPTIONER_SEED).")(fn)
    fn = click.option("--out", "out_dir", type=click.Path(file_okay=False), default=None, help="Output directory override.")(fn)
    fn = click.option("--force", is_flag=True, help="Rebuild outputs that already exist.")(fn)
    fn = click.option("--threads", type=int, default=1, show_default=True, help="Worker threads for per-clip extraction.")(fn)
    return fn


def _load_cfg(config_path, seed, out_dir) -> RunConfig:
    cfg = RunConfig.load(config_path) if config_path else RunConfig()
    effective_seed = resolve_seed(seed, cfg.seed)
    return with_overrides(cfg, seed=effective_seed, out_dir=out_dir)


def _echo_config(cfg: RunConfig, directory: Path, extra: dict | None = None) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    payload = cfg.to_dict()
    if extra:
        payload = {"run": payload, **extra}
    (directory / "config.echo.json").write_text(
        json.dumps(payload, sort_keys=True, indent=2) + "\n"
    )


def _manifest(cfg: RunConfig, split: str, allow_empty: bool = False):
    path = {
        "development": cfg.dev_manifest,
        "validation": cfg.val_manifest,
        "evaluation": cfg.eval_manifest,
    }[split]
    if path is None:
        return None
    return data_mod.load_manifest(path, split, allow_empty=allow_empty)


def _require(value, message: str):
    if value is None:
        raise click.UsageError(message)
    return value


@click.group()
def main():
    """Audio captioning toolkit: event-aware GRU encoder-decoder pipeline."""


# ---- features -------------------------------------------------------------------


def _extract_one(cfg: RunConfig, kind: str, rec, out_path: Path) -> None:
    src = Path(_require(cfg.audio_dir, "config needs audio_dir")) / rec.file_name
    if kind == "lma":
        clip = audio.load_wav(src)
        mel = audio.compute_log_mel(clip)
        feature = audio.temporal_average(mel)
        audio.save_feature_vector(out_path, feature)
    else:
        audio.load_pretrained_vector(src)  # validates rank/length/finiteness
        shutil.copyfile(src, out_path)


@main.command("features")
@run_options
def cmd_features(config_path, seed, out_dir, force, threads):
    """Extract or ingest per-clip acoustic feature vectors."""
    cfg = _load_cfg(config_path, seed, out_dir)
    kind = cfg.model_template()["acoustic_kind"]
    manifests = [m for s in data_mod.SPLITS if (m := _manifest(cfg, s))]
    if not manifests:
        raise click.UsageError("config needs at least one manifest path")
    feat_dir = cfg.resolved_features_dir()
    feat_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, feat_dir)

    jobs = []
    seen = set()
    for manifest in manifests:
        for rec in manifest.records:
            if rec.clip_id in seen:
                continue
            seen.add(rec.clip_id)
            jobs.append(rec)

    written = 0
    skipped = 0
    failures = {}

    def work(rec):
        out_path = feat_dir / f"{rec.clip_id}.feat.act1"
        if out_path.exists() and not force:
            return "skipped"
        _extract_one(cfg, kind, rec, out_path)
        return "written"

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(lambda r: _safe(work, r), jobs))
    else:
        outcomes = [_safe(work, r) for r in jobs]
    for rec, outcome in zip(jobs, outcomes):
        if outcome == "written":
            written += 1
        elif outcome == "skipped":
            skipped += 1
        else:
            failures[rec.clip_id] = outcome[1]

    summary = {
        "kind": kind,
        "clips": len(jobs),
        "written": written,
        "skipped": skipped,
        "failed": failures,
    }
    (feat_dir / "summary.json").write_text(json.dumps(summary, sort_keys=True, indent=2) + "\n")
    click.echo(f"features: {written} written, {skipped} skipped, {len(failures)} failed ({kind})")
    for clip_id, msg in sorted(failures.items()):
        click.echo(f"  FAILED {clip_id}: {msg}", err=True)
    if failures:
        sys.exit(1)


def _safe(fn, *args):
    try:
        return fn(*args)
    except Exception as exc:  # per-clip isolation: one bad file must not stop the rest
        return ("error", str(exc))


# ---- events ---------------------------------------------------------------------


def _score_path(cfg: RunConfig, clip_id: str) -> Path:
    scores_dir = Path(_require(cfg.scores_dir, "config needs scores_dir"))
    return scores_dir / f"{clip_id}.scores.json"


@main.command("events")
@run_options
@click.option("--threshold", "thresholds", type=float, multiple=True, help="Override the config threshold list.")
def cmd_events(config_path, seed, out_dir, force, threads, thresholds):
    """Build event vocabularies and per-clip event vectors per threshold."""
    cfg = _load_cfg(config_path, seed, out_dir)
    mode = cfg.model_template()["event_mode"]
    events_dir = cfg.resolved_events_dir()
    events_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, events_dir)

    if mode == "none":
        click.echo("events: event_mode is none; nothing to build")
        return

    dev = _require(_manifest(cfg, "development"), "config needs dev_manifest")
    others = [m for s in ("validation", "evaluation") if (m := _manifest(cfg, s))]
    all_records = list(dev.records) + [r for m in others for r in m.records]

    scores = {}
    for rec in {r.clip_id: r for r in all_records}.values():
        scores[rec.clip_id] = events_mod.load_event_scores(_score_path(cfg, rec.clip_id))

    if mode == "raw_scores":
        raw_dir = events_dir / "raw"
        raw_dir.mkdir(parents=True, exist_ok=True)
        count = 0
        for clip_id in sorted(scores):
            out_path = raw_dir / f"{clip_id}.events.act1"
            if out_path.exists() and not force:
                continue
            save_tensor(out_path, events_mod.raw_score_vector(scores[clip_id]))
            count += 1
        click.echo(f"events: raw score vectors for {count} clips")
        return

    threshold_list = list(thresholds) if thresholds else list(cfg.thresholds)
    for t in sorted(set(threshold_list)):
        t_dir = events_dir / f"t{t:g}"
        t_dir.mkdir(parents=True, exist_ok=True)
        dev_tokens = [
            events_mod.clip_event_tokens(scores[rec.clip_id], t) for rec in dev.records
        ]
        vocab = events_mod.build_event_vocabulary(dev_tokens)
        events_mod.save_event_vocabulary(t_dir / "vocabulary.json", vocab, t)
        for rec in all_records:
            out_path = t_dir / f"{rec.clip_id}.events.json"
            if out_path.exists() and not force:
                continue
            tokens = events_mod.clip_event_tokens(scores[rec.clip_id], t)
            events_mod.save_event_vector(out_path, events_mod.encode_one_hot(tokens, vocab))
        click.echo(f"events: t={t:g} -> K={vocab.size} over {len(all_records)} clips")


# ---- shared loading -------------------------------------------------------------


def _load_features(cfg: RunConfig, clip_ids, kind: str) -> dict:
    feat_dir = cfg.resolved_features_dir()
    want = FEATURE_DIMS[kind]
    out = {}
    missing = []
    for clip_id in clip_ids:
        path = feat_dir / f"{clip_id}.feat.act1"
        if not path.exists():
            missing.append(clip_id)
            continue
        vec = load_tensor(path).astype(np.float64)
        if vec.ndim != 1 or vec.shape[0] != want:
            raise click.ClickException(
                f"{path}: feature shape {vec.shape}, want ({want},) for {kind}"
            )
        out[clip_id] = vec
    if missing:
        raise click.ClickException(
            f"missing feature files for {len(missing)} clips "
            f"(first: {missing[0]}); run the features command"
        )
    return out


def _load_event_inputs(cfg: RunConfig, clip_ids, mode: str, threshold: float):
    """Returns (event_dim, {clip_id: vector}, event_tokens or None)."""
    if mode == "none":
        return 0, None, None
    events_dir = cfg.resolved_events_dir()
    if mode == "raw_scores":
        vectors = {}
        for clip_id in clip_ids:
            path = events_dir / "raw" / f"{clip_id}.events.act1"
            if not path.exists():
                raise click.ClickException(f"missing event file {path}")
            vectors[clip_id] = load_tensor(path).astype(np.float64)
        return events_mod.RAW_CLASS_COUNT, vectors, None
    t_dir = events_dir / f"t{threshold:g}"
    vocab_path = t_dir / "vocabulary.json"
    if not vocab_path.exists():
        raise click.ClickException(
            f"missing event vocabulary {vocab_path}; run the events command"
        )
    vocab = events_mod.load_event_vocabulary(vocab_path)
    vectors = {}
    for clip_id in clip_ids:
        path = t_dir / f"{clip_id}.events.json"
        if not path.exists():
            raise click.ClickException(f"missing event file {path}")
        vectors[clip_id] = events_mod.load_event_vector(path, vocab).bits
    return vocab.size, vectors, list(vocab.tokens)


def _build_embeddings(cfg: RunConfig, vocab, dev_captions):
    template = cfg.model_template()
    seed = cfg.seed if cfg.seed is not None else 0
    if cfg.embedding_kind == "word2vec":
        table = train_word2vec(
            dev_captions,
            window=cfg.word2vec_window,
            dim=template["embedding_dim"],
            negatives=cfg.word2vec_negatives,
            epochs=cfg.word2vec_epochs,
            seed=seed,
        )
    elif cfg.embedding_kind == "glove":
        path = _require(cfg.glove_path, "config needs glove_path for glove embeddings")
        table = load_glove(path, vocab, seed=seed)
    else:
        table = random_table(vocab, template["embedding_dim"], seed=seed)
    return table


# ---- train ----------------------------------------------------------------------


def run_training(cfg: RunConfig, train_dir: Path) -> dict:
    """The full training workflow; returns summary facts for the caller."""
    dev = _require(_manifest(cfg, "development"), "config needs dev_manifest")
    val = _manifest(cfg, "validation")
    template = cfg.model_template()
    kind = template["acoustic_kind"]
    seed = cfg.seed if cfg.seed is not None else 0

    clip_ids = dev.clip_ids() + (val.clip_ids() if val else [])
    features = _load_features(cfg, clip_ids, kind)
    event_dim, event_vectors, event_tokens = _load_event_inputs(
        cfg, clip_ids, template["event_mode"], template["event_threshold"]
    )

    dev_captions = data_mod.manifest_captions(dev)
    vocab = build_word_vocabulary(dev_captions)
    table = _build_embeddings(cfg, vocab, dev_captions)
    model_config = cfg.resolve_model(vocab.size, event_dim, table.dimension)
    emb = embedding_matrix(table, vocab, seed=seed)
    model = assemble_model(model_config, emb)

    train_samples = data_mod.expand_dataset(dev, vocab, model_config, features, event_vectors)
    val_samples = (
        data_mod.expand_dataset(val, vocab, model_config, features, event_vectors)
        if val
        else None
    )

    result = train_model(
        model,
        train_samples,
        val_samples,
        lr=cfg.train_lr,
        seed=seed,
    )

    train_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, train_dir, extra={"model": model_config.to_dict()})
    save_checkpoint(
        train_dir / "checkpoint.ckpt",
        model,
        vocab,
        event_tokens=event_tokens,
        epoch=result.best_epoch,
        val_loss=result.best_val_loss,
        state=result.best_state,
    )
    (train_dir / "history.json").write_text(
        json.dumps(result.history, sort_keys=True, indent=2) + "\n"
    )
    with (train_dir / "loss_curve.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss"])
        for h in result.history:
            writer.writerow([h["epoch"], f"{h['train_loss']:.10f}", f"{h['val_loss']:.10f}"])
    plots.save_loss_curve(result.history, train_dir / "loss_curve.png")
    (train_dir / "params.json").write_text(
        json.dumps(
            {"total": model.param_count(), "by_group": model.param_breakdown()},
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    return {
        "model": model,
        "vocab": vocab,
        "config": model_config,
        "result": result,
        "param_count": model.param_count(),
    }


@main.command("train")
@run_options
def cmd_train(config_path, seed, out_dir, force, threads):
    """Train the captioner; writes checkpoint, loss history, and curves."""
    cfg = _load_cfg(config_path, seed, out_dir)
    train_dir = Path(cfg.out_dir) / "train"
    if (train_dir / "checkpoint.ckpt").exists() and not force:
        raise click.ClickException(f"{train_dir} already holds a checkpoint (use --force)")
    facts = run_training(cfg, train_dir)
    result = facts["result"]
    click.echo(
        f"train: {facts['param_count']} parameters, best epoch {result.best_epoch} "
        f"(val loss {result.best_val_loss:.4f})"
    )


# ---- caption --------------------------------------------------------------------


def run_captioning(cfg: RunConfig, checkpoint_path: Path, split: str, out_path: Path) -> int:
    model, meta = load_checkpoint(checkpoint_path)
    vocab = meta["vocab"]
    manifest = _manifest(cfg, split, allow_empty=True)
    manifest = _require(manifest, f"config needs {split} manifest")
    if not manifest.records:
        out_path.parent.mkdir(parents=True, exist_ok=True)
        out_path.write_text("")
        return 0

    if cfg.dev_manifest:
        dev = _manifest(cfg, "development")
        run_vocab = build_word_vocabulary(data_mod.manifest_captions(dev))
        if run_vocab.content_hash() != meta["word_vocab_sha256"]:
            raise click.ClickException(
                "word vocabulary of this run does not match the checkpoint"
            )

    mode = model.config.event_mode
    clip_ids = manifest.clip_ids()
    features = _load_features(cfg, clip_ids, model.config.acoustic_kind)
    event_dim, event_vectors, event_tokens = _load_event_inputs(
        cfg, clip_ids, mode, model.config.event_threshold
    )
    if event_dim != model.config.event_dim:
        raise click.ClickException(
            f"event width {event_dim} does not match checkpoint ({model.config.event_dim})"
        )
    if mode == "one_hot" and meta.get("event_tokens") is not None:
        if list(event_tokens) != list(meta["event_tokens"]):
            raise click.ClickException("event vocabulary does not match the checkpoint")

    out_path.parent.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, out_path.parent)
    lines = []
    for rec in manifest.records:
        words = model.greedy_caption(
            features[rec.clip_id],
            None if event_vectors is None else event_vectors[rec.clip_id],
            vocab,
        )
        lines.append(json.dumps({"clip_id": rec.clip_id, "candidate": " ".join(words)}, sort_keys=True))
    out_path.write_text("".join(line + "\n" for line in lines))
    return len(lines)


@main.command("caption")
@run_options
@click.option("--checkpoint", "checkpoint_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Checkpoint file (default: <out>/train/checkpoint.ckpt).")
@click.option("--split", type=click.Choice(data_mod.SPLITS), default="evaluation", show_default=True)
def cmd_caption(config_path, seed, out_dir, force, threads, checkpoint_path, split):
    """Greedy-decode captions for a split using a trained checkpoint."""
    cfg = _load_cfg(config_path, seed, out_dir)
    ckpt = Path(checkpoint_path) if checkpoint_path else Path(cfg.out_dir) / "train" / "checkpoint.ckpt"
    if not ckpt.exists():
        raise click.ClickException(f"no checkpoint at {ckpt}")
    out_path = Path(cfg.out_dir) / "captions" / f"{split}.jsonl"
    count = run_captioning(cfg, ckpt, split, out_path)
    click.echo(f"caption: {count} captions -> {out_path}")


# ---- evaluate -------------------------------------------------------------------


def run_evaluation(cfg: RunConfig, candidates_path: Path, split: str, eval_dir: Path):
    manifest = _require(_manifest(cfg, split), f"config needs {split} manifest")
    refs = data_mod.references_by_clip(manifest)
    instances = []
    for lineno, line in enumerate(candidates_path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        payload = json.loads(line)
        clip_id = str(payload["clip_id"])
        if clip_id not in refs:
            raise click.ClickException(
                f"{candidates_path}:{lineno}: clip {clip_id!r} has no references in the {split} manifest"
            )
        instances.append(
            metrics_mod.make_instance(clip_id, payload["candidate"].split(), refs[clip_id])
        )
    if not instances:
        raise click.ClickException(f"{candidates_path}: no candidates to score")
    report = metrics_mod.evaluate(instances)

    eval_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, eval_dir)
    (eval_dir / "metrics.json").write_text(
        json.dumps(report.to_dict(), sort_keys=True, indent=2) + "\n"
    )
    (eval_dir / "metrics.txt").write_text(report.to_table())
    plots.save_metric_bars(report.to_dict(), eval_dir / "metrics.png")
    return report


@main.command("evaluate")
@run_options
@click.option("--candidates", "candidates_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Candidate JSONL (default: <out>/captions/evaluation.jsonl).")
@click.option("--split", type=click.Choice(data_mod.SPLITS), default="evaluation", show_default=True)
def cmd_evaluate(config_path, seed, out_dir, force, threads, candidates_path, split):
    """Score candidate captions against the split's references."""
    cfg = _load_cfg(config_path, seed, out_dir)
    cand = Path(candidates_path) if candidates_path else Path(cfg.out_dir) / "captions" / f"{split}.jsonl"
    if not cand.exists():
        raise click.ClickException(f"no candidates file at {cand}")
    report = run_evaluation(cfg, cand, split, Path(cfg.out_dir) / "eval")
    click.echo(report.to_table(), nl=False)


# ---- ablate ---------------------------------------------------------------------


def _combo_seed(base: int, label: str) -> int:
    return base + zlib.crc32(label.encode("utf-8"))


@main.command("ablate")
@run_options
def cmd_ablate(config_path, seed, out_dir, force, threads):
    """Sweep thresholds, embedding kinds, and batch sizes; aggregate reports."""
    cfg = _load_cfg(config_path, seed, out_dir)
    template = cfg.model_template()
    base_seed = cfg.seed if cfg.seed is not None else 0
    thresholds = list(cfg.ablate_thresholds) or [template["event_threshold"]]
    batch_sizes = [int(b) for b in cfg.ablate_batch_sizes] or [template["batch_size"]]
    embeddings = list(cfg.ablate_embeddings) or [cfg.embedding_kind]
    eval_split = "evaluation" if cfg.eval_manifest else "development"

    ablation_dir = Path(cfg.out_dir) / "ablation"
    ablation_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, ablation_dir)

    rows = []
    failures = 0
    for t in thresholds:
        for emb in embeddings:
            for bs in batch_sizes:
                label = f"t{t:g}_{emb}_b{bs}"
                sub_dir = ablation_dir / label
                sub_model = dict(cfg.model)
                sub_model["event_threshold"] = t
                sub_model["batch_size"] = bs
                # sub-runs get their own out_dir, so the shared feature and
                # event stores must be pinned to the parent's locations
                sub_cfg = replace(
                    cfg,
                    model=sub_model,
                    embedding_kind=emb,
                    seed=_combo_seed(base_seed, label),
                    out_dir=str(sub_dir),
                    features_dir=str(cfg.resolved_features_dir()),
                    events_dir=str(cfg.resolved_events_dir()),
                )
                row = {
                    "label": label,
                    "threshold": t,
                    "embedding": emb,
                    "batch_size": bs,
                    "seed": sub_cfg.seed,
                }
                try:
                    run_training(sub_cfg, sub_dir / "train")
                    count = run_captioning(
                        sub_cfg,
                        sub_dir / "train" / "checkpoint.ckpt",
                        eval_split,
                        sub_dir / "captions" / f"{eval_split}.jsonl",
                    )
                    report = run_evaluation(
                        sub_cfg,
                        sub_dir / "captions" / f"{eval_split}.jsonl",
                        eval_split,
                        sub_dir / "eval",
                    )
                    row.update(report.to_dict())
                    row["captions"] = count
                    click.echo(f"ablate: {label} done")
                except (click.ClickException, ModelError, ConfigError, ValueError) as exc:
                    row["error"] = str(exc)
                    failures += 1
                    click.echo(f"ablate: {label} FAILED: {exc}", err=True)
                rows.append(row)

    columns = [
        "label", "threshold", "embedding", "batch_size", "seed",
        "bleu1", "bleu2", "bleu3", "bleu4", "meteor", "rouge_l", "cider", "error",
    ]
    with (ablation_dir / "summary.csv").open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow(row)
    plots.save_ablation_chart(rows, ablation_dir / "ablation.png")
    click.echo(f"ablate: {len(rows)} combinations, {failures} failed -> {ablation_dir}")
    if failures:
        sys.exit(1)


# ---- split-dev ------------------------------------------------------------------


@main.command("split-dev")
@run_options
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False), default=None, help="Source manifest (default: config dev_manifest).")
@click.option("--dev-size", type=int, default=2000, show_default=True)
@click.option("--val-size", type=int, default=893, show_default=True)
def cmd_split_dev(config_path, seed, out_dir, force, threads, manifest_path, dev_size, val_size):
    """Carve a seeded development/validation split from one manifest."""
    cfg = _load_cfg(config_path, seed, out_dir)
    source = manifest_path or _require(cfg.dev_manifest, "config needs dev_manifest")
    manifest = data_mod.load_manifest(source, "development")
    dev, val = data_mod.split_dev(
        manifest,
        dev_count=dev_size,
        val_count=val_size,
        seed=cfg.seed if cfg.seed is not None else 0,
    )
    split_dir = Path(cfg.out_dir) / "split"
    split_dir.mkdir(parents=True, exist_ok=True)
    _echo_config(cfg, split_dir)
    data_mod.save_manifest(split_dir / "development.csv", dev)
    data_mod.save_manifest(split_dir / "validation.csv", val)
    (split_dir / "split.json").write_text(
        json.dumps(
            {
                "seed": cfg.seed,
                "source": str(source),
                "dev_size": dev_size,
                "val_size": val_size,
            },
            sort_keys=True,
            indent=2,
        )
        + "\n"
    )
    click.echo(f"split-dev: {dev_size}/{val_size} -> {split_dir}")


if __name__ == "__main__":
    main()
