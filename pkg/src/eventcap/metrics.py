"""Corpus caption metrics: BLEU-1..4, ROUGE_L, METEOR, CIDEr.

All four operate on the same tokenized instances. BLEU is corpus-level
clipped n-gram precision with a brevity penalty. ROUGE_L and METEOR score
each instance against its best reference and average over the corpus.
CIDEr builds reference-corpus IDF weights and averages TF-IDF cosines over
n-gram orders 1..4, scaled by 10.

METEOR alignment: unigrams match if their surface forms are equal or their
Porter stems are equal (the exact stage never excludes a stem match, so the
match count is the per-stem-class minimum). Among all maximum alignments the
one with the fewest chunks — runs of adjacent matched pairs — determines the
fragmentation penalty.
"""

from __future__ import annotations

import json
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path

from .stem import porter_stem

BLEU_MAX_ORDER = 4
ROUGE_BETA = 1.2
METEOR_ALPHA = 0.9
METEOR_GAMMA = 0.5
METEOR_BETA = 3.0
CIDER_MAX_ORDER = 4
CIDER_SCALE = 10.0

_CHUNK_SEARCH_NODE_CAP = 500_000


class MetricError(ValueError):
    """Raised for unusable inputs (empty corpora, missing references)."""


@dataclass(frozen=True)
class EvalInstance:
    """One clip's candidate tokens and its 1..5 reference token lists."""

    clip_id: str
    candidate: tuple
    references: tuple

    def __post_init__(self):
        if not self.references:
            raise MetricError(f"{self.clip_id}: needs at least one reference")


@dataclass(frozen=True)
class MetricReport:
    bleu1: float
    bleu2: float
    bleu3: float
    bleu4: float
    meteor: float
    rouge_l: float
    cider: float

    def to_dict(self) -> dict:
        return {
            "bleu1": self.bleu1,
            "bleu2": self.bleu2,
            "bleu3": self.bleu3,
            "bleu4": self.bleu4,
            "meteor": self.meteor,
            "rouge_l": self.rouge_l,
            "cider": self.cider,
        }

    def to_table(self) -> str:
        """Plain-text row in the conventional column order."""
        header = ["B-1", "B-2", "B-3", "B-4", "METEOR", "ROUGE_L", "CIDEr"]
        values = [
            self.bleu1,
            self.bleu2,
            self.bleu3,
            self.bleu4,
            self.meteor,
            self.rouge_l,
            self.cider,
        ]
        head = "  ".join(f"{h:>7}" for h in header)
        row = "  ".join(f"{v:7.4f}" for v in values)
        return f"{head}\n{row}\n"


def make_instance(clip_id: str, candidate, references) -> EvalInstance:
    return EvalInstance(
        clip_id=clip_id,
        candidate=tuple(candidate),
        references=tuple(tuple(r) for r in references),
    )


# ---- BLEU ----------------------------------------------------------------------


def _ngrams(tokens, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def bleu(instances, n: int) -> float:
    """Corpus BLEU of order n: geometric mean of clipped precisions 1..n
    times the brevity penalty."""
    if not 1 <= n <= BLEU_MAX_ORDER:
        raise MetricError(f"bleu order {n} outside 1..{BLEU_MAX_ORDER}")
    instances = list(instances)
    if not instances:
        raise MetricError("bleu: empty corpus")
    matched = [0] * n
    total = [0] * n
    cand_len = 0
    ref_len = 0
    for inst in instances:
        cand = inst.candidate
        cand_len += len(cand)
        # closest reference length; ties go to the shorter reference
        ref_len += min(
            (len(r) for r in inst.references),
            key=lambda L: (abs(L - len(cand)), L),
        )
        for k in range(1, n + 1):
            counts = _ngrams(cand, k)
            if not counts:
                continue
            best = Counter()
            for ref in inst.references:
                ref_counts = _ngrams(ref, k)
                for gram, c in counts.items():
                    best[gram] = max(best[gram], min(c, ref_counts[gram]))
            matched[k - 1] += sum(best.values())
            total[k - 1] += sum(counts.values())
    if cand_len == 0:
        return 0.0
    log_sum = 0.0
    for k in range(n):
        if matched[k] == 0 or total[k] == 0:
            return 0.0
        log_sum += math.log(matched[k] / total[k])
    bp = 1.0 if cand_len >= ref_len else math.exp(1.0 - ref_len / cand_len)
    return bp * math.exp(log_sum / n)


# ---- ROUGE_L -------------------------------------------------------------------


def _lcs_length(a, b) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for i in range(1, len(a) + 1):
        cur = [0] * (len(b) + 1)
        ai = a[i - 1]
        for j in range(1, len(b) + 1):
            if ai == b[j - 1]:
                cur[j] = prev[j - 1] + 1
            else:
                cur[j] = max(prev[j], cur[j - 1])
        prev = cur
    return prev[len(b)]


def rouge_l(instances) -> float:
    """Mean over instances of the best-reference LCS F-measure (beta=1.2)."""
    instances = list(instances)
    if not instances:
        raise MetricError("rouge_l: empty corpus")
    beta_sq = ROUGE_BETA * ROUGE_BETA
    total = 0.0
    for inst in instances:
        best = 0.0
        for ref in inst.references:
            lcs = _lcs_length(inst.candidate, ref)
            if lcs == 0:
                continue
            precision = lcs / len(inst.candidate)
            recall = lcs / len(ref)
            f = (1.0 + beta_sq) * precision * recall / (recall + beta_sq * precision)
            best = max(best, f)
        total += best
    return total / len(instances)


# ---- METEOR --------------------------------------------------------------------


def _match_count(cand_stems, ref_stems) -> int:
    cand_counts = Counter(cand_stems)
    ref_counts = Counter(ref_stems)
    return sum(min(c, ref_counts[g]) for g, c in cand_counts.items())


def _min_chunks(cand_stems, ref_stems, m: int) -> int:
    """Fewest chunks over all maximum alignments, by pruned DFS.

    A chunk is a maximal run of matched pairs (i, j), (i+1, j+1). The search
    walks candidate positions left to right; per stem class it tracks how
    many candidate tokens may still be left unmatched. If the node budget is
    exhausted the best alignment found so far is returned (the first DFS
    descent already lands on a greedy solution).
    """
    if m == 0:
        return 0
    ref_by_stem = defaultdict(list)
    for j, g in enumerate(ref_stems):
        ref_by_stem[g].append(j)
    cand_counts = Counter(cand_stems)
    ref_counts = Counter(ref_stems)
    # how many candidate tokens of each class may stay unmatched
    slack = {g: cand_counts[g] - min(cand_counts[g], ref_counts[g]) for g in cand_counts}

    used = [False] * len(ref_stems)
    best = [len(cand_stems) + 1]
    nodes = [0]

    def dfs(i: int, prev_j: int, chunks: int, matched: int):
        if chunks >= best[0]:
            return
        if matched == m:
            best[0] = chunks
            return
        if nodes[0] > _CHUNK_SEARCH_NODE_CAP:
            return
        if i >= len(cand_stems):
            return
        nodes[0] += 1
        g = cand_stems[i]
        # continuing the current chunk first steers the search greedily
        candidates_j = ref_by_stem.get(g, ())
        ordered = sorted(candidates_j, key=lambda j: (j != prev_j + 1, j))
        for j in ordered:
            if used[j]:
                continue
            used[j] = True
            dfs(i + 1, j, chunks + (0 if j == prev_j + 1 else 1), matched + 1)
            used[j] = False
        if slack[g] > 0:
            slack[g] -= 1
            dfs(i + 1, -2, chunks, matched)
            slack[g] += 1

    dfs(0, -2, 0, 0)
    return best[0] if best[0] <= len(cand_stems) else m


def meteor_sentence(candidate, reference) -> float:
    """METEOR of one candidate against one reference."""
    if not candidate or not reference:
        return 0.0
    cand_stems = [porter_stem(t) for t in candidate]
    ref_stems = [porter_stem(t) for t in reference]
    m = _match_count(cand_stems, ref_stems)
    if m == 0:
        return 0.0
    precision = m / len(candidate)
    recall = m / len(reference)
    f = (
        precision
        * recall
        / (METEOR_ALPHA * precision + (1.0 - METEOR_ALPHA) * recall)
    )
    chunks = _min_chunks(cand_stems, ref_stems, m)
    penalty = METEOR_GAMMA * (chunks / m) ** METEOR_BETA
    return f * (1.0 - penalty)


def meteor(instances) -> float:
    """Mean over instances of the best single-reference METEOR."""
    instances = list(instances)
    if not instances:
        raise MetricError("meteor: empty corpus")
    total = 0.0
    for inst in instances:
        total += max(meteor_sentence(inst.candidate, ref) for ref in inst.references)
    return total / len(instances)


# ---- CIDEr ---------------------------------------------------------------------


def _cider_vector(counts: Counter, idf: dict):
    vec = {g: c * idf[g] for g, c in counts.items()}
    norm = math.sqrt(sum(v * v for v in vec.values()))
    return vec, norm


def _cosine(vec_a: dict, norm_a: float, vec_b: dict, norm_b: float) -> float:
    if norm_a == 0.0 or norm_b == 0.0:
        return 0.0
    shorter, longer = (vec_a, vec_b) if len(vec_a) <= len(vec_b) else (vec_b, vec_a)
    dot = sum(v * longer.get(g, 0.0) for g, v in shorter.items())
    return dot / (norm_a * norm_b)


def cider(instances) -> float:
    """TF-IDF n-gram cosine (n=1..4) against each reference, averaged and x10.

    IDF comes from the reference side: log(N / df) with df = number of clips
    whose reference set contains the n-gram, floored at one clip so n-grams
    seen only in candidates stay finite.
    """
    instances = list(instances)
    if len(instances) < 2:
        raise MetricError("cider needs a corpus of at least 2 clips for IDF")
    n_clips = len(instances)
    score_total = 0.0
    for order in range(1, CIDER_MAX_ORDER + 1):
        df = Counter()
        for inst in instances:
            seen = set()
            for ref in inst.references:
                seen.update(_ngrams(ref, order))
            df.update(seen)
        idf = defaultdict(lambda: math.log(n_clips))
        for gram, d in df.items():
            idf[gram] = math.log(n_clips / max(1, d))
        order_total = 0.0
        for inst in instances:
            cand_vec, cand_norm = _cider_vector(_ngrams(inst.candidate, order), idf)
            ref_sum = 0.0
            for ref in inst.references:
                ref_vec, ref_norm = _cider_vector(_ngrams(ref, order), idf)
                ref_sum += _cosine(cand_vec, cand_norm, ref_vec, ref_norm)
            order_total += ref_sum / len(inst.references)
        score_total += order_total / n_clips
    return CIDER_SCALE * score_total / CIDER_MAX_ORDER


# ---- aggregation ---------------------------------------------------------------


def evaluate(instances) -> MetricReport:
    """All seven scores on one tokenization."""
    instances = list(instances)
    if not instances:
        raise MetricError("evaluate: empty corpus")
    return MetricReport(
        bleu1=bleu(instances, 1),
        bleu2=bleu(instances, 2),
        bleu3=bleu(instances, 3),
        bleu4=bleu(instances, 4),
        meteor=meteor(instances),
        rouge_l=rouge_l(instances),
        cider=cider(instances),
    )


def load_instances_jsonl(path) -> list:
    """Read {clip_id, candidate, references[]} JSON lines; strings or token lists."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        if not line.strip():
            continue
        data = json.loads(line)
        cand = data["candidate"]
        refs = data["references"]
        cand_tokens = cand.split() if isinstance(cand, str) else cand
        ref_tokens = [r.split() if isinstance(r, str) else r for r in refs]
        out.append(make_instance(str(data["clip_id"]), cand_tokens, ref_tokens))
    return out
