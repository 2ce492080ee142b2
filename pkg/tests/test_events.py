"""Score parsing, thresholding, tokenization, vocabularies, one-hot vectors."""

import json

import numpy as np
import pytest

from eventcap.events import (
    EventError,
    EventVocabulary,
    build_event_vocabulary,
    clip_event_tokens,
    encode_one_hot,
    load_event_score_lines,
    load_event_scores,
    load_event_vector,
    load_event_vocabulary,
    raw_score_vector,
    save_event_vector,
    save_event_vocabulary,
    threshold_select,
    tokenize_labels,
)

from conftest import (
    FIXTURE_NONZERO,
    SELECTED_T01,
    SELECTED_T02,
    SELECTED_T03,
    full_score_map,
)


def write_scores(tmp_path, payload, name="x.scores.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload) if not isinstance(payload, str) else payload)
    return path


# ---- parsing -------------------------------------------------------------------


def test_single_nonzero_class(tmp_path):
    payload = {"clip_id": "c", "scores": full_score_map({"speech": 0.5})}
    vec = load_event_scores(write_scores(tmp_path, payload))
    assert vec.clip_id == "c"
    assert vec.class_count == 527
    nonzero = {k: v for k, v in vec.scores.items() if v}
    assert nonzero == {"speech": 0.5}


def test_fixture_parses_exact_values(fixture_scores_path):
    vec = load_event_scores(fixture_scores_path)
    nonzero = {k: v for k, v in vec.scores.items() if v}
    assert nonzero == FIXTURE_NONZERO


def test_probability_out_of_range_rejected(tmp_path):
    payload = {"clip_id": "c", "scores": {"speech": 1.2}}
    with pytest.raises(EventError, match="outside"):
        load_event_scores(write_scores(tmp_path, payload))
    payload = {"clip_id": "c", "scores": {"speech": -0.1}}
    with pytest.raises(EventError, match="outside"):
        load_event_scores(write_scores(tmp_path, payload))


def test_duplicate_label_rejected(tmp_path):
    raw = '{"clip_id": "c", "scores": {"speech": 0.5, "speech": 0.6}}'
    with pytest.raises(EventError, match="duplicate"):
        load_event_scores(write_scores(tmp_path, raw))


def test_missing_clip_id_rejected(tmp_path):
    with pytest.raises(EventError, match="clip_id"):
        load_event_scores(write_scores(tmp_path, {"scores": {"a": 0.1}}))


def test_non_numeric_score_rejected(tmp_path):
    payload = {"clip_id": "c", "scores": {"speech": "high"}}
    with pytest.raises(EventError):
        load_event_scores(write_scores(tmp_path, payload))
    payload = {"clip_id": "c", "scores": {"speech": True}}
    with pytest.raises(EventError):
        load_event_scores(write_scores(tmp_path, payload))


def test_empty_label_rejected(tmp_path):
    payload = {"clip_id": "c", "scores": {"": 0.2}}
    with pytest.raises(EventError, match="label"):
        load_event_scores(write_scores(tmp_path, payload))


def test_jsonl_loader(tmp_path):
    lines = [
        json.dumps({"clip_id": "a", "scores": {"dog": 0.3}}),
        "",
        json.dumps({"clip_id": "b", "scores": {"cat": 0.4}}),
    ]
    path = tmp_path / "scores.jsonl"
    path.write_text("\n".join(lines))
    out = load_event_score_lines(path)
    assert [v.clip_id for v in out] == ["a", "b"]


# ---- thresholding ----------------------------------------------------------------


def test_fixture_selections_all_thresholds(fixture_scores_path):
    vec = load_event_scores(fixture_scores_path)
    assert set(threshold_select(vec, 0.1)) == set(SELECTED_T01)
    assert set(threshold_select(vec, 0.2)) == set(SELECTED_T02)
    assert set(threshold_select(vec, 0.3)) == set(SELECTED_T03)
    assert threshold_select(vec, 0.7) == []


def test_selection_order_is_descending_score(fixture_scores_path):
    vec = load_event_scores(fixture_scores_path)
    got = threshold_select(vec, 0.2)
    assert got == ["clip-clop", "speech", "horse", "animal", "ping", "bird"]


def test_strict_inequality_at_boundary(tmp_path):
    payload = {"clip_id": "c", "scores": {"a": 0.3, "b": 0.31}}
    vec = load_event_scores(write_scores(tmp_path, payload))
    assert threshold_select(vec, 0.3) == ["b"]
    assert threshold_select(vec, 0.0) == ["b", "a"]


def test_zero_threshold_drops_exact_zeros(tmp_path):
    payload = {"clip_id": "c", "scores": {"a": 0.0, "b": 0.0}}
    vec = load_event_scores(write_scores(tmp_path, payload))
    assert threshold_select(vec, 0.0) == []


def test_tie_breaks_lexicographically(tmp_path):
    payload = {"clip_id": "c", "scores": {"zebra": 0.5, "ant": 0.5, "mole": 0.6}}
    vec = load_event_scores(write_scores(tmp_path, payload))
    assert threshold_select(vec, 0.1) == ["mole", "ant", "zebra"]


def test_threshold_out_of_range(tmp_path):
    payload = {"clip_id": "c", "scores": {"a": 0.5}}
    vec = load_event_scores(write_scores(tmp_path, payload))
    with pytest.raises(EventError):
        threshold_select(vec, 1.5)


# ---- tokenization ----------------------------------------------------------------


def test_shared_word_duplicates_dropped():
    assert tokenize_labels(["Funny Music", "Sad Music"]) == ["funny", "music", "sad"]


def test_comma_split():
    assert tokenize_labels(["chirp, tweet"]) == ["chirp", "tweet"]


def test_single_word_identity():
    assert tokenize_labels(["speech"]) == ["speech"]


def test_hyphen_split_and_casefold():
    assert tokenize_labels(["Clip-Clop"]) == ["clip", "clop"]


def test_first_occurrence_order_kept():
    got = tokenize_labels(["bird vocalization, bird call, bird song", "bird"])
    assert got == ["bird", "vocalization", "call", "song"]


# ---- vocabulary -------------------------------------------------------------------


def test_union_of_two_clips():
    vocab = build_event_vocabulary([["a", "b"], ["b", "c"]])
    assert vocab.tokens == ("a", "b", "c")
    assert vocab.size == 3


def test_fixture_vocabulary_at_t03(fixture_scores_path):
    vec = load_event_scores(fixture_scores_path)
    tokens = clip_event_tokens(vec, 0.3)
    vocab = build_event_vocabulary([tokens])
    assert set(vocab.tokens) == {"clip", "clop", "speech", "horse", "animal"}
    assert vocab.size == 5
    assert list(vocab.tokens) == sorted(vocab.tokens)


def test_vocabulary_order_independent():
    a = build_event_vocabulary([["x", "y"], ["z"]])
    b = build_event_vocabulary([["z"], ["y", "x"]])
    assert a.tokens == b.tokens


def test_empty_union_warns():
    with pytest.warns(UserWarning, match="empty"):
        vocab = build_event_vocabulary([[], []])
    assert vocab.size == 0


def test_no_clips_rejected():
    with pytest.raises(EventError):
        build_event_vocabulary([])


# ---- one-hot encoding ---------------------------------------------------------------


def test_empty_tokens_all_zero():
    vocab = EventVocabulary.from_tokens(["a", "b", "c"])
    assert np.all(encode_one_hot([], vocab).bits == 0)


def test_full_vocabulary_all_ones():
    vocab = EventVocabulary.from_tokens(["a", "b", "c"])
    assert np.all(encode_one_hot(["a", "b", "c"], vocab).bits == 1)


def test_membership_bits():
    vocab = EventVocabulary.from_tokens(["animal", "bird", "horse", "speech"])
    vec = encode_one_hot(["horse", "speech"], vocab)
    np.testing.assert_array_equal(vec.bits, [0.0, 0.0, 1.0, 1.0])
    assert vec.bits.sum() == 2


def test_unknown_tokens_silently_dropped():
    vocab = EventVocabulary.from_tokens(["a"])
    vec = encode_one_hot(["a", "mystery"], vocab)
    np.testing.assert_array_equal(vec.bits, [1.0])


# ---- raw score vectors ----------------------------------------------------------------


def test_raw_vector_canonical_order(fixture_scores_path):
    vec = load_event_scores(fixture_scores_path)
    raw = raw_score_vector(vec)
    assert raw.shape == (527,)
    assert np.count_nonzero(raw) == 8
    labels = sorted(vec.scores)
    assert raw[labels.index("speech")] == 0.552


def test_raw_vector_permutation_invariant(tmp_path):
    items = list(full_score_map({"a": 0.1, "b": 0.2}).items())
    fwd = {"clip_id": "c", "scores": dict(items)}
    rev = {"clip_id": "c", "scores": dict(reversed(items))}
    v1 = raw_score_vector(load_event_scores(write_scores(tmp_path, fwd, "f.json")))
    v2 = raw_score_vector(load_event_scores(write_scores(tmp_path, rev, "r.json")))
    np.testing.assert_array_equal(v1, v2)


def test_raw_vector_class_count_enforced(tmp_path):
    payload = {"clip_id": "c", "scores": {"a": 0.5}}
    vec = load_event_scores(write_scores(tmp_path, payload))
    with pytest.raises(EventError, match="527"):
        raw_score_vector(vec)


# ---- monotonicity ------------------------------------------------------------------


def test_threshold_nesting_property():
    rng = np.random.default_rng(42)
    labels = [f"label {i}" for i in range(20)]
    for _ in range(50):
        payload = {
            "clip_id": "c",
            "scores": {lab: float(rng.uniform(0, 1)) for lab in labels},
        }
        vec = load_event_scores_from_dict(payload)
        grid = sorted(rng.uniform(0, 1, size=4))
        prev = None
        for t in grid:
            sel = set(threshold_select(vec, float(t)))
            if prev is not None:
                assert sel.issubset(prev)
            prev = sel


def load_event_scores_from_dict(payload):
    from eventcap.events import _decode_score_json

    return _decode_score_json(json.dumps(payload), "inline")


# ---- persistence -------------------------------------------------------------------


def test_event_vector_roundtrip(tmp_path):
    vocab = EventVocabulary.from_tokens(["a", "b", "c"])
    vec = encode_one_hot(["b"], vocab)
    path = tmp_path / "v.events.json"
    save_event_vector(path, vec)
    back = load_event_vector(path, vocab)
    np.testing.assert_array_equal(back.bits, vec.bits)


def test_event_vector_vocab_mismatch(tmp_path):
    vocab = EventVocabulary.from_tokens(["a", "b"])
    other = EventVocabulary.from_tokens(["a", "z"])
    path = tmp_path / "v.events.json"
    save_event_vector(path, encode_one_hot(["a"], vocab))
    with pytest.raises(EventError, match="mismatch"):
        load_event_vector(path, other)


def test_vocabulary_roundtrip(tmp_path):
    vocab = EventVocabulary.from_tokens(["dog", "cat"])
    path = tmp_path / "vocab.json"
    save_event_vocabulary(path, vocab, 0.2)
    back = load_event_vocabulary(path)
    assert back.tokens == vocab.tokens
    assert json.loads(path.read_text())["threshold"] == 0.2
