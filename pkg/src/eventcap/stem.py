"""Porter stemmer (the classic 1980 algorithm, steps 1a through 5b).

Each step examines the longest matching suffix from its rule list; the
replacement happens only if the rule's measure/letter condition holds on the
remaining stem. Words of one or two letters pass through unchanged.
"""

from __future__ import annotations

VOWELS = set("aeiou")


def _is_consonant(word: str, i: int) -> bool:
    ch = word[i]
    if ch in VOWELS:
        return False
    if ch == "y":
        return i == 0 or not _is_consonant(word, i - 1)
    return True


def _measure(stem: str) -> int:
    """Count VC sequences: the m of [C](VC){m}[V]."""
    m = 0
    prev_vowel = False
    for i in range(len(stem)):
        vowel = not _is_consonant(stem, i)
        if prev_vowel and not vowel:
            m += 1
        prev_vowel = vowel
    return m


def _contains_vowel(stem: str) -> bool:
    return any(not _is_consonant(stem, i) for i in range(len(stem)))


def _ends_double_consonant(word: str) -> bool:
    return (
        len(word) >= 2
        and word[-1] == word[-2]
        and _is_consonant(word, len(word) - 1)
    )


def _ends_cvc(word: str) -> bool:
    if len(word) < 3:
        return False
    if not (
        _is_consonant(word, len(word) - 3)
        and not _is_consonant(word, len(word) - 2)
        and _is_consonant(word, len(word) - 1)
    ):
        return False
    return word[-1] not in "wxy"


def _longest_rule(word: str, rules):
    """Pick the rule with the longest matching suffix, or None.

    Per the algorithm, only the longest matching suffix is considered; if
    its condition fails, no rule in the step applies.
    """
    best = None
    for suffix, replacement, condition in rules:
        if word.endswith(suffix) and (best is None or len(suffix) > len(best[0])):
            best = (suffix, replacement, condition)
    return best


def _apply(word: str, rules) -> str:
    rule = _longest_rule(word, rules)
    if rule is None:
        return word
    suffix, replacement, condition = rule
    stem = word[: len(word) - len(suffix)]
    if condition is None or condition(stem):
        return stem + replacement
    return word


def _m_gt(threshold: int):
    return lambda stem: _measure(stem) > threshold


_STEP2 = [
    ("ational", "ate", _m_gt(0)),
    ("tional", "tion", _m_gt(0)),
    ("enci", "ence", _m_gt(0)),
    ("anci", "ance", _m_gt(0)),
    ("izer", "ize", _m_gt(0)),
    ("abli", "able", _m_gt(0)),
    ("alli", "al", _m_gt(0)),
    ("entli", "ent", _m_gt(0)),
    ("eli", "e", _m_gt(0)),
    ("ousli", "ous", _m_gt(0)),
    ("ization", "ize", _m_gt(0)),
    ("ation", "ate", _m_gt(0)),
    ("ator", "ate", _m_gt(0)),
    ("alism", "al", _m_gt(0)),
    ("iveness", "ive", _m_gt(0)),
    ("fulness", "ful", _m_gt(0)),
    ("ousness", "ous", _m_gt(0)),
    ("aliti", "al", _m_gt(0)),
    ("iviti", "ive", _m_gt(0)),
    ("biliti", "ble", _m_gt(0)),
]

_STEP3 = [
    ("icate", "ic", _m_gt(0)),
    ("ative", "", _m_gt(0)),
    ("alize", "al", _m_gt(0)),
    ("iciti", "ic", _m_gt(0)),
    ("ical", "ic", _m_gt(0)),
    ("ful", "", _m_gt(0)),
    ("ness", "", _m_gt(0)),
]

_STEP4 = [
    ("al", "", _m_gt(1)),
    ("ance", "", _m_gt(1)),
    ("ence", "", _m_gt(1)),
    ("er", "", _m_gt(1)),
    ("ic", "", _m_gt(1)),
    ("able", "", _m_gt(1)),
    ("ible", "", _m_gt(1)),
    ("ant", "", _m_gt(1)),
    ("ement", "", _m_gt(1)),
    ("ment", "", _m_gt(1)),
    ("ent", "", _m_gt(1)),
    ("ion", "", lambda stem: _m_gt(1)(stem) and stem[-1:] in ("s", "t")),
    ("ou", "", _m_gt(1)),
    ("ism", "", _m_gt(1)),
    ("ate", "", _m_gt(1)),
    ("iti", "", _m_gt(1)),
    ("ous", "", _m_gt(1)),
    ("ive", "", _m_gt(1)),
    ("ize", "", _m_gt(1)),
]


def _step_1a(word: str) -> str:
    if word.endswith("sses"):
        return word[:-2]
    if word.endswith("ies"):
        return word[:-2]
    if word.endswith("ss"):
        return word
    if word.endswith("s"):
        return word[:-1]
    return word


def _step_1b(word: str) -> str:
    if word.endswith("eed"):
        stem = word[:-3]
        if _measure(stem) > 0:
            return stem + "ee"
        return word
    fired = False
    if word.endswith("ed") and _contains_vowel(word[:-2]):
        word = word[:-2]
        fired = True
    elif word.endswith("ing") and _contains_vowel(word[:-3]):
        word = word[:-3]
        fired = True
    if not fired:
        return word
    if word.endswith(("at", "bl", "iz")):
        return word + "e"
    if _ends_double_consonant(word) and word[-1] not in "lsz":
        return word[:-1]
    if _measure(word) == 1 and _ends_cvc(word):
        return word + "e"
    return word


def _step_1c(word: str) -> str:
    if word.endswith("y") and _contains_vowel(word[:-1]):
        return word[:-1] + "i"
    return word


def _step_5a(word: str) -> str:
    if word.endswith("e"):
        stem = word[:-1]
        m = _measure(stem)
        if m > 1:
            return stem
        if m == 1 and not _ends_cvc(stem):
            return stem
    return word


def _step_5b(word: str) -> str:
    if _measure(word) > 1 and _ends_double_consonant(word) and word.endswith("l"):
        return word[:-1]
    return word


def porter_stem(word: str) -> str:
    """Stem one lowercase word."""
    if len(word) <= 2:
        return word
    word = _step_1a(word)
    word = _step_1b(word)
    word = _step_1c(word)
    word = _apply(word, _STEP2)
    word = _apply(word, _STEP3)
    word = _apply(word, _STEP4)
    word = _step_5a(word)
    word = _step_5b(word)
    return word
