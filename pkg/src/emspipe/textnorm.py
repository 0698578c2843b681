"""Transcript normalization profiles used by scoring and evaluation.

Two profiles:

* ``STANDARD``: lowercase, strip punctuation (apostrophes inside words
  survive), collapse whitespace. Used for term matching and WER/CER against
  engines with open vocabularies.
* ``LIMITED_VOCAB``: STANDARD plus periods kept and integers 0-9999 spelled
  out in English, for engines whose vocabulary has no digits.

Both profiles are idempotent: normalizing twice equals normalizing once.
"""

from __future__ import annotations

import re
from enum import Enum


class Profile(str, Enum):
    STANDARD = "standard"
    LIMITED_VOCAB = "limited_vocab"


_ONES = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine",
    "ten", "eleven", "twelve", "thirteen", "fourteen", "fifteen", "sixteen",
    "seventeen", "eighteen", "nineteen",
]
_TENS = [
    "", "", "twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety",
]

# Standalone integer tokens only; digits glued to letters ("o2", "v12") stay.
_INT_RE = re.compile(r"(?<![a-z0-9])\d+(?![a-z0-9'])")
_WS_RE = re.compile(r"\s+")


def number_to_words(n: int) -> str:
    """Spell an integer in 0..9999 as English words, no hyphens or 'and'."""
    if not 0 <= n <= 9999:
        raise ValueError(f"{n} outside 0..9999")
    if n < 20:
        return _ONES[n]
    parts: list[str] = []
    if n >= 1000:
        parts.append(_ONES[n // 1000])
        parts.append("thousand")
        n %= 1000
    if n >= 100:
        parts.append(_ONES[n // 100])
        parts.append("hundred")
        n %= 100
    if n >= 20:
        parts.append(_TENS[n // 10])
        n %= 10
        if n:
            parts.append(_ONES[n])
    elif n:
        parts.append(_ONES[n])
    return " ".join(parts)


def _strip_punct(text: str, keep_periods: bool) -> str:
    out: list[str] = []
    for i, ch in enumerate(text):
        if ch.isalnum():
            out.append(ch)
        elif ch == "'" and 0 < i < len(text) - 1 and text[i - 1].isalnum() and text[i + 1].isalnum():
            out.append(ch)
        elif ch == "." and keep_periods:
            out.append(ch)
        else:
            out.append(" ")
    return "".join(out)


def _spell_integers(text: str) -> str:
    def repl(m: re.Match) -> str:
        value = int(m.group())
        if value > 9999:
            return m.group()
        return number_to_words(value)

    return _INT_RE.sub(repl, text)


def normalize_text(text: str, profile: Profile = Profile.STANDARD) -> str:
    """Normalize a transcript under the given profile."""
    lowered = text.lower()
    if profile is Profile.LIMITED_VOCAB:
        stripped = _strip_punct(lowered, keep_periods=True)
        stripped = _spell_integers(stripped)
    else:
        stripped = _strip_punct(lowered, keep_periods=False)
    return _WS_RE.sub(" ", stripped).strip()
