"""Text ingestion: the 30-symbol vocabulary, canonicalisation, splitting,
public/private partitioning by sensitive words, and sharding."""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

SPACE, EOS, APOSTROPHE, PERIOD = 26, 27, 28, 29
VOCAB_SIZE = 30

MONTHS = (
    "JANUARY", "FEBRUARY", "MARCH", "APRIL", "MAY", "JUNE",
    "JULY", "AUGUST", "SEPTEMBER", "OCTOBER", "NOVEMBER", "DECEMBER",
)
WEEKDAYS = ("MONDAY", "TUESDAY", "WEDNESDAY", "THURSDAY", "FRIDAY", "SATURDAY", "SUNDAY")
SEASONS = ("SPRING", "SUMMER", "AUTUMN", "WINTER")
DEFAULT_PRIVATE_WORDS = frozenset(MONTHS + WEEKDAYS + SEASONS)

_WORD_DELIMS = (SPACE, EOS, APOSTROPHE, PERIOD)


class CorpusError(ValueError):
    """Raised for malformed or unusable corpus data."""


class EmptyCorpusError(CorpusError):
    pass


class Vocab:
    """Fixed bijection between the 30 text symbols and their indices."""

    symbols: tuple[str, ...] = tuple("ABCDEFGHIJKLMNOPQRSTUVWXYZ") + (" ", "\n", "'", ".")
    names: tuple[str, ...] = tuple("ABCDEFGHIJKLMNOPQRSTUVWXYZ") + ("SPACE", "EOS", "APOSTROPHE", "PERIOD")

    def __init__(self):
        self._index = {s: k for k, s in enumerate(self.symbols)}
        table = np.full(256, 255, dtype=np.uint8)
        for s, k in self._index.items():
            table[ord(s)] = k
        self._byte_table = table
        self._chars = np.frombuffer("".join(self.symbols).encode("ascii"), dtype=np.uint8)

    def __len__(self) -> int:
        return len(self.symbols)

    def encode(self, text: str) -> np.ndarray:
        """Encode canonical text (already restricted to the 30 symbols)."""
        raw = np.frombuffer(text.encode("ascii", errors="replace"), dtype=np.uint8)
        ids = self._byte_table[raw]
        if ids.size and ids.max() >= VOCAB_SIZE:
            bad = text[int(np.argmax(ids >= VOCAB_SIZE))]
            raise CorpusError(f"symbol {bad!r} is not in the vocabulary")
        return ids

    def decode(self, ids: Iterable[int]) -> str:
        ids = check_symbols(ids)
        return self._chars[ids].tobytes().decode("ascii")

    @property
    def hash(self) -> str:
        return hashlib.sha256("|".join(self.names).encode()).hexdigest()[:16]


VOCAB = Vocab()


def check_symbols(ids, name: str = "sequence") -> np.ndarray:
    """Validate and convert to a uint8 symbol-id array."""
    arr = np.asarray(ids)
    if arr.ndim != 1:
        raise CorpusError(f"{name} must be 1-D, got shape {arr.shape}")
    if arr.size and (arr.min() < 0 or arr.max() >= VOCAB_SIZE):
        raise CorpusError(f"{name} contains ids outside [0, {VOCAB_SIZE})")
    if arr.size and not np.issubdtype(arr.dtype, np.integer):
        raise CorpusError(f"{name} must hold integer ids, got {arr.dtype}")
    return arr.astype(np.uint8, copy=False)


_NOT_ALLOWED = re.compile(r"[^A-Z'. \n]+")
_SPACES = re.compile(r" +")
_SPACE_AROUND_NL = re.compile(r" *\n *")
_BLANK_LINES = re.compile(r"\n{2,}")


def canonicalize(text: str | bytes) -> str:
    if isinstance(text, bytes):
        text = text.decode("utf-8", errors="replace")
    text = text.upper().replace("\r\n", "\n").replace("\r", "\n")
    text = _NOT_ALLOWED.sub(" ", text)
    text = _SPACES.sub(" ", text)
    text = _SPACE_AROUND_NL.sub("\n", text)
    text = _BLANK_LINES.sub("\n", text)
    return text.strip(" ").lstrip("\n")


def preprocess(text: str | bytes) -> np.ndarray:
    """Map raw text onto the vocabulary.

    Letters are upper-cased, line breaks become EOS, and any run of other
    characters is treated as whitespace; whitespace runs collapse to one
    SPACE. Spaces touching a line break and empty lines are removed.
    """
    ids = VOCAB.encode(canonicalize(text))
    if ids.size == 0:
        raise EmptyCorpusError("preprocessing produced an empty corpus")
    return ids


def sentences(s) -> list[np.ndarray]:
    """Split into maximal EOS-terminated runs (a trailing unterminated run counts)."""
    s = check_symbols(s)
    ends = np.flatnonzero(s == EOS) + 1
    bounds = np.concatenate(([0], ends, [s.size] if (not ends.size or ends[-1] != s.size) else []))
    bounds = bounds.astype(int)
    return [s[a:b] for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def join(parts: Sequence[np.ndarray]) -> np.ndarray:
    if not parts:
        return np.zeros(0, dtype=np.uint8)
    return np.concatenate(parts).astype(np.uint8)


@dataclass
class CorpusSplit:
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    fractions: tuple[float, float, float]


def split_corpus(s, fractions=(0.98, 0.01, 0.01)) -> CorpusSplit:
    """Contiguous train/valid/test split at the EOS boundaries nearest the
    requested character fractions; every part keeps at least one sentence."""
    s = check_symbols(s)
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or min(fr) <= 0 or abs(sum(fr) - 1.0) > 1e-9:
        raise CorpusError(f"fractions must be three positive numbers summing to 1, got {fractions}")
    sents = sentences(s)
    if len(sents) < 3:
        raise CorpusError(f"need at least 3 sentences to split, got {len(sents)}")
    ends = np.cumsum([len(x) for x in sents])
    cuts = []
    lo = 1
    for k, target in enumerate((fr[0] * s.size, (fr[0] + fr[1]) * s.size)):
        hi = len(sents) - (2 - k)
        j = int(np.argmin(np.abs(ends[lo - 1 : hi] - target))) + lo
        cuts.append(j)
        lo = j + 1
    a, b = cuts
    return CorpusSplit(join(sents[:a]), join(sents[a:b]), join(sents[b:]), fr)


def contains_word(sentence: np.ndarray, words: frozenset[str]) -> bool:
    text = VOCAB.decode(sentence)
    return any(tok in words for tok in re.split(r"[ \n'.]+", text) if tok)


@dataclass
class PrivatePartition:
    public_sentences: np.ndarray
    private_sentences: np.ndarray
    word_list: frozenset[str] = field(default_factory=frozenset)


def _check_words(word_list) -> frozenset[str]:
    words = frozenset(word_list)
    if not words:
        raise CorpusError("word list must not be empty")
    for w in words:
        if not re.fullmatch(r"[A-Z]+", w):
            raise CorpusError(f"word {w!r} is not an uppercase A-Z word")
    return words


def partition_private(s, word_list=DEFAULT_PRIVATE_WORDS) -> PrivatePartition:
    words = _check_words(word_list)
    public, private = [], []
    for sent in sentences(s):
        (private if contains_word(sent, words) else public).append(sent)
    return PrivatePartition(join(public), join(private), words)


def shard(s, n: int, seed: int = 0) -> list[np.ndarray]:
    """Seeded shuffle of sentence order, then round-robin into ``n`` shards."""
    if n < 1:
        raise CorpusError(f"shard count must be >= 1, got {n}")
    sents = sentences(s)
    if n > len(sents):
        raise CorpusError(f"cannot make {n} shards from {len(sents)} sentences")
    order = np.random.default_rng(seed).permutation(len(sents))
    return [join([sents[k] for k in order[j::n]]) for j in range(n)]


def write_corpus(path: str | Path, s) -> None:
    Path(path).write_bytes(VOCAB.decode(s).encode("ascii"))


def read_corpus(path: str | Path) -> np.ndarray:
    """Read a canonical corpus file written by :func:`write_corpus`."""
    data = Path(path).read_bytes().decode("ascii")
    return VOCAB.encode(data)


def write_metadata(path: str | Path, items: dict) -> None:
    lines = []
    for k, v in items.items():
        if isinstance(v, (set, frozenset, list, tuple)):
            v = ",".join(sorted(map(str, v))) if isinstance(v, (set, frozenset)) else ",".join(map(str, v))
        lines.append(f"{k}={v}")
    Path(path).write_text("\n".join(lines) + "\n")


def read_metadata(path: str | Path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            k, _, v = line.partition("=")
            out[k.strip()] = v.strip()
    return out


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
