"""Desk-scale tokenizers that respect whitespace boundaries.

Two kinds are provided: character-level and a trainable byte-pair tokenizer.
Both encode word by word, so no token ever spans a word boundary. Word
boundaries are carried in-band by the marker character ``Ġ`` (U+0120), in one
of two styles:

* ``space_marker=True`` (GPT-2 style): the marker is prepended to every
  non-initial word before encoding and fuses into the word's first piece
  ("Ġqui"). Every token then belongs to a word.
* ``space_marker=False``: the marker stays a standalone separator token
  between word groups. Separator tokens are whitespace carriers and belong to
  no word span. Character tokenizers always use this style.

Either way ``detokenize`` is exact on whitespace-normalized text: concatenate
the token strings and turn markers back into spaces.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from collections import Counter

import numpy as np

MARKER = "Ġ"  # word-boundary marker, "Ġ"
UNKNOWN_TOKEN = "<unk>"

TOKENIZER_MAGIC = "FUSETOK"
TOKENIZER_VERSION = "v1"


def normalize(s: str) -> str:
    """Collapse all whitespace runs to single spaces and strip the ends."""
    return " ".join(s.split())


@dataclass(frozen=True)
class TokenizerSpec:
    """Immutable tokenizer: vocabulary, merge rules, and boundary style."""

    kind: str  # "char" or "bpe"
    vocab: tuple[str, ...]
    merges: tuple[tuple[str, str], ...] = ()
    space_marker: bool = False
    _ids: dict = field(default=None, repr=False, compare=False)
    _ranks: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.kind not in ("char", "bpe"):
            raise ValueError(f"unknown tokenizer kind {self.kind!r}")
        if self.kind == "char" and self.space_marker:
            raise ValueError("char tokenizers use standalone separators only")
        if len(set(self.vocab)) != len(self.vocab):
            raise ValueError("vocabulary tokens must be unique")
        if UNKNOWN_TOKEN not in self.vocab:
            raise ValueError(f"vocabulary must contain {UNKNOWN_TOKEN!r}")
        if MARKER not in self.vocab:
            raise ValueError("vocabulary must contain the boundary marker")
        for tok in self.vocab:
            if tok != UNKNOWN_TOKEN and any(ch.isspace() for ch in tok):
                raise ValueError(f"token {tok!r} contains whitespace")
        object.__setattr__(self, "_ids", {t: i for i, t in enumerate(self.vocab)})
        object.__setattr__(self, "_ranks", {p: r for r, p in enumerate(self.merges)})

    @property
    def size(self) -> int:
        return len(self.vocab)

    @property
    def unknown_id(self) -> int:
        return self._ids[UNKNOWN_TOKEN]

    @property
    def marker_id(self) -> int:
        return self._ids[MARKER]

    def token_id(self, piece: str) -> int:
        return self._ids.get(piece, self.unknown_id)


@dataclass(frozen=True)
class TokenSeq:
    """Token ids together with the string they came from."""

    ids: tuple[int, ...]
    source: str

    def __len__(self) -> int:
        return len(self.ids)


@dataclass(frozen=True)
class WordSegmentation:
    """Alignment from token positions to whitespace-separated words.

    ``spans`` are (start, length) token ranges, one per word, in order.
    Standalone separator tokens sit between spans and belong to none. Fused
    marker pieces ("Ġqui") are part of their word's span.
    """

    spans: tuple[tuple[int, int], ...]
    words: tuple[str, ...]
    token_count: int

    def __len__(self) -> int:
        return len(self.spans)


def _encode_pieces(spec: TokenizerSpec, word: str) -> list[str]:
    """Split one word (possibly marker-prefixed) into token strings."""
    if spec.kind == "char":
        return list(word)
    pieces = list(word)
    ranks = spec._ranks
    while len(pieces) > 1:
        best_rank = None
        for a, b in zip(pieces, pieces[1:]):
            r = ranks.get((a, b))
            if r is not None and (best_rank is None or r < best_rank):
                best_rank = r
        if best_rank is None:
            break
        left, right = spec.merges[best_rank]
        merged: list[str] = []
        i = 0
        while i < len(pieces):
            if i + 1 < len(pieces) and pieces[i] == left and pieces[i + 1] == right:
                merged.append(left + right)
                i += 2
            else:
                merged.append(pieces[i])
                i += 1
        pieces = merged
    return pieces


def tokenize(spec: TokenizerSpec, s: str) -> TokenSeq:
    """Deterministically encode a string; unknown symbols map to the unknown id."""
    ids: list[int] = []
    for n, word in enumerate(normalize(s).split(" ") if s.strip() else []):
        if n > 0:
            if spec.space_marker:
                word = MARKER + word
            else:
                ids.append(spec.marker_id)
        ids.extend(spec.token_id(p) for p in _encode_pieces(spec, word))
    return TokenSeq(ids=tuple(ids), source=s)


def detokenize(spec: TokenizerSpec, ids) -> str:
    """Concatenate token strings and restore markers to spaces."""
    pieces = []
    for i in ids:
        if not 0 <= i < spec.size:
            raise ValueError(f"token id {i} out of range for |V|={spec.size}")
        pieces.append(spec.vocab[i])
    return "".join(pieces).replace(MARKER, " ")


def is_lossless(spec: TokenizerSpec, ts: TokenSeq) -> bool:
    """True when the sequence reproduces its (normalized) source exactly."""
    return normalize(detokenize(spec, ts.ids)) == normalize(ts.source)


def segment_words(spec: TokenizerSpec, ts: TokenSeq) -> WordSegmentation:
    """Group token positions into whitespace-separated words.

    Requires a lossless sequence; raises otherwise. A segment opens at
    position 0 and at every marker-bearing token; leading standalone markers
    are trimmed off their segment (they carry only whitespace), and segments
    with nothing left contribute no word.
    """
    if not is_lossless(spec, ts):
        raise ValueError("token sequence does not round-trip to its source")
    toks = [spec.vocab[i] for i in ts.ids]
    starts = [k for k, t in enumerate(toks) if k == 0 or t.startswith(MARKER)]
    spans: list[tuple[int, int]] = []
    words: list[str] = []
    for seg_idx, start in enumerate(starts):
        end = starts[seg_idx + 1] if seg_idx + 1 < len(starts) else len(toks)
        while start < end and toks[start] == MARKER:
            start += 1
        if start == end:
            continue
        spans.append((start, end - start))
        words.append("".join(toks[start:end]).replace(MARKER, ""))
    return WordSegmentation(spans=tuple(spans), words=tuple(words), token_count=len(toks))


def one_hot(ts, vocab_size: int) -> np.ndarray:
    """One-hot encode a TokenSeq (or id sequence) as an s x |V| matrix."""
    ids = list(ts.ids if isinstance(ts, TokenSeq) else ts)
    out = np.zeros((len(ids), vocab_size))
    for row, i in enumerate(ids):
        if not 0 <= i < vocab_size:
            raise ValueError(f"token id {i} out of range for |V|={vocab_size}")
        out[row, i] = 1.0
    return out


def _word_forms(words: list[str], space_marker: bool) -> Counter:
    """Training forms: each word, plus its marked form when markers fuse."""
    forms = Counter(words)
    if space_marker:
        forms.update(MARKER + w for w in words)
    return forms


def train_bpe(corpus: str, target_vocab_size: int, space_marker: bool = False) -> TokenizerSpec:
    """Train byte-pair merges on a corpus, never crossing whitespace.

    Deterministic: the most frequent adjacent pair merges first, ties broken
    by the lexicographically smaller pair. Training stops early if no pair
    repeats. With ``space_marker`` every word also contributes its
    marker-prefixed form so in-sentence and isolated tokenizations stay
    parallel.
    """
    words = normalize(corpus).split(" ") if corpus.strip() else []
    if not words:
        raise ValueError("corpus is empty")
    freqs = _word_forms(words, space_marker)
    alphabet = sorted({ch for w in freqs for ch in w} - {MARKER})
    base = [UNKNOWN_TOKEN, MARKER] + alphabet
    if target_vocab_size < len(base):
        raise ValueError(
            f"target vocab size {target_vocab_size} below alphabet size {len(base)}"
        )
    pieces = {w: tuple(w) for w in freqs}
    vocab = list(base)
    merges: list[tuple[str, str]] = []
    for _ in range(target_vocab_size - len(base)):
        counts: Counter = Counter()
        for w, ps in pieces.items():
            f = freqs[w]
            for pair in zip(ps, ps[1:]):
                counts[pair] += f
        if not counts:
            break
        best = min(counts, key=lambda p: (-counts[p], p))
        merges.append(best)
        vocab.append(best[0] + best[1])
        left, right = best
        new_pieces = {}
        for w, ps in pieces.items():
            out: list[str] = []
            i = 0
            while i < len(ps):
                if i + 1 < len(ps) and ps[i] == left and ps[i + 1] == right:
                    out.append(left + right)
                    i += 2
                else:
                    out.append(ps[i])
                    i += 1
            new_pieces[w] = tuple(out)
        pieces = new_pieces
    return TokenizerSpec(
        kind="bpe", vocab=tuple(vocab), merges=tuple(merges), space_marker=space_marker
    )


def char_tokenizer(corpus: str) -> TokenizerSpec:
    """Character-level tokenizer over the corpus alphabet."""
    words = normalize(corpus).split(" ") if corpus.strip() else []
    if not words:
        raise ValueError("corpus is empty")
    alphabet = sorted({ch for w in words for ch in w})
    return TokenizerSpec(kind="char", vocab=tuple([UNKNOWN_TOKEN, MARKER] + alphabet))


def _escape(s: str) -> str:
    return s.encode("unicode_escape").decode("ascii")


def _unescape(s: str) -> str:
    return s.encode("ascii").decode("unicode_escape")


def write_tokenizer(spec: TokenizerSpec, path) -> None:
    """Text format: header line, one escaped token per line, blank, merge pairs."""
    lines = [f"{TOKENIZER_MAGIC} {TOKENIZER_VERSION} {spec.kind}"
             + (" marked" if spec.space_marker else "")]
    lines.extend(_escape(t) for t in spec.vocab)
    lines.append("")
    lines.extend(f"{_escape(a)} {_escape(b)}" for a, b in spec.merges)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def read_tokenizer(path) -> TokenizerSpec:
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().split("\n")
    header = lines[0].split(" ")
    if len(header) < 3 or header[0] != TOKENIZER_MAGIC:
        raise ValueError(f"{path}: not a tokenizer file")
    if header[1] != TOKENIZER_VERSION:
        raise ValueError(f"{path}: unsupported tokenizer version {header[1]}")
    kind = header[2]
    marked = "marked" in header[3:]
    vocab: list[str] = []
    i = 1
    while i < len(lines) and lines[i] != "":
        vocab.append(_unescape(lines[i]))
        i += 1
    merges: list[tuple[str, str]] = []
    for line in lines[i + 1:]:
        if not line:
            continue
        a, b = line.split(" ")
        merges.append((_unescape(a), _unescape(b)))
    return TokenizerSpec(
        kind=kind, vocab=tuple(vocab), merges=tuple(merges), space_marker=marked
    )
