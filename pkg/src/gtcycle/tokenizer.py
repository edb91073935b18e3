"""Whitespace-piece vocabulary and the token-id codec.

The vocabulary is word-level: pieces are whitespace-delimited, ranked by
corpus frequency with lexicographic tie-breaking, and truncated to a budget.
Four control ids are pinned (PAD=0, BOS=1, EOS=2, UNK=3) and the five
structural markers (three field markers plus the two task surfaces) are
always present as single atomic pieces, so "generate text:" encodes to one
id even though it contains a space.
"""

from __future__ import annotations

import hashlib
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

from .graph_codec import DELIMITERS, TASK_TOKENS

PAD_ID, BOS_ID, EOS_ID, UNK_ID = 0, 1, 2, 3
PAD_PIECE, BOS_PIECE, EOS_PIECE, UNK_PIECE = "<pad>", "<bos>", "<eos>", "<unk>"
CONTROL_PIECES = (PAD_PIECE, BOS_PIECE, EOS_PIECE, UNK_PIECE)

ATOMIC_MARKERS = DELIMITERS + tuple(t.surface for t in TASK_TOKENS)
RESERVED_PIECES = CONTROL_PIECES + ATOMIC_MARKERS

# Markers containing spaces must be recognised before whitespace splitting.
_MULTIWORD_MARKERS = tuple(m for m in ATOMIC_MARKERS if " " in m)


class TokenizerError(ValueError):
    """A vocabulary or token sequence violates its contract."""


def split_pieces(text: str) -> list[str]:
    """Split text into pieces, keeping multi-word markers atomic.

    A multi-word marker only counts when it sits on a whitespace boundary;
    everything else splits on runs of whitespace.
    """
    pieces: list[str] = []
    i, n = 0, len(text)
    while i < n:
        if text[i].isspace():
            i += 1
            continue
        for marker in _MULTIWORD_MARKERS:
            end = i + len(marker)
            if text.startswith(marker, i) and (end == n or text[end].isspace()):
                pieces.append(marker)
                i = end
                break
        else:
            j = i
            while j < n and not text[j].isspace():
                j += 1
            pieces.append(text[i:j])
            i = j
    return pieces


@dataclass(frozen=True)
class TokenSequence:
    """An id sequence: PAD only as a trailing run, EOS at most once and only
    as the last non-PAD element."""

    ids: tuple[int, ...]

    def __post_init__(self) -> None:
        ids = tuple(int(i) for i in self.ids)
        object.__setattr__(self, "ids", ids)
        if any(i < 0 for i in ids):
            raise TokenizerError("negative token id")
        core_len = len(ids)
        while core_len and ids[core_len - 1] == PAD_ID:
            core_len -= 1
        core = ids[:core_len]
        if PAD_ID in core:
            raise TokenizerError("PAD before non-PAD")
        if EOS_ID in core[:-1]:
            raise TokenizerError("EOS before the final non-PAD position")

    def __len__(self) -> int:
        return len(self.ids)

    def __iter__(self):
        return iter(self.ids)


@dataclass
class Vocabulary:
    """Immutable piece table; id equals the piece's position."""

    id_to_piece: tuple[str, ...]
    piece_to_id: dict[str, int] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self.id_to_piece = tuple(self.id_to_piece)
        self.piece_to_id = {p: i for i, p in enumerate(self.id_to_piece)}
        if len(self.piece_to_id) != len(self.id_to_piece):
            raise TokenizerError("duplicate piece in vocabulary")
        if self.id_to_piece[: len(CONTROL_PIECES)] != CONTROL_PIECES:
            raise TokenizerError("control pieces must occupy ids 0..3")
        for marker in ATOMIC_MARKERS:
            if marker not in self.piece_to_id:
                raise TokenizerError(f"atomic marker {marker!r} missing from vocabulary")
        if len(self.id_to_piece) < 8:
            raise TokenizerError("vocabulary too small")

    def __len__(self) -> int:
        return len(self.id_to_piece)

    def serialize(self) -> str:
        return "\n".join(self.id_to_piece) + "\n"

    def sha256(self) -> str:
        return hashlib.sha256(self.serialize().encode("utf-8")).hexdigest()

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.serialize(), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tuple(lines))


def build_vocab(corpus: Iterable[str], max_size: int) -> Vocabulary:
    """Build a frequency-ranked vocabulary over whitespace pieces.

    ``max_size`` budgets the corpus-derived pieces; the 9 reserved entries
    (4 control ids + 5 atomic markers) always sit on top of that budget.
    Ranking is by descending frequency, ties broken lexicographically, so the
    result is deterministic for identical input.
    """
    corpus = list(corpus)
    if not corpus:
        raise TokenizerError("cannot build a vocabulary from an empty corpus")
    if max_size < 8:
        raise TokenizerError("max_size must be at least 8")
    counts: Counter[str] = Counter()
    for line in corpus:
        counts.update(split_pieces(line))
    reserved = set(RESERVED_PIECES)
    ranked = sorted(
        (p for p in counts if p not in reserved),
        key=lambda p: (-counts[p], p),
    )
    return Vocabulary(RESERVED_PIECES + tuple(ranked[:max_size]))


def encode(vocab: Vocabulary, text: str, max_len: int) -> TokenSequence:
    """Map text to ids, append EOS, truncate to ``max_len`` keeping EOS final.

    Out-of-vocabulary pieces become UNK; literal control surfaces typed into
    the text (e.g. "<eos>") also become UNK so they cannot forge structure.
    """
    if max_len < 2:
        raise TokenizerError("max_len must be at least 2")
    ids = [
        UNK_ID if p in CONTROL_PIECES else vocab.piece_to_id.get(p, UNK_ID)
        for p in split_pieces(text)
    ]
    ids.append(EOS_ID)
    if len(ids) > max_len:
        ids = ids[:max_len]
        ids[-1] = EOS_ID
    return TokenSequence(tuple(ids))


def decode(vocab: Vocabulary, seq: TokenSequence | Sequence[int]) -> str:
    """Join pieces with single spaces, stripping PAD/BOS/EOS.

    Accepts a raw id sequence too, in which case the TokenSequence invariants
    (no interleaved PAD, EOS final) are enforced before decoding.
    """
    if not isinstance(seq, TokenSequence):
        seq = TokenSequence(tuple(seq))
    size = len(vocab)
    for i in seq.ids:
        if i >= size:
            raise TokenizerError(f"token id {i} out of range for vocabulary of {size}")
    pieces = [
        vocab.id_to_piece[i]
        for i in seq.ids
        if i not in (PAD_ID, BOS_ID, EOS_ID)
    ]
    return " ".join(pieces)
