"""Tokenization, overlap splitting, and encoder-window decoration.

A document is an ordered token-id sequence. Splitting produces chunks of
``chunk_size`` content tokens whose consecutive starts advance by
``chunk_size - overlap // 2``, so each chunk shares ``overlap // 2``
tokens with each neighbour and no token lands in more than two chunks.
Special tokens are added only afterwards, when a chunk is decorated into
a fixed-width encoder window.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

PAD_ID = 0
CLS_ID = 1
SEP_ID = 2
UNK_ID = 3
RESERVED_TOKENS = ("<pad>", "<cls>", "<sep>", "<unk>")
# Structural ids that must never appear inside document content. UNK may:
# it is the sanctioned image of out-of-vocabulary words.
STRUCTURAL_IDS = (PAD_ID, CLS_ID, SEP_ID)


class ChunkingError(ValueError):
    """Invalid chunking parameters or malformed inputs."""


@dataclass
class Vocabulary:
    """Token-string to token-id map with reserved ids on 0..3."""

    tokens: list[str]
    index: dict[str, int] = field(repr=False, default_factory=dict)

    def __post_init__(self):
        if len(self.tokens) < len(RESERVED_TOKENS):
            raise ChunkingError("vocabulary must include the four reserved tokens")
        if tuple(self.tokens[:4]) != RESERVED_TOKENS:
            raise ChunkingError(
                f"vocabulary lines 0-3 must be {RESERVED_TOKENS}, got {self.tokens[:4]}")
        if not self.index:
            # Structural tokens are excluded from lookup so no text can
            # tokenize to PAD/CLS/SEP; a literal "<unk>" simply maps to UNK.
            self.index = {tok: i for i, tok in enumerate(self.tokens)
                          if i not in STRUCTURAL_IDS}

    def __len__(self) -> int:
        return len(self.tokens)

    def id_of(self, token: str) -> int:
        return self.index.get(token, UNK_ID)

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.tokens) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(tokens=lines)

    @classmethod
    def from_words(cls, words) -> "Vocabulary":
        """Vocabulary over the given content words, reserved ids prepended."""
        seen = dict.fromkeys(words)
        for r in RESERVED_TOKENS:
            seen.pop(r, None)
        return cls(tokens=list(RESERVED_TOKENS) + list(seen))


@dataclass
class TokenizedDocument:
    """A labeled document as an ordered token-id sequence."""

    doc_id: str
    tokens: np.ndarray
    label: int | None = None

    def __post_init__(self):
        self.tokens = np.asarray(self.tokens, dtype=np.int64)
        if self.tokens.ndim != 1 or self.tokens.size < 1:
            raise ChunkingError(f"document {self.doc_id!r} must hold at least one token")
        if np.isin(self.tokens, STRUCTURAL_IDS).any():
            raise ChunkingError(
                f"document {self.doc_id!r} contains structural special ids")
        if self.label is not None and self.label not in (0, 1):
            raise ChunkingError(f"label must be 0 or 1, got {self.label!r}")

    @property
    def length(self) -> int:
        return int(self.tokens.size)


@dataclass
class ChunkSet:
    """Overlapped segmentation of one document.

    ``starts`` are 1-based token positions, matching the way chunk layouts
    are usually drawn; ``chunks[i]`` covers tokens
    ``starts[i] .. starts[i] + len(chunks[i]) - 1`` of the source sequence.
    """

    chunk_size: int
    overlap: int
    starts: list[int]
    chunks: list[np.ndarray]

    def __len__(self) -> int:
        return len(self.chunks)


@dataclass
class EncoderWindow:
    """One fixed-width encoder input: [CLS] content [SEP] PAD...

    ``mask`` is 1 on real positions (CLS/SEP included) and 0 on padding.
    """

    ids: np.ndarray
    mask: np.ndarray

    @property
    def width(self) -> int:
        return int(self.ids.size)


def tokenize(text: str, vocab: Vocabulary, doc_id: str = "doc",
             label: int | None = None) -> TokenizedDocument:
    """Lowercase, whitespace-split, and map through the vocabulary.

    Unknown words map to UNK. Empty (or whitespace-only) text is rejected.
    """
    words = text.lower().split()
    if not words:
        raise ChunkingError("cannot tokenize empty text")
    ids = np.fromiter((vocab.id_of(w) for w in words), dtype=np.int64, count=len(words))
    return TokenizedDocument(doc_id=doc_id, tokens=ids, label=label)


def _validate_chunk_params(k: int, c: int, z: int) -> None:
    if k < 1:
        raise ChunkingError(f"document length must be >= 1, got {k}")
    if c < 2:
        raise ChunkingError(f"chunk size must be >= 2, got {c}")
    if z % 2 != 0:
        raise ChunkingError(
            f"overlap must be even (it is shared half-and-half with each "
            f"neighbour), got {z}")
    if not 0 <= z <= c:
        raise ChunkingError(f"overlap must lie in [0, chunk_size], got z={z}, c={c}")


def chunk_count(k: int, c: int, z: int) -> int:
    """Number of chunks for a k-token document: 1 if it fits, else
    ``ceil((k - c) / (c - z // 2)) + 1``."""
    _validate_chunk_params(k, c, z)
    if k <= c:
        return 1
    stride = c - z // 2
    return -((k - c) // -stride) + 1


def chunk_document(doc: TokenizedDocument, c: int, z: int) -> ChunkSet:
    """Split into overlapping chunks; chunk i starts at ``1 + (i-1) * (c - z//2)``.

    All chunks span ``c`` tokens except the final one, which is the
    left-anchored remainder. Every token lands in at most two chunks and
    adjacent chunks share exactly ``z // 2`` tokens.
    """
    k = doc.length
    n = chunk_count(k, c, z)
    stride = c - z // 2
    starts = [1 + i * stride for i in range(n)]
    chunks = [doc.tokens[s - 1:min(s - 1 + c, k)] for s in starts]
    return ChunkSet(chunk_size=c, overlap=z, starts=starts, chunks=chunks)


def decorate(chunk: np.ndarray, c: int) -> EncoderWindow:
    """Wrap a chunk as ``[CLS] chunk [SEP]`` padded to width ``c + 2``."""
    chunk = np.asarray(chunk, dtype=np.int64)
    m = int(chunk.size)
    if not 1 <= m <= c:
        raise ChunkingError(f"chunk of {m} tokens does not fit chunk size {c}")
    width = c + 2
    ids = np.full(width, PAD_ID, dtype=np.int64)
    ids[0] = CLS_ID
    ids[1:m + 1] = chunk
    ids[m + 1] = SEP_ID
    mask = np.zeros(width, dtype=np.int64)
    mask[:m + 2] = 1
    return EncoderWindow(ids=ids, mask=mask)


def shared_token_counts(cs: ChunkSet) -> list[int]:
    """Tokens shared by each adjacent chunk pair."""
    shares = []
    for i in range(len(cs) - 1):
        end_i = cs.starts[i] + len(cs.chunks[i]) - 1
        shares.append(max(0, end_i - cs.starts[i + 1] + 1))
    return shares
