"""Token vocabulary and prompt assembly for caption modeling.

The text side of the vocabulary is byte-level: ids 0-255 are the raw
UTF-8 bytes, followed by BOS, EOS and PAD.  Haptic token blocks (one per
tokenizer) are appended contiguously after the text ids, so a signal
token keeps its local id within its block and gains a stable global id.

A training prompt places the haptic tokens and the caption in a single
sequence::

    haptic signal: <tok><tok>..., its <category> description is: <caption><EOS>

Only the caption and the closing EOS are scored during training; the
span of those positions is returned alongside the ids.  At inference the
same prompt is assembled without a caption and the model continues it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

__all__ = [
    "BOS",
    "EOS",
    "PAD",
    "TEXT_BASE",
    "CATEGORIES",
    "Vocabulary",
    "PromptSample",
    "assemble",
]

BOS = 256
EOS = 257
PAD = 258
TEXT_BASE = 259  # bytes + the three specials

CATEGORIES = ("sensory", "emotional", "associative")

PROMPT_PREFIX = "haptic signal: "
PROMPT_INFIX = ", its {category} description is: "

_SPECIAL_NAMES = {BOS: "<BOS>", EOS: "<EOS>", PAD: "<PAD>"}
_VOCAB_VERSION = 1


@dataclass
class Vocabulary:
    """Byte-level text vocabulary with appended haptic token blocks."""

    blocks: list[tuple[str, int]] = field(default_factory=list)

    def register_block(self, name: str, size: int) -> int:
        """Append a named haptic block; returns its global start offset."""
        if size < 1:
            raise ValueError("block size must be >= 1")
        if any(n == name for n, _ in self.blocks):
            raise ValueError(f"block {name!r} already registered")
        start = self.size
        self.blocks.append((name, size))
        return start

    @property
    def size(self) -> int:
        return TEXT_BASE + sum(s for _, s in self.blocks)

    def block_start(self, name: str) -> int:
        start = TEXT_BASE
        for n, s in self.blocks:
            if n == name:
                return start
            start += s
        raise KeyError(f"no block named {name!r}")

    def to_global(self, name: str, local_id: int) -> int:
        start = self.block_start(name)
        size = dict(self.blocks)[name]
        if not 0 <= local_id < size:
            raise ValueError(f"local id {local_id} out of range for block {name!r}")
        return start + local_id

    def to_local(self, global_id: int) -> tuple[str, int]:
        """Map a global id to ("text", id) or (block_name, local_id)."""
        if not 0 <= global_id < self.size:
            raise ValueError(f"token id {global_id} out of range [0, {self.size})")
        if global_id < TEXT_BASE:
            return ("text", global_id)
        offset = global_id - TEXT_BASE
        for name, size in self.blocks:
            if offset < size:
                return (name, offset)
            offset -= size
        raise AssertionError("unreachable")

    def is_haptic(self, global_id: int) -> bool:
        return TEXT_BASE <= global_id < self.size

    # ------------------------------------------------------------------
    # text codec
    # ------------------------------------------------------------------
    def encode_text(self, text: str) -> list[int]:
        return list(text.encode("utf-8"))

    def decode_text(self, ids: Sequence[int]) -> str:
        """Render ids as text; specials and haptic tokens become markers."""
        parts: list[str] = []
        pending: list[int] = []

        def flush() -> None:
            if pending:
                parts.append(bytes(pending).decode("utf-8", errors="replace"))
                pending.clear()

        for i in ids:
            kind, local = self.to_local(int(i))
            if kind == "text" and local < 256:
                pending.append(local)
            else:
                flush()
                if kind == "text":
                    parts.append(_SPECIAL_NAMES[local])
                else:
                    parts.append(f"<{kind}:{local}>")
        flush()
        return "".join(parts)

    # ------------------------------------------------------------------
    # persistence: versioned text table, one "id<TAB>class<TAB>symbol"
    # line per token
    # ------------------------------------------------------------------
    def symbol(self, global_id: int) -> str:
        kind, local = self.to_local(global_id)
        if kind == "text":
            if local in _SPECIAL_NAMES:
                return _SPECIAL_NAMES[local]
            if 33 <= local <= 126:  # printable, non-space ASCII
                return chr(local)
            return f"0x{local:02x}"
        return f"<{kind}:{local}>"

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"haptix-vocab\t{_VOCAB_VERSION}\n")
            for gid in range(self.size):
                kind, local = self.to_local(gid)
                cls = kind if kind != "text" else ("special" if local >= 256 else "byte")
                fh.write(f"{gid}\t{cls}\t{self.symbol(gid)}\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().rstrip("\n").split("\t")
            if header[:1] != ["haptix-vocab"] or header[1:] != [str(_VOCAB_VERSION)]:
                raise ValueError(f"not a version-{_VOCAB_VERSION} vocabulary table")
            vocab = cls()
            blocks: list[tuple[str, int]] = []
            expected_id = -1
            for expected_id, line in enumerate(fh):
                parts = line.rstrip("\n").split("\t")
                if len(parts) != 3 or int(parts[0]) != expected_id:
                    raise ValueError(f"malformed vocabulary row {expected_id}")
                kind = parts[1]
                if expected_id < TEXT_BASE:
                    if kind not in ("byte", "special"):
                        raise ValueError("text ids must precede haptic blocks")
                    continue
                if blocks and blocks[-1][0] == kind:
                    blocks[-1] = (kind, blocks[-1][1] + 1)
                else:
                    blocks.append((kind, 1))
        if expected_id + 1 < TEXT_BASE:
            raise ValueError("vocabulary table is truncated")
        for name, size in blocks:
            vocab.register_block(name, size)
        return vocab


@dataclass(frozen=True)
class PromptSample:
    """One training example: haptic tokens plus a caption for a category."""

    haptic_ids: tuple[int, ...]
    category: str
    caption: str

    def __post_init__(self) -> None:
        if self.category not in CATEGORIES:
            raise ValueError(f"unknown category {self.category!r}")
        if not self.haptic_ids:
            raise ValueError("need at least one haptic token")
        if not self.caption.strip():
            raise ValueError("caption must be non-empty")


def assemble(
    vocab: Vocabulary,
    haptic_ids: Sequence[int],
    category: str,
    caption: str | None = None,
    haptic_stride: int = 1,
) -> tuple[list[int], tuple[int, int] | None]:
    """Build a prompt id sequence; returns ``(ids, caption_span)``.

    ``caption_span`` is the half-open index range covering the caption
    bytes plus the closing EOS — the only positions whose prediction is
    scored.  With ``caption=None`` the ids stop right after the prompt
    text and the span is ``None`` (inference mode).  ``haptic_stride``
    keeps every ``stride``-th haptic token to shorten long signals.
    """
    if category not in CATEGORIES:
        raise ValueError(f"unknown category {category!r}")
    if haptic_stride < 1:
        raise ValueError("haptic_stride must be >= 1")
    kept = [int(h) for h in haptic_ids][::haptic_stride]
    if not kept:
        raise ValueError("need at least one haptic token")
    for h in kept:
        if not vocab.is_haptic(h):
            raise ValueError(f"id {h} is not a haptic token")

    ids = vocab.encode_text(PROMPT_PREFIX)
    ids.extend(kept)
    ids.extend(vocab.encode_text(PROMPT_INFIX.format(category=category)))
    if caption is None:
        return ids, None
    if not caption.strip():
        raise ValueError("caption must be non-empty")
    start = len(ids)
    ids.extend(vocab.encode_text(caption))
    ids.append(EOS)
    return ids, (start, len(ids))
