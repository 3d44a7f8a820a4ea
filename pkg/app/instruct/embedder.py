"""Hashed bag-of-words instruction embedder (trainable, lives inside the denoiser)."""
from __future__ import annotations

import hashlib
import re
import string
from dataclasses import dataclass
from typing import List, Sequence

import numpy as np
import torch
from torch import nn

from app.instruct.templates import EditInstruction

VOCAB_BUCKETS = 1024
EMBED_DIM = 64

_PUNCT = re.compile(f"[{re.escape(string.punctuation)}]")


def tokenize(text: str) -> List[str]:
    return _PUNCT.sub("", text.lower()).split()


def bucket(token: str, vocab_size: int = VOCAB_BUCKETS) -> int:
    return int(hashlib.md5(token.encode("utf-8")).hexdigest(), 16) % vocab_size


@dataclass(frozen=True, eq=False)
class InstructionEmbedding:
    vector: np.ndarray

    @property
    def is_null(self) -> bool:
        return not np.any(self.vector)


class InstructionEmbedder(nn.Module):
    """Mean of per-bucket rows; an instruction with no tokens embeds to zero."""

    def __init__(self, vocab_size: int = VOCAB_BUCKETS, dim: int = EMBED_DIM) -> None:
        super().__init__()
        self.vocab_size = vocab_size
        self.dim = dim
        # rows ~ N(0, 1) so no non-empty text collapses onto the null vector
        self.table = nn.EmbeddingBag(vocab_size, dim, mode="mean")

    def forward(self, texts: Sequence[str]) -> torch.Tensor:
        ids: List[int] = []
        offsets: List[int] = []
        for text in texts:
            offsets.append(len(ids))
            ids.extend(bucket(tok, self.vocab_size) for tok in tokenize(text))
        device = self.table.weight.device
        return self.table(
            torch.tensor(ids, dtype=torch.long, device=device),
            torch.tensor(offsets, dtype=torch.long, device=device),
        )


def embed_instruction(instr: EditInstruction | str, embedder: InstructionEmbedder) -> InstructionEmbedding:
    text = instr.text if isinstance(instr, EditInstruction) else instr
    with torch.no_grad():
        vec = embedder([text])[0].detach().cpu().numpy().astype(np.float32)
    return InstructionEmbedding(vec)
