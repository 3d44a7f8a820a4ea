"""Edit instructions: the text y that tells the model which stem to put back."""
from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Tuple

from app.errors import InstructionError

ACTION_WORDS = ("add", "insert")
SOURCES = ("template", "llm", "fallback")

# picked by seed modulo length; keep the order stable, tests depend on it
TEMPLATES = (
    "Insert {style} {stem} into the mix",
    "Add {style}-style {stem}",
    "Add some {style} {stem}",
    "Insert a {style} {stem} part",
)
PLAIN_TEMPLATES = (
    "Add {stem}",
    "Insert {stem}",
)

# genre words recognised as a style when scanning tags
KNOWN_STYLES = (
    "rock", "jazz", "reggae", "edm", "funk", "blues", "pop", "metal",
    "hiphop", "latin", "country", "disco", "soul", "punk",
)

CAPTION_WORDS = 5


def _first_word(text: str) -> str:
    words = text.strip().split()
    return re.sub(r"[^\w]", "", words[0]).lower() if words else ""


@dataclass(frozen=True)
class EditInstruction:
    text: str
    target_stem: str
    style_tags: Tuple[str, ...] = ()
    # "fallback" marks an LLM record replaced by a template after validation failed
    source: str = "template"

    def __post_init__(self) -> None:
        object.__setattr__(self, "style_tags", tuple(self.style_tags))
        if not self.text.strip():
            raise InstructionError("instruction text is empty")
        if _first_word(self.text) not in ACTION_WORDS:
            raise InstructionError(
                f"instruction must start with one of {ACTION_WORDS}: {self.text!r}"
            )
        if not self.target_stem:
            raise InstructionError("instruction has no target stem")
        if self.source not in SOURCES:
            raise InstructionError(f"unknown instruction source '{self.source}'")

    @property
    def is_fallback(self) -> bool:
        return self.source == "fallback"


def pick_style(tags: Iterable[str]) -> Optional[str]:
    tags = [t.strip().lower() for t in tags if t and t.strip()]
    for tag in tags:
        if tag in KNOWN_STYLES:
            return tag
    return tags[0] if tags else None


def template_instruction(target_stem: str, tags: Sequence[str] = (), seed: int = 0,
                         source: str = "template") -> EditInstruction:
    if not target_stem:
        raise InstructionError("template_instruction needs a target stem")
    style = pick_style(tags)
    if style is None:
        text = PLAIN_TEMPLATES[seed % len(PLAIN_TEMPLATES)].format(stem=target_stem)
    else:
        text = TEMPLATES[seed % len(TEMPLATES)].format(style=style, stem=target_stem)
    return EditInstruction(text, target_stem, tuple(tags), source)


def short_caption(instr: EditInstruction | str) -> str:
    """First five whitespace tokens; the caption handed to the SDEdit baseline."""
    text = instr.text if isinstance(instr, EditInstruction) else instr
    return " ".join(text.split()[:CAPTION_WORDS])
