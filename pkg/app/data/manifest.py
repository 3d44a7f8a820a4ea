"""
JSON-lines manifest over tensor files.

    <root>/manifest.jsonl     one record per Triplet / RollChunk
    <root>/tensors/*.stwd     tensors in the shared STWD container
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Union

import numpy as np

from app import tensorio
from app.audio.dsp import MelSpec, StftConfig
from app.data.rolls import RollChunk
from app.data.triplets import Triplet
from app.errors import CheckpointError, ManifestError
from app.instruct.templates import EditInstruction
from app.symbolic.types import Instrument, PianoRoll

MANIFEST_NAME = "manifest.jsonl"
TENSOR_DIR = "tensors"
SPLITS = ("train", "test")

Item = Union[Triplet, RollChunk]


@dataclass(frozen=True)
class ManifestEntry:
    item: Item
    split: str
    record: Dict

    @property
    def kind(self) -> str:
        return self.record["kind"]


def assign_splits(session_ids: Iterable[str], test_fraction: float = 0.25, seed: int = 0) -> Dict[str, str]:
    """Split by session so no session lands on both sides."""
    ids = sorted(set(session_ids))
    order = np.random.default_rng(seed).permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    if len(ids) > 1:
        n_test = min(max(n_test, 1 if test_fraction > 0 else 0), len(ids) - 1)
    test = {ids[i] for i in order[:n_test]}
    return {sid: ("test" if sid in test else "train") for sid in ids}


def check_split_hygiene(records: Iterable[Mapping]) -> None:
    seen: Dict[str, str] = {}
    for rec in records:
        sid, split = rec["session_id"], rec["split"]
        if seen.setdefault(sid, split) != split:
            raise ManifestError(f"session '{sid}' appears in both '{seen[sid]}' and '{split}' splits")


def _tensor_name(item: Item) -> str:
    if isinstance(item, Triplet):
        return f"{item.session_id}_triplet_{item.subtracted_stem_name}_{item.chunk_index:03d}.stwd"
    return f"{item.session_id}_roll_{item.target_instrument.stem_name}_{item.chunk_index:03d}.stwd"


def _record(item: Item, split: str, rel_path: str) -> Dict:
    if isinstance(item, Triplet):
        return {
            "kind": "triplet",
            "paths": {"tensors": rel_path},
            "instruction": item.instruction.text,
            "instruction_source": item.instruction.source,
            "tags": list(item.tags),
            "split": split,
            "session_id": item.session_id,
            "chunk_index": item.chunk_index,
            "target": item.subtracted_stem_name,
            "label": item.label,
        }
    return {
        "kind": "roll",
        "paths": {"tensors": rel_path},
        "instruction": None,
        "tags": list(item.tags),
        "split": split,
        "session_id": item.session_id,
        "chunk_index": item.chunk_index,
        "target": item.target_instrument.stem_name,
        "label": item.label,
    }


def write_manifest(items: Sequence[Item], root: str | Path, splits: Mapping[str, str]) -> Path:
    """Serialize items and write the manifest in one pass (single writer)."""
    root = Path(root)
    (root / TENSOR_DIR).mkdir(parents=True, exist_ok=True)
    records = []
    for item in items:
        split = splits.get(item.session_id)
        if split not in SPLITS:
            raise ManifestError(f"no train/test split assigned to session '{item.session_id}'")
        rel = f"{TENSOR_DIR}/{_tensor_name(item)}"
        if isinstance(item, Triplet):
            tensorio.save(root / rel, {"full": item.full.values, "partial": item.partial.values},
                          {"kind": "triplet", "stft": item.full.config.model_dump()})
        else:
            tensorio.save(root / rel, {"roll": item.roll.data},
                          {"kind": "roll", "steps_per_bar": item.roll.steps_per_bar,
                           "pitch_base": item.roll.pitch_base})
        records.append(_record(item, split, rel))

    check_split_hygiene(records)
    path = root / MANIFEST_NAME
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, sort_keys=True) + "\n")
    print(f"[Dataset] wrote {len(records)} records to {path}")
    return path


def _load_item(rec: Dict, root: Path, line: int) -> Item:
    path = root / rec["paths"]["tensors"]
    if not path.exists():
        raise ManifestError(f"referenced tensor file is missing: {path}", line)
    try:
        tensors, meta = tensorio.load(path)
    except CheckpointError as exc:
        raise ManifestError(str(exc), line) from exc

    if rec["kind"] == "triplet":
        cfg = StftConfig(**meta["stft"])
        instruction = EditInstruction(rec["instruction"], rec["target"], tuple(rec["tags"]),
                                      rec.get("instruction_source", "template"))
        return Triplet(MelSpec(tensors["full"], cfg), MelSpec(tensors["partial"], cfg), instruction,
                       rec["target"], rec["session_id"], rec["chunk_index"], tuple(rec["tags"]), rec.get("label"))
    roll = PianoRoll(tensors["roll"].astype(np.uint8), meta["steps_per_bar"], meta["pitch_base"])
    return RollChunk(roll, Instrument.parse(rec["target"]), tuple(rec["tags"]), rec["session_id"],
                     rec["chunk_index"], rec.get("label"))


_REQUIRED = ("kind", "paths", "tags", "split", "session_id", "chunk_index", "target")


def read_manifest(root: str | Path) -> List[ManifestEntry]:
    root = Path(root)
    path = root / MANIFEST_NAME
    if not path.exists():
        raise ManifestError(f"no {MANIFEST_NAME} under {root}; run `make-corpus` first")
    entries: List[ManifestEntry] = []
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"malformed JSON ({exc.msg})", line_no) from exc
            if not isinstance(rec, dict) or any(k not in rec for k in _REQUIRED):
                raise ManifestError(f"record must be an object with fields {', '.join(_REQUIRED)}", line_no)
            if rec["kind"] not in ("triplet", "roll"):
                raise ManifestError(f"unknown record kind '{rec['kind']}'", line_no)
            if rec["split"] not in SPLITS:
                raise ManifestError(f"unknown split '{rec['split']}'", line_no)
            try:
                item = _load_item(rec, root, line_no)
            except ManifestError:
                raise
            except (KeyError, TypeError, ValueError) as exc:
                raise ManifestError(f"invalid record: {exc}", line_no) from exc
            entries.append(ManifestEntry(item, rec["split"], rec))
    check_split_hygiene(e.record for e in entries)
    return entries


def select(entries: Iterable[ManifestEntry], kind: str, split: str | None = None,
           target: str | None = None) -> List[Item]:
    return [
        e.item for e in entries
        if e.kind == kind and (split is None or e.split == split) and (target is None or e.record["target"] == target)
    ]
