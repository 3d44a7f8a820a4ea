from app.data.corpus import STYLES, StemSession, ToyCorpus, generate_toy_corpus
from app.data.manifest import ManifestEntry, assign_splits, read_manifest, write_manifest
from app.data.rolls import RollChunk, build_roll_chunks
from app.data.triplets import Triplet, build_triplets, load_separated_session

__all__ = [
    "STYLES",
    "ManifestEntry",
    "RollChunk",
    "StemSession",
    "ToyCorpus",
    "Triplet",
    "assign_splits",
    "build_roll_chunks",
    "build_triplets",
    "generate_toy_corpus",
    "load_separated_session",
    "read_manifest",
    "write_manifest",
]
