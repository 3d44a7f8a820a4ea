"""
Run configuration: one pydantic tree merged from a JSON/YAML file and
dotted `section.key=value` overrides. Environment defaults live in
app/config.py; this is what a single run actually used.
"""
from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from app import config
from app.audio.dsp import PRESETS, StftConfig
from app.diffusion.binary import RejectionConfig
from app.diffusion.model import ModelConfig
from app.diffusion.sample import SamplerConfig
from app.diffusion.train import TrainConfig
from app.errors import ConfigError

EFFECTIVE_CONFIG_NAME = "effective_config.json"
STEM_NAMES = ("drums", "bass", "guitar")


class CorpusConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    seed: int = 7
    sessions: int = Field(64, ge=1)
    styles: Optional[Tuple[str, ...]] = None
    bars: int = Field(8, ge=1)
    chunk_seconds: float = Field(config.CHUNK_SECONDS, gt=0)
    test_fraction: float = Field(0.25, ge=0.0, lt=1.0)
    targets: Tuple[str, ...] = STEM_NAMES
    roll_bars_per_chunk: int = Field(8, ge=1)
    # frequency bands (Hz) smeared in the partial spectrogram
    blur_bands: Tuple[Tuple[float, float], ...] = ()
    blur_sigma: float = Field(1.5, gt=0)
    use_llm: bool = False

    @field_validator("targets")
    @classmethod
    def _known_targets(cls, v: Tuple[str, ...]) -> Tuple[str, ...]:
        bad = [t for t in v if t not in STEM_NAMES]
        if bad or not v:
            raise ValueError(f"targets must be a non-empty subset of {STEM_NAMES}, got {v}")
        return v


class MetricConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    kld_smoothing: float = Field(1e-6, ge=0.0)
    onset_tolerance: int = Field(1, ge=0)
    embedder_epochs: int = Field(20, ge=1)
    embedder_dir: str = "embedders"


class RunConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    run_dir: str = config.RUNS_DIR
    corpus_dir: str = config.CORPUS_DIR
    stft_preset: str = config.STFT_PRESET
    sample_rate: Optional[int] = None
    model: ModelConfig = ModelConfig()
    train: TrainConfig = TrainConfig()
    sampler: SamplerConfig = SamplerConfig()
    rejection: RejectionConfig = RejectionConfig()
    corpus: CorpusConfig = CorpusConfig()
    metrics: MetricConfig = MetricConfig()

    @field_validator("stft_preset")
    @classmethod
    def _known_preset(cls, v: str) -> str:
        if v not in PRESETS:
            raise ValueError(f"unknown STFT preset '{v}' (available: {', '.join(PRESETS)})")
        return v

    def stft(self) -> StftConfig:
        cfg = StftConfig.preset(self.stft_preset)
        if self.sample_rate is not None and self.sample_rate != cfg.sample_rate:
            cfg = StftConfig(**{**cfg.model_dump(), "sample_rate": self.sample_rate})
        return cfg

    def canonical_json(self) -> str:
        return json.dumps(self.model_dump(mode="json"), sort_keys=True, separators=(",", ":"))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode("utf-8")).hexdigest()

    def write_effective(self, run_dir: str | Path | None = None) -> Path:
        run_dir = Path(run_dir or self.run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        path = run_dir / EFFECTIVE_CONFIG_NAME
        payload = {"config_hash": self.config_hash, **self.model_dump(mode="json")}
        path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return path


def _read_file(path: Path) -> Dict[str, Any]:
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() in (".yaml", ".yml"):
            data = yaml.safe_load(text) or {}
        else:
            data = json.loads(text)
    except (yaml.YAMLError, json.JSONDecodeError) as exc:
        raise ConfigError(f"could not parse {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path} must contain a mapping at the top level")
    return data


def _parse_value(raw: str) -> Any:
    # YAML scalars cover ints, floats, bools, null and [lists]
    try:
        return yaml.safe_load(raw)
    except yaml.YAMLError:
        return raw


def apply_overrides(data: Dict[str, Any], overrides: Mapping[str, Any] | Sequence[str]) -> Dict[str, Any]:
    """Set dotted keys (`train.lr=3e-4` strings or a {"train.lr": 3e-4} mapping)."""
    if not isinstance(overrides, Mapping):
        pairs: List[Tuple[str, Any]] = []
        for item in overrides:
            key, sep, raw = item.partition("=")
            if not sep or not key:
                raise ConfigError(f"override '{item}' must look like section.key=value")
            pairs.append((key.strip(), _parse_value(raw.strip())))
        overrides = dict(pairs)
    out = json.loads(json.dumps(data))
    for dotted, value in overrides.items():
        node = out
        parts = dotted.split(".")
        for part in parts[:-1]:
            child = node.setdefault(part, {})
            if not isinstance(child, dict):
                raise ConfigError(f"cannot set '{dotted}': '{part}' is not a section")
            node = child
        node[parts[-1]] = value
    return out


def load_run_config(path: str | Path | None = None,
                    overrides: Mapping[str, Any] | Sequence[str] = (),
                    flags: Mapping[str, Any] | None = None) -> RunConfig:
    """File, then `--set` overrides, then explicit CLI flags (None means not given)."""
    data = _read_file(Path(path)) if path else {}
    data = apply_overrides(data, overrides)
    data = apply_overrides(data, {k: v for k, v in (flags or {}).items() if v is not None})
    try:
        return RunConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"])
        raise ConfigError(f"invalid config at '{where}': {first['msg']}") from exc
